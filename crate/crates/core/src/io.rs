//! Long-format panel CSV.
//!
//! One row per subject and time: `id,t,y,delta,x_1..x_d,z_1..z_q`. Lines
//! starting with `#` are comments. A subject's rows must be consecutive and
//! cover `t = 0 ..= y`; `y`, `delta` and the `x` columns repeat on every row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{PanelDataset, Subject};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("cannot read input: {0}")]
    Io(String),

    #[error("line {line}: bad header: {message}")]
    Header { line: u64, message: String },

    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },

    #[error("line {line}: column '{column}' has unparsable value '{value}'")]
    Parse { line: u64, column: String, value: String },

    #[error("line {line}: column '{column}' is not finite")]
    NonFinite { line: u64, column: String },

    #[error("line {line}: delta must be 0 or 1, found '{value}'")]
    NonBinaryDelta { line: u64, value: String },

    #[error("line {line}: subject '{id}' expected t = {expected}, found t = {found}")]
    MissingTime { line: u64, id: String, expected: usize, found: usize },

    #[error("line {line}: subject '{id}' has rows up to t = {last}, but y = {y}")]
    Incomplete { line: u64, id: String, y: usize, last: usize },

    #[error("line {line}: subject '{id}' changes fixed covariate '{column}'")]
    InconsistentFixed { line: u64, id: String, column: String },

    #[error("line {line}: subject '{id}' changes '{column}' between rows")]
    InconsistentOutcome { line: u64, id: String, column: String },

    #[error("line {line}: subject '{id}' appears again after other subjects")]
    Interleaved { line: u64, id: String },

    #[error("no data rows")]
    Empty,
}

impl IngestError {
    pub fn line(&self) -> Option<u64> {
        match self {
            IngestError::Header { line, .. }
            | IngestError::Ragged { line, .. }
            | IngestError::Parse { line, .. }
            | IngestError::NonFinite { line, .. }
            | IngestError::NonBinaryDelta { line, .. }
            | IngestError::MissingTime { line, .. }
            | IngestError::Incomplete { line, .. }
            | IngestError::InconsistentFixed { line, .. }
            | IngestError::InconsistentOutcome { line, .. }
            | IngestError::Interleaved { line, .. } => Some(*line),
            IngestError::Io(_) | IngestError::Empty => None,
        }
    }
}

/// Subject identifiers (in file order) and the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub ids: Vec<String>,
    pub data: PanelDataset,
}

/// Write `data` with one `# ` comment line per entry of `comments`.
pub fn write_panel_csv<W: Write>(
    mut out: W,
    ids: &[String],
    data: &PanelDataset,
    comments: &[String],
) -> std::io::Result<()> {
    assert_eq!(ids.len(), data.len(), "one id per subject");
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "t".into(), "y".into(), "delta".into()];
    header.extend((1..=data.d).map(|k| format!("x_{k}")));
    header.extend((1..=data.q).map(|k| format!("z_{k}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (id, s) in ids.iter().zip(&data.subjects) {
        for (t, z) in s.z.iter().enumerate() {
            row.clear();
            row.push(id.clone());
            row.push(t.to_string());
            row.push(s.y.to_string());
            row.push(u8::from(s.delta).to_string());
            row.extend(s.x.iter().map(f64::to_string));
            row.extend(z.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()
}

struct Pending {
    id: String,
    y: usize,
    delta: bool,
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    last_line: u64,
}

fn finish(p: Pending) -> Result<(String, Subject), IngestError> {
    if p.z.len() != p.y + 1 {
        return Err(IngestError::Incomplete {
            line: p.last_line,
            id: p.id,
            y: p.y,
            last: p.z.len() - 1,
        });
    }
    let subject = Subject::new(p.y, p.delta, p.x, p.z).map_err(|e| IngestError::Header {
        line: p.last_line,
        message: e.to_string(),
    })?;
    Ok((p.id, subject))
}

fn parse_columns(header: &csv::StringRecord, line: u64) -> Result<(usize, usize), IngestError> {
    let bad = |message: String| IngestError::Header { line, message };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 4 || cols[..4] != ["id", "t", "y", "delta"] {
        return Err(bad("must start with id,t,y,delta".into()));
    }
    let d = cols[4..].iter().take_while(|c| c.starts_with("x_")).count();
    for (k, c) in cols[4..4 + d].iter().enumerate() {
        if *c != format!("x_{}", k + 1) {
            return Err(bad(format!("expected x_{}, found {c}", k + 1)));
        }
    }
    for (k, c) in cols[4 + d..].iter().enumerate() {
        if *c != format!("z_{}", k + 1) {
            return Err(bad(format!("expected z_{}, found {c}", k + 1)));
        }
    }
    Ok((d, cols.len() - 4 - d))
}

/// Parse and validate a long-format panel.
pub fn read_panel_csv<R: Read>(input: R) -> Result<Panel, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(false)
        .from_reader(input);
    let mut records = reader.records();
    let io = |e: csv::Error| IngestError::Io(e.to_string());

    let header = records.next().ok_or(IngestError::Empty)?.map_err(io)?;
    let header_line = header.position().map_or(1, |p| p.line());
    let (d, q) = parse_columns(&header, header_line)?;
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let width = names.len();

    let mut ids = Vec::new();
    let mut subjects = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut pending: Option<Pending> = None;

    for rec in records {
        let rec = rec.map_err(io)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(IngestError::Ragged {
                line,
                expected: width,
                found: rec.len(),
            });
        }
        let field = |k: usize| rec[k].trim();
        let int = |k: usize| {
            field(k).parse::<usize>().map_err(|_| IngestError::Parse {
                line,
                column: names[k].clone(),
                value: field(k).to_string(),
            })
        };
        let real = |k: usize| {
            let v = field(k).parse::<f64>().map_err(|_| IngestError::Parse {
                line,
                column: names[k].clone(),
                value: field(k).to_string(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(IngestError::NonFinite {
                    line,
                    column: names[k].clone(),
                })
            }
        };
        let id = field(0).to_string();
        let t = int(1)?;
        let y = int(2)?;
        let delta = match field(3) {
            "0" => false,
            "1" => true,
            other => {
                return Err(IngestError::NonBinaryDelta {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let x = (4..4 + d).map(real).collect::<Result<Vec<_>, _>>()?;
        let z = (4 + d..width).map(real).collect::<Result<Vec<_>, _>>()?;

        match pending.as_mut() {
            Some(p) if p.id == id => {
                if p.y != y {
                    return Err(IngestError::InconsistentOutcome {
                        line,
                        id,
                        column: "y".into(),
                    });
                }
                if p.delta != delta {
                    return Err(IngestError::InconsistentOutcome {
                        line,
                        id,
                        column: "delta".into(),
                    });
                }
                if let Some(k) = (0..d).find(|&k| p.x[k].to_bits() != x[k].to_bits()) {
                    return Err(IngestError::InconsistentFixed {
                        line,
                        id,
                        column: names[4 + k].clone(),
                    });
                }
                if t != p.z.len() || t > y {
                    return Err(IngestError::MissingTime {
                        line,
                        id,
                        expected: p.z.len(),
                        found: t,
                    });
                }
                p.z.push(z);
                p.last_line = line;
            }
            _ => {
                if let Some(done) = pending.take() {
                    let (i, s) = finish(done)?;
                    ids.push(i);
                    subjects.push(s);
                }
                if !seen.insert(id.clone()) {
                    return Err(IngestError::Interleaved { line, id });
                }
                if t != 0 || y < t {
                    return Err(IngestError::MissingTime {
                        line,
                        id,
                        expected: 0,
                        found: t,
                    });
                }
                pending = Some(Pending {
                    id,
                    y,
                    delta,
                    x,
                    z: vec![z],
                    last_line: line,
                });
            }
        }
    }
    if let Some(done) = pending.take() {
        let (i, s) = finish(done)?;
        ids.push(i);
        subjects.push(s);
    }
    if subjects.is_empty() {
        return Err(IngestError::Empty);
    }
    let data = PanelDataset::new(d, q, subjects).map_err(|e| IngestError::Header {
        line: header_line,
        message: e.to_string(),
    })?;
    Ok(Panel { ids, data })
}

pub fn read_panel_file(path: &Path) -> Result<Panel, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    read_panel_csv(std::io::BufReader::new(file))
}
