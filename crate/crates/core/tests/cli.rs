use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mover-stayer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("structured error on stderr")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_fit_predict_bootstrap() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["simulate", "--setting", "s1", "--n", "400", "--seed", "5", "--out", "sim"]);
    for f in ["data.csv", "latent.csv", "occupancy.csv"] {
        let text = fs::read_to_string(dir.join("sim").join(f)).unwrap();
        assert!(text.starts_with("# mover-stayer "), "{f} lacks the version line");
        assert!(text.lines().nth(1).unwrap().starts_with("# config: {"));
    }
    let latent = fs::read_to_string(dir.join("sim/latent.csv")).unwrap();
    assert_eq!(latent.lines().filter(|l| !l.starts_with('#')).count(), 401);

    ok(dir, &["fit", "--data", "sim/data.csv", "--init-setting", "s1", "--out", "est.json"]);
    let est = read_json(&dir.join("est.json"));
    assert_eq!(est["model"], "dynamic");
    assert_eq!(est["theta"].as_array().unwrap().len(), 13);
    assert_eq!(est["theta_order"][0], "alpha[1]");
    assert_eq!(est["n_subjects"], 400);
    assert!(est["converged"].as_bool().unwrap());
    assert!(est["grad_max_norm"].as_f64().unwrap() / 400.0 < 1e-5);
    assert_eq!(est["config"]["fit"]["init"].as_array().unwrap().len(), 13);

    // restarting from the written estimates reproduces the optimum
    ok(dir, &["fit", "--data", "sim/data.csv", "--init", "est.json", "--out", "again.json"]);
    let again = read_json(&dir.join("again.json"));
    let (a, b) = (est["loglik"].as_f64().unwrap(), again["loglik"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");

    ok(dir, &["predict", "--data", "sim/data.csv", "--params", "est.json", "--times", "0..2", "--out", "p.csv"]);
    let pred = fs::read_to_string(dir.join("p.csv")).unwrap();
    let mut rows = pred.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(rows.next().unwrap(), "id,t,p_stayer,p_mover");
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let t: usize = cols[1].parse().unwrap();
        let (s, m): (f64, f64) = (cols[2].parse().unwrap(), cols[3].parse().unwrap());
        assert!(t <= 2);
        assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&m) && s + m <= 1.0 + 1e-12);
        if t == 0 {
            assert_eq!(m, 0.0);
        }
    }

    ok(dir, &["bootstrap", "--data", "sim/data.csv", "--params", "est.json", "--nboot", "4", "--seed", "1", "--out", "inf.json"]);
    let inf = read_json(&dir.join("inf.json"));
    assert_eq!(inf["method"], "bootstrap");
    assert_eq!(inf["n_boot"], 4);
    for (se, (lo, hi)) in inf["se"]
        .as_array()
        .unwrap()
        .iter()
        .zip(inf["ci_lower"].as_array().unwrap().iter().zip(inf["ci_upper"].as_array().unwrap()))
    {
        let (se, lo, hi) = (se.as_f64().unwrap(), lo.as_f64().unwrap(), hi.as_f64().unwrap());
        assert!(se > 0.0 && lo < hi);
        assert!((hi - lo - 2.0 * 1.96 * se).abs() < 1e-9);
    }
}

#[test]
fn comparators_fit_and_predict() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["simulate", "--setting", "s1", "--n", "300", "--seed", "8", "--out", "."]);
    for model in ["static", "nostayer"] {
        let est = format!("{model}.json");
        ok(dir, &["fit", "--data", "data.csv", "--model", model, "--degree", "1", "--out", &est]);
        let v = read_json(&dir.join(&est));
        assert_eq!(v["model"], model);
        assert_eq!(v["degree"], 1);
        let names: Vec<&str> = v["theta_order"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
        assert_eq!(names.len(), v["n_params"].as_u64().unwrap() as usize);
        assert!(names.last().unwrap().ends_with("[3]"), "{names:?}");
        ok(dir, &["predict", "--data", "data.csv", "--params", &est, "--out", "p.csv"]);
    }
    // bootstrap is defined for the dynamic model only
    let out = run(dir, &["bootstrap", "--data", "data.csv", "--params", "static.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn outputs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    for run_dir in ["a", "b"] {
        let d = dir.join(run_dir);
        fs::create_dir(&d).unwrap();
        ok(&d, &["simulate", "--setting", "s2", "--n", "300", "--seed", "11", "--out", "."]);
        ok(&d, &["fit", "--data", "data.csv", "--starts", "2", "--seed", "3", "--out", "est.json"]);
        ok(&d, &["study", "--setting", "s1", "--n", "150", "--nreps", "2", "--seed", "4", "--out", "study"]);
    }
    for f in [
        "data.csv",
        "latent.csv",
        "occupancy.csv",
        "est.json",
        "study/summary.csv",
        "study/estimates.csv",
        "study/mad.csv",
        "study/study.json",
    ] {
        let a = fs::read(dir.join("a").join(f)).unwrap();
        let b = fs::read(dir.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
}

#[test]
fn config_file_with_flag_override() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.json"), r#"{"setting": "s3", "n": 50, "seed": 9}"#).unwrap();
    ok(dir, &["simulate", "--config", "cfg.json", "--n", "30", "--out", "."]);
    let latent = fs::read_to_string(dir.join("latent.csv")).unwrap();
    assert_eq!(latent.lines().filter(|l| !l.starts_with('#')).count(), 31);
    let config_line = latent.lines().nth(1).unwrap();
    assert!(config_line.contains(r#""n":30"#) && config_line.contains(r#""seed":9"#) && config_line.contains(r#""k_max":10"#));

    fs::write(dir.join("bad.json"), r#"{"setting": "s1", "nn": 3}"#).unwrap();
    let out = run(dir, &["simulate", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn single_subject_file() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("one.csv"),
        "id,t,y,delta,x_1,z_1\nA,0,2,1,0.3,1.5\nA,1,2,1,0.3,-0.2\nA,2,2,1,0.3,0.7\n",
    )
    .unwrap();
    let out = run(dir, &["fit", "--data", "one.csv", "--out", "one.json"]);
    let code = out.status.code().unwrap();
    // one mover cannot identify the model: either a flagged fit or a numerical failure
    if code == 0 {
        let v = read_json(&dir.join("one.json"));
        assert_eq!(v["n_subjects"], 1);
        assert!(v["separation_flags"].as_array().unwrap().iter().any(|f| f.as_bool().unwrap()));
    } else {
        assert_eq!(code, 3, "{}", String::from_utf8_lossy(&out.stderr));
    }
    fs::write(dir.join("p.json"), r#"{"theta": [0,0,0,0,0,0,0,0,0,0]}"#).unwrap();
    let out = run(dir, &["fit", "--data", "one.csv", "--init", "p.json", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1), "wrong init length is a usage error");
}

#[test]
fn ingest_errors_exit_2_with_line() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let cases = [
        ("id,t,y,delta,x_1,z_1\n1,0,1,1,0.5,0.2\n1,1,1,1,0.5,abc\n", 3),
        ("id,t,y,delta,x_1,z_1\n1,0,1,2,0.5,0.2\n", 2),
        ("id,t,y,delta,x_1,z_1\n1,0,2,1,0.5,0.2\n1,2,2,1,0.5,0.2\n", 3),
        ("id,t,y,delta,x_1,z_1\n1,0,1,1,0.5,0.2\n1,1,1,1,0.7,0.2\n", 3),
        ("id,t,y,delta,x_1,z_1\n1,0,1,1,0.5,0.2\n1,1,1,1,0.5\n", 3),
        ("id,t,y,delta,x_1,z_1\n1,0,0,1,0.5,inf\n", 2),
    ];
    let mut messages = Vec::new();
    for (i, (text, line)) in cases.iter().enumerate() {
        let name = format!("bad{i}.csv");
        fs::write(dir.join(&name), text).unwrap();
        let out = run(dir, &["fit", "--data", &name]);
        assert_eq!(out.status.code(), Some(2), "case {i}");
        let err = stderr_json(&out);
        assert_eq!(err["error"]["kind"], "data_validation");
        assert_eq!(err["error"]["exit_code"], 2);
        assert_eq!(err["error"]["line"], *line, "case {i}: {err}");
        messages.push(err["error"]["message"].as_str().unwrap().to_string());
    }
    messages.sort();
    messages.dedup();
    assert_eq!(messages.len(), cases.len());
    assert!(!dir.join("estimates.json").exists());
}

#[test]
fn usage_and_io_errors() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_eq!(run(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(run(dir, &["--version"]).status.code(), Some(0));
    let out = run(dir, &["fit", "--nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    let out = run(dir, &["simulate", "--n", "10"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir, &["fit", "--data", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "io");
    let out = run(dir, &["predict", "--data", "missing.csv", "--params", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
}
