//! Limited-memory BFGS for smooth unconstrained minimization.
//!
//! The objective returns `None` where it is not finite; the line search treats
//! such points as infinitely bad and backtracks.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop when one iteration changes the objective by less than this (absolute).
    pub f_tol: f64,
    /// Stop when the gradient max-norm falls below this.
    pub g_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            f_tol: 1e-8,
            g_tol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective value after each accepted iteration, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Evaluator<F> {
    f: F,
    count: usize,
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> Evaluator<F> {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.count += 1;
        (self.f)(x).filter(|(v, g)| v.is_finite() && g.iter().all(|c| c.is_finite()))
    }
}

struct LinePoint {
    step: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Strong-Wolfe line search (bracketing then zoom by safeguarded
/// interpolation). Returns `None` if no acceptable step was found.
fn line_search<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>>(
    eval: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    initial_step: f64,
) -> Option<LinePoint> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    const MAX_TRIES: usize = 60;

    let point_at = |eval: &mut Evaluator<F>, step: f64| -> Option<LinePoint> {
        let xs: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + step * d).collect();
        eval.eval(&xs).map(|(f, g)| LinePoint {
            step,
            f,
            slope: dot(&g, dir),
            x: xs,
            g,
        })
    };

    let mut lo = LinePoint {
        step: 0.0,
        f: f0,
        slope: slope0,
        x: x.to_vec(),
        g: Vec::new(),
    };
    let mut step = initial_step;
    let mut hi: Option<LinePoint> = None;
    let mut tries = 0;

    // bracketing phase
    while hi.is_none() {
        tries += 1;
        if tries > MAX_TRIES {
            return None;
        }
        match point_at(eval, step) {
            None => {
                // non-finite: shrink toward the last good point
                step = lo.step + 0.25 * (step - lo.step);
                continue;
            }
            Some(p) => {
                if p.f > f0 + C1 * p.step * slope0 || (lo.step > 0.0 && p.f >= lo.f) {
                    hi = Some(p);
                } else if p.slope.abs() <= -C2 * slope0 {
                    return Some(p);
                } else if p.slope >= 0.0 {
                    hi = Some(lo);
                    lo = p;
                } else {
                    step = 2.0 * p.step;
                    lo = p;
                }
            }
        }
    }

    // zoom phase
    let mut hi = hi.unwrap();
    while tries <= MAX_TRIES {
        tries += 1;
        let (a, b) = (lo.step, hi.step);
        let width = (b - a).abs();
        if width < 1e-16 * a.abs().max(1.0) {
            break;
        }
        // quadratic interpolation from lo's value and slope, safeguarded
        let denom = 2.0 * (hi.f - lo.f - lo.slope * (b - a));
        let mut trial = if denom > 0.0 {
            a - lo.slope * (b - a) * (b - a) / denom
        } else {
            0.5 * (a + b)
        };
        let (left, right) = (a.min(b), a.max(b));
        if !(trial > left + 0.1 * width && trial < right - 0.1 * width) {
            trial = 0.5 * (a + b);
        }
        match point_at(eval, trial) {
            None => {
                hi = LinePoint {
                    step: trial,
                    f: f64::INFINITY,
                    slope: 0.0,
                    x: Vec::new(),
                    g: Vec::new(),
                };
            }
            Some(p) => {
                if p.f > f0 + C1 * p.step * slope0 || p.f >= lo.f {
                    hi = p;
                } else {
                    if p.slope.abs() <= -C2 * slope0 {
                        return Some(p);
                    }
                    if p.slope * (hi.step - lo.step) >= 0.0 {
                        hi = lo;
                    }
                    lo = p;
                }
            }
        }
    }
    // accept a sufficient-decrease point even if curvature failed
    if lo.step > 0.0 && lo.f < f0 {
        Some(lo)
    } else {
        None
    }
}

/// Minimize `f` from `x0`. Returns `None` when `f(x0)` is not finite.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LbfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut eval = Evaluator { f, count: 0 };
    let (mut fx, mut g) = eval.eval(x0)?;
    let mut x = x0.to_vec();
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut trace = vec![fx];
    let mut converged = max_abs(&g) <= opts.g_tol;
    let mut iterations = 0;
    let mut restarted = false;

    while !converged && iterations < opts.max_iter {
        // two-loop recursion
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yv) in dir.iter_mut().zip(y) {
                *d -= a * yv;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let scale = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            for (d, sv) in dir.iter_mut().zip(s) {
                *d += (a - b) * sv;
            }
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let initial_step = if history.is_empty() {
            (1.0 / max_abs(&g)).min(1.0)
        } else {
            1.0
        };

        let Some(next) = line_search(&mut eval, &x, fx, slope, &dir, initial_step) else {
            if history.is_empty() || restarted {
                break;
            }
            history.clear();
            restarted = true;
            continue;
        };
        restarted = false;
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let change = fx - next.f;
        x = next.x;
        fx = next.f;
        g = next.g;
        trace.push(fx);
        debug_assert!(next.step > 0.0);
        converged = max_abs(&g) <= opts.g_tol || change.abs() <= opts.f_tol;
    }

    Some(Minimum {
        x,
        f: fx,
        grad: g,
        iterations,
        evaluations: eval.count,
        converged,
        trace,
    })
}
