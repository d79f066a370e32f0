//! Limited-memory BFGS with an orthant-wise variant for L1 penalties.
//!
//! The driver minimizes `f(x) + c1 * |x|_1` where `f` is smooth. With
//! `c1 = 0` it runs plain L-BFGS under a Moré–Thuente line search; with
//! `c1 > 0` it runs OWL-QN with a projected backtracking search.

mod line_search;

pub use line_search::LineSearchError;

use line_search::{backtracking_owlqn, more_thuente, Trial};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A smooth function: writes the gradient at `x` into `g` and returns the value.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn evaluate(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        self(x, g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsParams {
    /// Number of correction pairs kept.
    pub memory: usize,
    /// Stop when `|g| / max(|x|, 1) <= epsilon`.
    pub epsilon: f64,
    /// Window for the relative-improvement test; 0 disables it.
    pub past: usize,
    pub delta: f64,
    /// 0 means unlimited.
    pub max_iterations: usize,
    pub max_linesearch: usize,
    pub min_step: f64,
    pub max_step: f64,
    pub ftol: f64,
    pub gtol: f64,
    pub xtol: f64,
    /// L1 coefficient. Positive values switch to the orthant-wise method.
    pub l1: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 6,
            epsilon: 1e-5,
            past: 10,
            delta: 1e-5,
            max_iterations: 100,
            max_linesearch: 20,
            min_step: 1e-20,
            max_step: 1e20,
            ftol: 1e-4,
            gtol: 0.9,
            xtol: 1e-16,
            l1: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum Termination {
    /// The starting point already satisfied the gradient test.
    AlreadyMinimized,
    /// Gradient test satisfied.
    Converged,
    /// Relative improvement over the last `past` iterations fell below `delta`.
    Stalled,
    MaxIterations,
    /// The line search failed; the returned point is the last accepted iterate.
    LineSearchFailed(LineSearchError),
}

impl Termination {
    /// Whether the result should be reported as a warning rather than success.
    pub fn is_warning(&self) -> bool {
        matches!(self, Self::LineSearchFailed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    /// `f(x) + l1 * |x|_1` at the returned point.
    pub value: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective after each accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn l1_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Steepest-descent direction of `f + c|x|_1` (negated).
fn pseudo_gradient(pg: &mut [f64], x: &[f64], g: &[f64], c: f64) {
    for i in 0..x.len() {
        pg[i] = if x[i] < 0.0 {
            g[i] - c
        } else if x[i] > 0.0 {
            g[i] + c
        } else if g[i] + c < 0.0 {
            g[i] + c
        } else if g[i] - c > 0.0 {
            g[i] - c
        } else {
            0.0
        };
    }
}

struct Counting<'a> {
    inner: &'a mut dyn Objective,
    calls: usize,
}

impl Objective for Counting<'_> {
    fn evaluate(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        self.calls += 1;
        let v = self.inner.evaluate(x, g)?;
        if !v.is_finite() {
            return Err(Error::Numerical("objective".into()));
        }
        Ok(v)
    }
}

/// Minimizes `f(x) + params.l1 * |x|_1` starting from `x0`.
pub fn minimize(f: &mut dyn Objective, x0: Vec<f64>, params: &LbfgsParams) -> Result<Minimum> {
    if params.memory == 0 {
        return Err(Error::config("memory", "must be positive"));
    }
    if !(params.l1 >= 0.0) {
        return Err(Error::config("l1", "must be non-negative"));
    }
    let n = x0.len();
    let c1 = params.l1;
    let owlqn = c1 > 0.0;
    let mut obj = Counting { inner: f, calls: 0 };

    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = obj.evaluate(&x, &mut g)?;
    let mut pg = vec![0.0; n];
    if owlqn {
        fx += c1 * l1_norm(&x);
        pseudo_gradient(&mut pg, &x, &g, c1);
    }
    let mut history = vec![fx];
    let mut pf = vec![0.0; params.past.max(1)];
    pf[0] = fx;

    let steepest = |g: &[f64], pg: &[f64]| -> Vec<f64> {
        if owlqn { pg } else { g }.iter().map(|v| -v).collect()
    };
    let mut d = steepest(&g, &pg);

    let gnorm = norm(if owlqn { &pg } else { &g });
    if gnorm / norm(&x).max(1.0) <= params.epsilon {
        return Ok(Minimum {
            x,
            value: fx,
            termination: Termination::AlreadyMinimized,
            iterations: 0,
            evaluations: obj.calls,
            history,
        });
    }

    let mem = params.memory;
    let mut s_hist = vec![vec![0.0; n]; mem];
    let mut y_hist = vec![vec![0.0; n]; mem];
    let mut ys_hist = vec![0.0; mem];
    let mut alpha = vec![0.0; mem];
    let mut end = 0usize;
    let mut k = 1usize;
    let mut step = 1.0 / norm(&d);
    let mut xp = vec![0.0; n];
    let mut gp = vec![0.0; n];
    let mut orthant = vec![0.0; n];

    let termination = loop {
        xp.copy_from_slice(&x);
        gp.copy_from_slice(&g);
        let fprev = fx;

        let ls = if owlqn {
            for i in 0..n {
                orthant[i] = if xp[i] == 0.0 { -pg[i] } else { xp[i] };
            }
            let r = backtracking_owlqn(
                &mut obj,
                Trial { x: &mut x, fx: &mut fx, g: &mut g, xp: &xp },
                &d,
                &mut step,
                &pg,
                &orthant,
                c1,
                params,
            )?;
            pseudo_gradient(&mut pg, &x, &g, c1);
            r
        } else {
            more_thuente(
                &mut obj,
                Trial { x: &mut x, fx: &mut fx, g: &mut g, xp: &xp },
                &d,
                &mut step,
                params,
            )?
        };
        if let Err(e) = ls {
            x.copy_from_slice(&xp);
            g.copy_from_slice(&gp);
            fx = fprev;
            break Termination::LineSearchFailed(e);
        }
        history.push(fx);

        let xnorm = norm(&x);
        let gnorm = norm(if owlqn { &pg } else { &g });
        if gnorm / xnorm.max(1.0) <= params.epsilon {
            break Termination::Converged;
        }
        if params.past > 0 {
            if params.past <= k {
                let rate = (pf[k % params.past] - fx) / fx;
                if rate.abs() < params.delta {
                    break Termination::Stalled;
                }
            }
            pf[k % params.past] = fx;
        }
        if params.max_iterations != 0 && params.max_iterations < k + 1 {
            break Termination::MaxIterations;
        }

        // New correction pair.
        for i in 0..n {
            s_hist[end][i] = x[i] - xp[i];
            y_hist[end][i] = g[i] - gp[i];
        }
        let ys = dot(&y_hist[end], &s_hist[end]);
        let yy = dot(&y_hist[end], &y_hist[end]);
        ys_hist[end] = ys;

        let bound = mem.min(k);
        k += 1;
        end = (end + 1) % mem;

        d = steepest(&g, &pg);
        let mut j = end;
        for _ in 0..bound {
            j = (j + mem - 1) % mem;
            alpha[j] = dot(&s_hist[j], &d) / ys_hist[j];
            for (di, yi) in d.iter_mut().zip(&y_hist[j]) {
                *di -= alpha[j] * yi;
            }
        }
        let scale = ys / yy;
        for di in d.iter_mut() {
            *di *= scale;
        }
        for _ in 0..bound {
            let beta = dot(&y_hist[j], &d) / ys_hist[j];
            for (di, si) in d.iter_mut().zip(&s_hist[j]) {
                *di += (alpha[j] - beta) * si;
            }
            j = (j + 1) % mem;
        }
        if owlqn {
            for (di, pgi) in d.iter_mut().zip(&pg) {
                if *di * pgi >= 0.0 {
                    *di = 0.0;
                }
            }
        }
        step = 1.0;
    };

    Ok(Minimum {
        iterations: history.len() - 1,
        value: fx,
        x,
        termination,
        evaluations: obj.calls,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> Result<f64> {
        let mut f = 0.0;
        g.fill(0.0);
        for i in (0..x.len()).step_by(2) {
            let t1 = 1.0 - x[i];
            let t2 = 10.0 * (x[i + 1] - x[i] * x[i]);
            g[i + 1] = 20.0 * t2;
            g[i] = -2.0 * (x[i] * g[i + 1] + t1);
            f += t1 * t1 + t2 * t2;
        }
        Ok(f)
    }

    #[test]
    fn solves_rosenbrock() {
        let x0: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect();
        let p = LbfgsParams { max_iterations: 0, past: 0, ..Default::default() };
        let r = minimize(&mut rosenbrock, x0, &p).unwrap();
        assert_eq!(r.termination, Termination::Converged);
        for v in &r.x {
            assert!((v - 1.0).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn history_is_monotone() {
        let x0 = vec![-1.2, 1.0, -1.2, 1.0];
        let r = minimize(&mut rosenbrock, x0, &LbfgsParams::default()).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn l1_soft_thresholds() {
        // 0.5 (x - a)^2 + c |x| has minimizer sign(a) max(|a| - c, 0).
        let a = [3.0, -2.0, 0.5, -0.2];
        let c = 1.0;
        let mut f = |x: &[f64], g: &mut [f64]| -> Result<f64> {
            let mut v = 0.0;
            for i in 0..x.len() {
                g[i] = x[i] - a[i];
                v += 0.5 * (x[i] - a[i]).powi(2);
            }
            Ok(v)
        };
        let p = LbfgsParams { l1: c, ..Default::default() };
        let r = minimize(&mut f, vec![0.0; 4], &p).unwrap();
        let expect = [2.0, -1.0, 0.0, 0.0];
        for (x, e) in r.x.iter().zip(expect) {
            assert!((x - e).abs() < 1e-4, "{x} vs {e}");
        }
        assert!(!r.termination.is_warning());
    }

    #[test]
    fn already_minimized() {
        let mut f = |x: &[f64], g: &mut [f64]| -> Result<f64> {
            g.copy_from_slice(x);
            Ok(0.5 * dot(x, x))
        };
        let r = minimize(&mut f, vec![0.0; 3], &LbfgsParams::default()).unwrap();
        assert_eq!(r.termination, Termination::AlreadyMinimized);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut f = |_: &[f64], _: &mut [f64]| -> Result<f64> { Ok(f64::NAN) };
        assert!(minimize(&mut f, vec![1.0], &LbfgsParams::default()).is_err());
    }

    #[test]
    fn termination_serializes() {
        let t = Termination::LineSearchFailed(LineSearchError::MaximumTrials);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Termination>(&s).unwrap(), t);
    }
}
