//! Limited-memory BFGS with a weak-Wolfe bracketing line search.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the relative decrease stays below this for `patience`
    /// consecutive iterations.
    pub rel_tol: f64,
    pub patience: usize,
    /// Stop once the largest gradient entry is below this.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iters: 200, rel_tol: 1e-6, patience: 3, grad_tol: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Objective after each accepted iteration, starting with the initial
    /// value.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

const ARMIJO: f64 = 1e-4;
const CURVATURE: f64 = 0.9;

/// Minimizes `f`, which returns the value and gradient. Evaluation errors
/// and non-finite values inside the line search are treated as `+∞`.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let (mut fx, mut gx) = f(&x0)?;
    if !fx.is_finite() || gx.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter("objective is not finite at the starting point".into()));
    }
    let mut x = x0;
    let mut evaluations = 1;
    let mut trace = vec![fx];
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut quiet = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if gx.amax() <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = -two_loop(&gx, &history);
        let mut slope = gx.dot(&dir);
        if !(slope < 0.0) {
            history.clear();
            dir = -gx.clone();
            slope = gx.dot(&dir);
        }
        let t0 = if history.is_empty() { (1.0 / gx.norm()).min(1.0) } else { 1.0 };
        let Some((t, fnew, gnew, used)) = line_search(&mut f, &x, fx, slope, &dir, t0) else {
            if !history.is_empty() {
                // retry once from steepest descent
                history.clear();
                continue;
            }
            break;
        };
        evaluations += used;
        let s = &dir * t;
        let y = &gnew - &gx;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        x += s;
        let decrease = fx - fnew;
        fx = fnew;
        gx = gnew;
        trace.push(fx);
        if decrease <= opts.rel_tol * fx.abs().max(1.0) {
            quiet += 1;
            if quiet >= opts.patience {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    if !converged && gx.amax() <= opts.grad_tol {
        converged = true;
    }
    Ok(LbfgsOutcome { x, value: fx, gradient: gx, trace, converged, iterations, evaluations })
}

fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}

#[allow(clippy::type_complexity)]
fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    fx: f64,
    slope: f64,
    dir: &DVector<f64>,
    t0: f64,
) -> Option<(f64, f64, DVector<f64>, usize)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut t = t0;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    let mut used = 0;
    for _ in 0..60 {
        used += 1;
        let trial = x + dir * t;
        match f(&trial) {
            Ok((ft, gt)) if ft.is_finite() && gt.iter().all(|v| v.is_finite()) => {
                if ft > fx + ARMIJO * t * slope {
                    hi = t;
                } else {
                    let dslope = gt.dot(dir);
                    if best.as_ref().is_none_or(|b| ft < b.1) {
                        best = Some((t, ft, gt));
                    }
                    if dslope < CURVATURE * slope {
                        lo = t;
                    } else {
                        let (t, ft, gt) = best.take().expect("just stored");
                        return Some((t, ft, gt, used));
                    }
                }
            }
            _ => hi = t,
        }
        t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo.max(t) };
        if hi.is_finite() && (hi - lo) < 1e-16 * hi.max(1.0) {
            break;
        }
    }
    best.map(|(t, ft, gt)| (t, ft, gt, used))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            Ok((v, g))
        };
        let opts = LbfgsOptions { max_iters: 500, rel_tol: 0.0, grad_tol: 1e-10, ..Default::default() };
        let out = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{}", out.x);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn treats_errors_as_infeasible() {
        // minimum of (x-2)^2 but the objective refuses x > 1.5
        let f = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            if x[0] > 1.5 {
                return Err(Error::InvalidParameter("outside".into()));
            }
            Ok(((x[0] - 2.0).powi(2), DVector::from_vec(vec![2.0 * (x[0] - 2.0)])))
        };
        let opts = LbfgsOptions { max_iters: 50, ..Default::default() };
        let out = minimize(f, DVector::from_vec(vec![0.0]), &opts).unwrap();
        assert!(out.x[0] <= 1.5 && out.x[0] > 1.4);
    }
}
