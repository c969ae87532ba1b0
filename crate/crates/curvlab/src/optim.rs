//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! The caller supplies the variable space; the elastic-energy module runs
//! this in preconditioned coordinates where the Hessian is close to a
//! multiple of the identity, so plain backtracking is reliable and the
//! iteration count stays small. Deterministic: no randomness, fixed
//! reduction orders.

use std::collections::VecDeque;

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    /// Convergence metric (the caller's gradient norm) at the final point.
    /// The caller compares it against its tolerance.
    pub metric: f64,
    pub iterations: usize,
}

const MEMORY: usize = 12;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Absolute acceptance slack: near the minimum the true decrease per step
/// falls below the floating-point resolution of the objective, so the
/// sufficient-decrease test carries a noise allowance (the gradient norm,
/// not the objective, certifies convergence).
const NOISE_SLACK: f64 = 1e-15;

/// Minimizes `eval`, which fills the gradient in its second argument and
/// returns `(value, convergence_metric)`. Stops when the metric drops to
/// `tol`, the iteration budget is exhausted, or the line search stalls at
/// floating-point resolution.
pub(crate) fn lbfgs<F>(x0: &[f64], mut eval: F, tol: f64, max_iters: usize) -> Outcome
where
    F: FnMut(&[f64], &mut [f64]) -> (f64, f64),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let (mut value, mut metric) = eval(&x, &mut grad);

    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rho_hist: VecDeque<f64> = VecDeque::new();

    let mut best_x = x.clone();
    let mut best_value = value;
    let mut best_metric = metric;

    let trace = std::env::var_os("CURVLAB_OPT_TRACE").is_some();
    let mut iterations = 0;
    while iterations < max_iters {
        if metric <= tol {
            return Outcome {
                x,
                value,
                metric,
                iterations,
            };
        }

        // Two-loop recursion for the quasi-Newton direction.
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for k in (0..s_hist.len()).rev() {
            let a = rho_hist[k] * dot(&s_hist[k], &d);
            axpy(-a, &y_hist[k], &mut d);
            alphas.push(a);
        }
        if let (Some(s), Some(y)) = (s_hist.back(), y_hist.back()) {
            let gamma = dot(s, y) / dot(y, y);
            if gamma.is_finite() && gamma > 0.0 {
                d.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for k in 0..s_hist.len() {
            let b = rho_hist[k] * dot(&y_hist[k], &d);
            let a = alphas[s_hist.len() - 1 - k];
            axpy(a - b, &s_hist[k], &mut d);
        }

        let mut slope = dot(&grad, &d);
        if !(slope < 0.0) {
            // Not a descent direction; fall back to steepest descent.
            d = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &d);
            if !(slope < 0.0) {
                break; // zero gradient at floating resolution
            }
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Backtracking Armijo search.
        if trace {
            eprintln!(
                "lbfgs iter {iterations}: f={value:.6e} metric={metric:.3e} slope={slope:.3e} |d|={:.3e}",
                d.iter().fold(0.0f64, |a, v| a.max(v.abs()))
            );
        }
        let mut alpha = 1.0;
        let mut trial = vec![0.0; n];
        let mut trial_grad = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = x[i] + alpha * d[i];
            }
            let (f_trial, m_trial) = eval(&trial, &mut trial_grad);
            if f_trial <= value + ARMIJO_C1 * alpha * slope + NOISE_SLACK * (1.0 + value.abs()) {
                let mut s = vec![0.0; n];
                let mut y = vec![0.0; n];
                for i in 0..n {
                    s[i] = trial[i] - x[i];
                    y[i] = trial_grad[i] - grad[i];
                }
                let ys = dot(&y, &s);
                if ys > 1e-12 * norm2(&y) * norm2(&s) {
                    if s_hist.len() == MEMORY {
                        s_hist.pop_front();
                        y_hist.pop_front();
                        rho_hist.pop_front();
                    }
                    s_hist.push_back(s);
                    y_hist.push_back(y);
                    rho_hist.push_back(1.0 / ys);
                }
                x.copy_from_slice(&trial);
                grad.copy_from_slice(&trial_grad);
                value = f_trial;
                metric = m_trial;
                accepted = true;
                if value < best_value || (value == best_value && metric < best_metric) {
                    best_x.copy_from_slice(&x);
                    best_value = value;
                    best_metric = metric;
                }
                break;
            }
            if trace {
                eprintln!(
                    "  reject alpha={alpha:.3e}: f_trial-f={:+.6e}",
                    f_trial - value
                );
            }
            alpha *= 0.5;
        }
        if !accepted {
            break; // stalled at floating-point resolution
        }
        iterations += 1;
    }

    if metric <= tol {
        return Outcome {
            x,
            value,
            metric,
            iterations,
        };
    }
    Outcome {
        x: best_x,
        value: best_value,
        metric: best_metric,
        iterations,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_shifted_quadratic() {
        // f(x) = Σ (i+1)(x_i − i)².
        let eval = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            let mut gmax: f64 = 0.0;
            for i in 0..x.len() {
                let w = (i + 1) as f64;
                let d = x[i] - i as f64;
                f += w * d * d;
                g[i] = 2.0 * w * d;
                gmax = gmax.max(g[i].abs());
            }
            (f, gmax)
        };
        let out = lbfgs(&vec![0.0; 6], eval, 1e-12, 200);
        assert!(out.metric <= 1e-12, "metric {}", out.metric);
        for (i, v) in out.x.iter().enumerate() {
            assert!((v - i as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let eval = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (1.0, 100.0);
            let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            g[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 2.0 * b * (x[1] - x[0] * x[0]);
            (f, g.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        };
        let out = lbfgs(&[-1.2, 1.0], eval, 1e-10, 1000);
        assert!(out.metric <= 1e-10);
        assert!((out.x[0] - 1.0).abs() < 1e-7);
        assert!((out.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn already_converged_returns_immediately() {
        let eval = |x: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            (x.iter().map(|v| v * v).sum(), 0.0)
        };
        let out = lbfgs(&[0.0, 0.0], eval, 1e-12, 100);
        assert!(out.metric <= 1e-12);
        assert_eq!(out.iterations, 0);
    }
}
