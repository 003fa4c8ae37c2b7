//! Box-constrained minimization by projected limited-memory BFGS.
//!
//! Variables at a bound whose gradient points outward are held fixed; the
//! remaining free variables take an L-BFGS direction, and the step is
//! accepted by Armijo backtracking along the projection arc. Every accepted
//! iterate lowers the objective, so the result is never worse than the start.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Stop when `‖P(x - g) - x‖∞ ≤ grad_tol`.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for BoxOptions {
    fn default() -> Self {
        BoxOptions {
            max_iter: 100,
            grad_tol: 1e-6,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_initial: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Infinity norm of the projected gradient step at `x`.
    pub pg_norm: f64,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

/// Minimizes `f` over `lo ≤ x ≤ hi`. `fg(x, g)` returns `f(x)` and writes the gradient.
pub fn minimize_box<F>(mut fg: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BoxOptions) -> BoxResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n, "bound length mismatch");
    let project = |v: &mut [f64]| {
        for i in 0..n {
            v[i] = v[i].clamp(lo[i], hi[i]);
        }
    };

    let mut x = x0.to_vec();
    project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let f_initial = f;
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut pg_norm = projected_gradient_norm(&x, &g, lo, hi);

    while iterations < opts.max_iter {
        if pg_norm <= opts.grad_tol {
            converged = true;
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();

        let mut d = lbfgs_direction(&g, &free, &pairs);
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            pairs.clear();
            d = lbfgs_direction(&g, &free, &pairs);
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                xn[i] = x[i] + step * d[i];
            }
            project(&mut xn);
            let fnew = fg(&xn, &mut gn);
            evaluations += 1;
            let decrease: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
            if fnew <= f + ARMIJO * decrease && fnew <= f {
                accepted = Some(fnew);
                break;
            }
            step *= 0.5;
        }
        let Some(fnew) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };

        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let stalled = f - fnew <= 1e-15 * f.abs();
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fnew;
        iterations += 1;
        pg_norm = projected_gradient_norm(&x, &g, lo, hi);
        if stalled {
            converged = pg_norm <= opts.grad_tol;
            break;
        }
    }

    BoxResult {
        x,
        f,
        f_initial,
        iterations,
        evaluations,
        pg_norm,
        converged,
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| ((xi - gi).clamp(l, h) - xi).abs())
        .fold(0.0, f64::max)
}

/// Two-loop recursion restricted to the free variables.
fn lbfgs_direction(g: &[f64], free: &[bool], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(free)
            .map(|(&a, &f)| if f { a } else { 0.0 })
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(free)
            .map(|((x, y), &f)| if f { x * y } else { 0.0 })
            .sum()
    };
    let mut q = mask(g);
    if pairs.is_empty() {
        let gmax = q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax > 0.0 {
            q.iter_mut().for_each(|v| *v = -*v / gmax);
        }
        return q;
    }
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for i in 0..q.len() {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    let (s, y, _) = pairs.back().expect("nonempty");
    let yy = dot(y, y);
    let scale = if yy > 0.0 { dot(s, y) / yy } else { 1.0 };
    let scale = if scale > 0.0 { scale } else { 1.0 };
    q.iter_mut().for_each(|v| *v *= scale);
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for i in 0..q.len() {
            if free[i] {
                q[i] += (a - b) * s[i];
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
