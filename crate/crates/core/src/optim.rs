//! Quasi-Newton minimisation with analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    /// Convergence when the scaled gradient infinity-norm falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// A stalled line search still counts as converged below this scaled
    /// gradient norm (floating-point noise near the optimum).
    pub stall_tol: f64,
    /// Any coordinate leaving `[-bound, bound]` flags quasi-separation.
    pub separation_bound: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 500,
            stall_tol: 1e-6,
            separation_bound: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub quasi_separation: bool,
    /// Objective value after every accepted step, starting at `x0`.
    pub trace: Vec<f64>,
}

/// `max_i |g_i| max(1, |x_i|) / max(1, |f|)`.
pub fn scaled_gradient_norm(x: &[f64], f: f64, g: &[f64]) -> f64 {
    let fs = f.abs().max(1.0);
    x.iter()
        .zip(g)
        .map(|(xi, gi)| gi.abs() * xi.abs().max(1.0) / fs)
        .fold(0.0, f64::max)
}

/// BFGS on the inverse Hessian with a monotone Armijo backtracking search.
///
/// `objective` returns the value and gradient. Non-finite values are treated
/// as a failed trial step.
pub fn minimize<F>(mut objective: F, x0: &[f64], opts: &OptimOptions) -> OptimOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective(&x);
    let mut trace = vec![f];
    let mut quasi_separation = x.iter().any(|v| v.abs() > opts.separation_bound);
    if n == 0 {
        return OptimOutcome {
            x,
            value: f,
            gradient: g,
            iterations: 0,
            converged: true,
            quasi_separation,
            trace,
        };
    }

    let mut h = identity(n, 1.0 / (1.0 + inf_norm(&g)));
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = scaled_gradient_norm(&x, f, &g) <= opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        let mut d = mat_vec(&h, &g);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity(n, 1.0 / (1.0 + inf_norm(&g)));
            fresh = true;
            d = g.iter().map(|v| -v * h[0][0]).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (ft, gt) = objective(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }

        let Some((xn, fnew, gn)) = accepted else {
            if !fresh {
                // retry once from a scaled identity before giving up
                h = identity(n, 1.0 / (1.0 + inf_norm(&g)));
                fresh = true;
                continue;
            }
            converged = scaled_gradient_norm(&x, f, &g) <= opts.stall_tol;
            break;
        };

        iterations += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) {
            if fresh {
                let scale = sy / dot(&y, &y);
                h = identity(n, scale);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        // a step that no longer moves the objective beyond rounding is at the
        // noise floor, which counts like a stalled line search
        let flat = f - fnew <= 1e-14 * f.abs().max(1.0);
        x = xn;
        f = fnew;
        g = gn;
        trace.push(f);
        if x.iter().any(|v| v.abs() > opts.separation_bound) {
            quasi_separation = true;
        }
        let norm = scaled_gradient_norm(&x, f, &g);
        converged = norm <= opts.grad_tol || (flat && norm <= opts.stall_tol);
    }

    OptimOutcome {
        x,
        value: f,
        gradient: g,
        iterations,
        converged,
        quasi_separation,
        trace,
    }
}

fn identity(n: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = scale;
    }
    m
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

// H <- (I - r s y') H (I - r y s') + r s s', r = 1 / s'y
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + r * yhy) * r * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Central finite-difference gradient, for checking analytic gradients.
pub fn numerical_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut out = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        out.push((fp - fm) / (2.0 * step));
    }
    out
}
