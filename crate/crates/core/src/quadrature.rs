//! Gauss-Hermite rules for expectations under a standard normal.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Nodes and weights with `sum_i w_i f(x_i) ~ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Probabilists' Gauss-Hermite rule via Golub-Welsch. The Jacobi matrix
    /// has zero diagonal and off-diagonal `sqrt(k)`.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("quadrature order must be positive".into()));
        }
        let mut j = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = libm::sqrt(k as f64);
            j[(k - 1, k)] = b;
            j[(k, k - 1)] = b;
        }
        let eig = j.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrise to remove eigen-solver noise
        let n = pairs.len();
        for i in 0..n / 2 {
            let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
            let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[n - 1 - i] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[f(mu + sigma Z)]`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mu: f64, sigma: f64, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mu + sigma * x))
            .sum()
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}
