use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Some parameter left `[-25, 25]` during optimisation.
    pub quasi_separation: bool,
    pub n_obs: usize,
    /// Log-likelihood after every accepted optimiser step.
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.estimates[i])
    }

    pub fn se(&self) -> Vec<f64> {
        (0..self.estimates.len())
            .map(|i| libm::sqrt(self.covariance[(i, i)].max(0.0)))
            .collect()
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.index(name)
            .map(|i| libm::sqrt(self.covariance[(i, i)].max(0.0)))
    }
}
