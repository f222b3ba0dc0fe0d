//! Household-level nonparametric bootstrap.
//!
//! Replicate `r` resamples with a ChaCha8 stream keyed by `(seed, r)`, so
//! replicates can run in any order or in parallel and still merge to the
//! same result.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Pair;
use crate::panel::SequenceTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleMode {
    /// A fresh resample per replicate.
    #[default]
    Independent,
    /// Every replicate reuses the resample of replicate 0. Only useful for
    /// checking the machinery.
    Fixed,
}

/// Resample indices of replicate `r`.
pub fn resample_indices(n: usize, seed: u64, replicate: usize, mode: ResampleMode) -> Vec<usize> {
    let stream = match mode {
        ResampleMode::Independent => replicate as u64,
        ResampleMode::Fixed => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub se: Vec<f64>,
    /// Estimates of the retained replicates, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub dropped: usize,
    pub warning: Option<String>,
}

/// Share of dropped replicates above which a warning is attached.
pub const DROP_WARNING_SHARE: f64 = 0.10;

/// Standard deviations (divisor `B - 1`) over replicate outcomes given in
/// replicate order; failed replicates are `None`.
pub fn summarize(outcomes: Vec<Option<Vec<f64>>>) -> Result<BootstrapResult> {
    let b = outcomes.len();
    let replicates: Vec<Vec<f64>> = outcomes.into_iter().flatten().collect();
    let dropped = b - replicates.len();
    if replicates.len() < 2 {
        return Err(Error::NoInformation(format!(
            "only {} of {b} bootstrap replicates succeeded",
            replicates.len()
        )));
    }
    let k = replicates[0].len();
    if replicates.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput("replicates returned different lengths".into()));
    }
    let m = replicates.len() as f64;
    let se = (0..k)
        .map(|j| {
            let mean = replicates.iter().map(|r| r[j]).sum::<f64>() / m;
            let ss: f64 = replicates.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum();
            libm::sqrt(ss / (m - 1.0))
        })
        .collect();
    let warning = (dropped as f64 > DROP_WARNING_SHARE * b as f64)
        .then(|| format!("{dropped} of {b} bootstrap replicates failed and were dropped"));
    Ok(BootstrapResult {
        se,
        replicates,
        dropped,
        warning,
    })
}

/// Sequential bootstrap. `estimator` receives the resampled household
/// indices and returns `None` for a failed replicate.
pub fn bootstrap_se<F>(n: usize, replicates: usize, seed: u64, mode: ResampleMode, mut estimator: F) -> Result<BootstrapResult>
where
    F: FnMut(&[usize]) -> Option<Vec<f64>>,
{
    if replicates < 2 {
        return Err(Error::InvalidInput("the bootstrap needs at least 2 replicates".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("cannot resample an empty panel".into()));
    }
    let outcomes = (0..replicates)
        .map(|r| estimator(&resample_indices(n, seed, r, mode)))
        .collect();
    summarize(outcomes)
}

/// One `(initial, code)` entry per household, for resampling a table of
/// integer counts.
pub fn expand_table(table: &SequenceTable) -> Result<Vec<(Pair, usize)>> {
    let mut out = Vec::new();
    for (init, code, w) in table.nonzero() {
        if w < 0.0 || libm::trunc(w) != w {
            return Err(Error::InvalidInput("resampling needs integer household counts".into()));
        }
        out.extend(core::iter::repeat_n((init, code), w as usize));
    }
    Ok(out)
}

pub fn resampled_table(t: usize, households: &[(Pair, usize)], idx: &[usize]) -> SequenceTable {
    let mut table = SequenceTable::new(t);
    for &i in idx {
        let (init, code) = households[i];
        table.add_code(init, code, 1.0);
    }
    table
}
