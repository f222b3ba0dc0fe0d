//! GMM estimation of `rho` from the closed-form moment conditions, given
//! first-stage `(gamma, kappa)` from the restricted conditional likelihood.
//!
//! Every moment is affine in `P = exp(rho)`, so with a fixed diagonal
//! weighting matrix the objective is an exact quadratic in `P` and its
//! minimiser has a closed form.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::appendix::{moment_codes, moment_coefficients, moment_weights_raw, N_MOMENTS};
use crate::cmle::{fit_cmle_table, CmleFit};
use crate::error::{Error, Result};
use crate::model::{cell_index, sequence_prob, CommonParams, FixedEffects, Gamma, PairSequence, INITIAL_PAIRS};
use crate::optim::OptimOptions;
use crate::panel::SequenceTable;

/// Stacked moments: 6 per initial pair.
pub const N_STACKED: usize = 4 * N_MOMENTS;

/// Index into the stacked vector.
pub fn stacked_index(initial: (u8, u8), j: usize) -> usize {
    cell_index(initial) * N_MOMENTS + (j - 1)
}

/// Largest relative exact expectation of any moment, over the four initial
/// pairs and the given effects, under the restricted model.
///
/// The relative size is `|sum_k m_k p_k| / sum_k |m_k| p_k`; zero weights
/// count as exactly valid.
pub fn validate_moments(gamma: &Gamma, kappa: f64, rho: f64, alphas: &[f64]) -> Result<f64> {
    validate_moments_raw(gamma, kappa, libm::exp(kappa), rho, alphas)
}

/// As [`validate_moments`], but the moment weights use `big_b` in place of
/// `exp(kappa)` while the sequence probabilities keep `kappa`.
pub fn validate_moments_raw(gamma: &Gamma, kappa: f64, big_b: f64, rho: f64, alphas: &[f64]) -> Result<f64> {
    let params = CommonParams::dynamic(*gamma, rho, kappa);
    let mut worst: f64 = 0.0;
    for init in INITIAL_PAIRS {
        for j in 1..=N_MOMENTS {
            let m = moment_weights_raw(gamma, big_b, libm::exp(rho), init, j)?;
            let codes = moment_codes(j)?;
            for &a in alphas {
                let fe = FixedEffects::restricted(a, kappa);
                let mut e = 0.0;
                let mut scale = 0.0;
                for (mk, &c) in m.iter().zip(&codes) {
                    let p = sequence_prob(&params, fe, None, &PairSequence::from_code(3, init, c))?;
                    e += mk * p;
                    scale += mk.abs() * p;
                }
                if scale > 0.0 {
                    worst = worst.max(e.abs() / scale);
                }
            }
        }
    }
    Ok(worst)
}

/// Per-cell contributions `(u, v)` to each stacked moment for every
/// continuation code, with `g = u + v P`.
#[derive(Debug, Clone)]
struct Contributions {
    // (stacked index, code, u, v)
    entries: Vec<(usize, usize, f64, f64)>,
}

impl Contributions {
    fn new(gamma: &Gamma, kappa: f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(N_STACKED * 5);
        for init in INITIAL_PAIRS {
            for j in 1..=N_MOMENTS {
                let coef = moment_coefficients(gamma, kappa, init, j)?;
                for (k, &code) in moment_codes(j)?.iter().enumerate() {
                    entries.push((stacked_index(init, j), code, coef[k].0, coef[k].1));
                }
            }
        }
        Ok(Self { entries })
    }
}

fn initial_of(stacked: usize) -> (u8, u8) {
    INITIAL_PAIRS[stacked / N_MOMENTS]
}

/// Sample means and covariance of the stacked moments at one `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub means: Vec<f64>,
    /// Covariance of a single household's moment vector (divisor `n`).
    pub covariance: DMatrix<f64>,
    /// Share of households on any supporting sequence of each moment.
    pub match_fraction: Vec<f64>,
    pub n: f64,
}

impl SampleMoments {
    /// Covariance of the vector of means.
    pub fn mean_covariance(&self) -> DMatrix<f64> {
        &self.covariance / self.n
    }
}

/// Moment vector of one household: at most one pattern fires per moment.
pub fn household_moments(seq: &PairSequence, gamma: &Gamma, kappa: f64, rho: f64) -> Result<Vec<f64>> {
    if seq.periods() != 3 {
        return Err(Error::InvalidInput("the closed-form moments need T = 3".into()));
    }
    let mut g = vec![0.0; N_STACKED];
    let init = seq.initial();
    let code = seq.continuation_code();
    for j in 1..=N_MOMENTS {
        let codes = moment_codes(j)?;
        if let Some(k) = codes.iter().position(|&c| c == code) {
            let m = moment_weights_raw(gamma, libm::exp(kappa), libm::exp(rho), init, j)?;
            g[stacked_index(init, j)] = m[k];
        }
    }
    Ok(g)
}

fn check_table(table: &SequenceTable) -> Result<f64> {
    if table.periods() != 3 {
        return Err(Error::InvalidInput("the closed-form moments need T = 3".into()));
    }
    let n = table.total();
    if !(n > 0.0) {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    Ok(n)
}

/// `(stacked moment, value)` pairs of one sequence.
type MomentTerms = Vec<(usize, f64)>;

fn moments_at(table: &SequenceTable, contrib: &Contributions, p: f64, n: f64) -> SampleMoments {
    let mut means = vec![0.0; N_STACKED];
    let mut hits = vec![0.0; N_STACKED];
    // g for each (initial, code) cell that touches any moment
    let mut cells: Vec<(usize, usize, MomentTerms)> = Vec::new();
    for &(i, code, u, v) in &contrib.entries {
        let init = initial_of(i);
        let w = table.count(init, code);
        let g = u + v * p;
        means[i] += w * g;
        hits[i] += w;
        let ci = cell_index(init);
        match cells.iter_mut().find(|c| c.0 == ci && c.1 == code) {
            Some(c) => c.2.push((i, g)),
            None => cells.push((ci, code, vec![(i, g)])),
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(N_STACKED, N_STACKED);
    for (ci, code, gs) in &cells {
        let w = table.count(INITIAL_PAIRS[*ci], *code);
        if w == 0.0 {
            continue;
        }
        for &(a, ga) in gs {
            for &(b, gb) in gs {
                cov[(a, b)] += w * ga * gb;
            }
        }
    }
    cov /= n;
    for a in 0..N_STACKED {
        for b in 0..N_STACKED {
            cov[(a, b)] -= means[a] * means[b];
        }
    }
    SampleMoments {
        means,
        covariance: cov,
        match_fraction: hits.into_iter().map(|h| h / n).collect(),
        n,
    }
}

pub fn sample_moments(table: &SequenceTable, gamma: &Gamma, kappa: f64, rho: f64) -> Result<SampleMoments> {
    let n = check_table(table)?;
    Ok(moments_at(table, &Contributions::new(gamma, kappa)?, libm::exp(rho), n))
}

/// The quadratic GMM problem in `P = exp(rho)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmProblem {
    pub u_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    /// Diagonal weights; zero for dropped moments.
    pub weights: Vec<f64>,
}

impl GmmProblem {
    pub fn objective(&self, p: f64) -> f64 {
        self.u_bar
            .iter()
            .zip(&self.v_bar)
            .zip(&self.weights)
            .map(|((u, v), w)| {
                let g = u + v * p;
                w * g * g
            })
            .sum()
    }

    fn vwv(&self) -> f64 {
        self.v_bar.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum()
    }

    fn vwu(&self) -> f64 {
        self.v_bar
            .iter()
            .zip(&self.u_bar)
            .zip(&self.weights)
            .map(|((v, u), w)| w * v * u)
            .sum()
    }

    /// Unconstrained minimiser; may be negative.
    pub fn solve(&self) -> Result<f64> {
        let a = self.vwv();
        if !(a > 0.0) {
            return Err(Error::NoInformation("no retained moment depends on rho".into()));
        }
        Ok(-self.vwu() / a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmResult {
    pub rho_hat: f64,
    /// Unconstrained solution for `exp(rho)`.
    pub exp_rho_hat: f64,
    pub objective: f64,
    pub problem: GmmProblem,
    /// Delta-method standard error of `rho_hat`, conditional on the first
    /// stage.
    pub se: f64,
    pub boundary_flag: bool,
    /// Stacked indices dropped for (near) zero variance.
    pub dropped: Vec<usize>,
    pub match_fraction: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoBounds {
    pub low: f64,
    pub high: f64,
}

impl Default for RhoBounds {
    fn default() -> Self {
        Self { low: -2.0, high: 4.0 }
    }
}

/// Variances below this drop the moment from the stack.
pub const MIN_MOMENT_VARIANCE: f64 = 1e-12;

pub fn fit_gmm_rho(table: &SequenceTable, gamma: &Gamma, kappa: f64, bounds: RhoBounds) -> Result<GmmResult> {
    if !(bounds.low < bounds.high) {
        return Err(Error::InvalidInput(format!(
            "rho bounds must satisfy low < high, got ({}, {})",
            bounds.low, bounds.high
        )));
    }
    let n = check_table(table)?;
    let contrib = Contributions::new(gamma, kappa)?;
    let at_zero = moments_at(table, &contrib, 0.0, n);
    let at_one = moments_at(table, &contrib, 1.0, n);
    let mut weights = vec![0.0; N_STACKED];
    let mut dropped = Vec::new();
    for (i, w) in weights.iter_mut().enumerate() {
        let var = at_one.covariance[(i, i)];
        if var < MIN_MOMENT_VARIANCE {
            dropped.push(i);
        } else {
            *w = 1.0 / var;
        }
    }
    if dropped.len() == N_STACKED {
        return Err(Error::NoInformation("no household matches any supporting sequence".into()));
    }
    let problem = GmmProblem {
        u_bar: at_zero.means.clone(),
        v_bar: at_one.means.iter().zip(&at_zero.means).map(|(a, b)| a - b).collect(),
        weights,
    };
    let p_star = problem.solve()?;
    let (lo, hi) = (libm::exp(bounds.low), libm::exp(bounds.high));
    let p = p_star.clamp(lo, hi);
    let boundary_flag = p != p_star;

    // delta method around the (clamped) estimate
    let s = moments_at(table, &contrib, p, n).mean_covariance();
    let wv: Vec<f64> = problem.v_bar.iter().zip(&problem.weights).map(|(v, w)| v * w).collect();
    let mut meat = 0.0;
    for a in 0..N_STACKED {
        for b in 0..N_STACKED {
            meat += wv[a] * s[(a, b)] * wv[b];
        }
    }
    let bread = problem.vwv();
    let se_p = libm::sqrt(meat.max(0.0)) / bread;

    Ok(GmmResult {
        rho_hat: libm::log(p),
        exp_rho_hat: p_star,
        objective: problem.objective(p),
        se: se_p / p,
        boundary_flag,
        dropped,
        match_fraction: at_one.match_fraction,
        problem,
    })
}

/// Restricted conditional likelihood followed by GMM for `rho`.
#[derive(Debug, Clone)]
pub struct TwoStepFit {
    pub first: CmleFit,
    pub gmm: GmmResult,
}

impl TwoStepFit {
    /// `(g11, g12, g21, g22, kappa, rho)`.
    pub fn estimates(&self) -> Vec<f64> {
        let mut v = self.first.fit.estimates.clone();
        v.push(self.gmm.rho_hat);
        v
    }
}

pub fn fit_two_step(table: &SequenceTable, bounds: RhoBounds, opts: &OptimOptions) -> Result<TwoStepFit> {
    let first = fit_cmle_table(table, true, opts)?;
    if !first.fit.converged {
        return Err(Error::NotConverged("first stage".into()));
    }
    let e = &first.fit.estimates;
    let gmm = fit_gmm_rho(table, &Gamma::from_slice(e), e[4], bounds)?;
    Ok(TwoStepFit { first, gmm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gamma(rng: &mut ChaCha8Rng) -> Gamma {
        Gamma::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        )
    }

    fn grid() -> Vec<f64> {
        (0..7).map(|i| -3.0 + i as f64).collect()
    }

    #[test]
    fn moments_have_zero_expectation() {
        assert_eq!(validate_moments(&Gamma::default(), 0.0, 0.0, &[0.0]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..20 {
            let g = random_gamma(&mut rng);
            let kappa = rng.random_range(-1.0..1.0);
            let rho = rng.random_range(-1.0..2.0);
            assert!(validate_moments(&g, kappa, rho, &grid()).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn other_readings_of_b_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let mut worst_g11: f64 = 0.0;
        let mut worst_one: f64 = 0.0;
        for _ in 0..10 {
            let g = random_gamma(&mut rng);
            let kappa = rng.random_range(-1.0..1.0);
            let rho = rng.random_range(-1.0..2.0);
            worst_g11 = worst_g11.max(validate_moments_raw(&g, kappa, g.g11.exp(), rho, &grid()).unwrap());
            worst_one = worst_one.max(validate_moments_raw(&g, kappa, 1.0, rho, &grid()).unwrap());
        }
        assert!(worst_g11 > 1e-2 && worst_one > 1e-2);
    }

    fn exact_table(g: Gamma, kappa: f64, rho: f64, alphas: &[f64], scale: f64) -> SequenceTable {
        let p = CommonParams::dynamic(g, rho, kappa);
        let mut t = SequenceTable::new(3);
        for init in INITIAL_PAIRS {
            for code in 0..64 {
                let s = PairSequence::from_code(3, init, code);
                let pr: f64 = alphas
                    .iter()
                    .map(|&a| sequence_prob(&p, FixedEffects::restricted(a, kappa), None, &s).unwrap())
                    .sum::<f64>()
                    / alphas.len() as f64;
                t.add_code(init, code, scale * pr);
            }
        }
        t
    }

    #[test]
    fn recovers_rho_from_exact_frequencies() {
        let g = Gamma::new(1.0, -0.5, -0.5, 1.0);
        let t = exact_table(g, 0.5, 0.8, &[-1.0, 0.0, 1.5], 1e4);
        let r = fit_gmm_rho(&t, &g, 0.5, RhoBounds::default()).unwrap();
        assert!((r.rho_hat - 0.8).abs() < 1e-8, "{}", r.rho_hat);
        assert!(r.objective < 1e-16);
        assert!(!r.boundary_flag);
    }

    #[test]
    fn objective_is_quadratic_in_exp_rho() {
        let g = Gamma::new(1.0, -0.5, -0.5, 1.0);
        let t = exact_table(g, 0.5, 0.8, &[-1.0, 0.3], 1e3);
        let r = fit_gmm_rho(&t, &Gamma::new(0.9, -0.4, -0.6, 1.1), 0.4, RhoBounds::default()).unwrap();
        let q = |p: f64| r.problem.objective(p);
        let xs = [0.5, 1.5, 3.0];
        let x4 = 7.0;
        let lagrange: f64 = (0..3)
            .map(|i| {
                let mut l = q(xs[i]);
                for j in 0..3 {
                    if i != j {
                        l *= (x4 - xs[j]) / (xs[i] - xs[j]);
                    }
                }
                l
            })
            .sum();
        assert!((lagrange - q(x4)).abs() <= 1e-10 * q(x4).abs().max(1.0));
    }

    #[test]
    fn clamps_to_lower_bound() {
        let g = Gamma::new(1.0, -0.5, -0.5, 1.0);
        let t = exact_table(g, 0.5, -3.5, &[-1.0, 0.0, 1.5], 1e4);
        let r = fit_gmm_rho(&t, &g, 0.5, RhoBounds::default()).unwrap();
        assert!(r.boundary_flag);
        assert_eq!(r.rho_hat, -2.0);
        assert!((r.exp_rho_hat.ln() + 3.5).abs() < 1e-6);
    }

    #[test]
    fn empty_matches_and_duplication() {
        let mut t = SequenceTable::new(3);
        t.add_code((0, 0), 0, 10.0);
        let g = Gamma::new(1.0, -0.5, -0.5, 1.0);
        let m = sample_moments(&t, &g, 0.5, 1.0).unwrap();
        assert!(m.means.iter().all(|v| *v == 0.0));
        assert!(matches!(fit_gmm_rho(&t, &g, 0.5, RhoBounds::default()), Err(Error::NoInformation(_))));

        let t = exact_table(g, 0.5, 0.8, &[-1.0, 0.3], 500.0);
        let a = sample_moments(&t, &g, 0.5, 0.8).unwrap();
        let b = sample_moments(&t.scaled(2.0), &g, 0.5, 0.8).unwrap();
        let diff = (a.mean_covariance() - b.mean_covariance() * 2.0).abs().max();
        assert!(diff < 1e-15);
        let ra = fit_gmm_rho(&t, &g, 0.5, RhoBounds::default()).unwrap();
        let rb = fit_gmm_rho(&t.scaled(2.0), &g, 0.5, RhoBounds::default()).unwrap();
        assert!((ra.rho_hat - rb.rho_hat).abs() < 1e-12);
    }

    #[test]
    fn household_moments_fire_once() {
        let g = Gamma::new(0.3, -0.2, 0.1, 0.4);
        for j in 1..=6 {
            for &code in &moment_codes(j).unwrap() {
                let s = PairSequence::from_code(3, (0, 1), code);
                let v = household_moments(&s, &g, 0.2, 0.5).unwrap();
                assert!(v[stacked_index((0, 1), j)] != 0.0);
                for init in INITIAL_PAIRS {
                    if init != (0, 1) {
                        assert!((1..=6).all(|k| v[stacked_index(init, k)] == 0.0));
                    }
                }
            }
        }
    }
}
