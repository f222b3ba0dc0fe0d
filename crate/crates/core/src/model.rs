//! Parameters and exact probabilities of the simultaneous bivariate logit.
//!
//! Cells are indexed `2 * c1 + c2`, so `[p00, p01, p10, p11]`. All
//! probabilities are computed from log-space cell weights normalised with a
//! log-sum-exp, and exponentiated only when returned.

use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

/// A binary outcome pair `(y1, y2)`.
pub type Pair = (u8, u8);

/// Own and cross lag coefficients. `g12` is the effect of the second
/// spouse's lag on the first equation, `g21` the first spouse's lag on the
/// second equation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gamma {
    pub g11: f64,
    pub g12: f64,
    pub g21: f64,
    pub g22: f64,
}

impl Gamma {
    pub const fn new(g11: f64, g12: f64, g21: f64, g22: f64) -> Self {
        Self { g11, g12, g21, g22 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.g11, self.g12, self.g21, self.g22]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Lag index contributions `(z1, z2)` for a previous state.
    #[inline]
    pub fn lag_index(&self, prev: Pair) -> (f64, f64) {
        let (a, b) = (prev.0 as f64, prev.1 as f64);
        (self.g11 * a + self.g12 * b, self.g21 * a + self.g22 * b)
    }
}

/// Common (non-individual) parameters of the model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommonParams {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub gamma: Gamma,
    pub rho: f64,
    /// Spouse-level shift `alpha2 = alpha1 + kappa`; only meaningful under
    /// restricted fixed effects.
    pub kappa: f64,
}

impl CommonParams {
    pub fn new(beta1: Vec<f64>, beta2: Vec<f64>, gamma: Gamma, rho: f64, kappa: f64) -> Result<Self> {
        let p = Self {
            beta1,
            beta2,
            gamma,
            rho,
            kappa,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters without covariates.
    pub fn dynamic(gamma: Gamma, rho: f64, kappa: f64) -> Self {
        Self {
            beta1: Vec::new(),
            beta2: Vec::new(),
            gamma,
            rho,
            kappa,
        }
    }

    /// Static model with only covariate coefficients and `rho`.
    pub fn static_model(beta1: Vec<f64>, beta2: Vec<f64>, rho: f64) -> Result<Self> {
        Self::new(beta1, beta2, Gamma::default(), rho, 0.0)
    }

    pub fn covariate_dim(&self) -> usize {
        self.beta1.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_len("beta2 length", self.beta1.len(), self.beta2.len())?;
        let finite = self
            .beta1
            .iter()
            .chain(self.beta2.iter())
            .chain(self.gamma.to_array().iter())
            .chain([self.rho, self.kappa].iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Individual fixed effects of the two equations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FixedEffects {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl FixedEffects {
    pub const fn new(alpha1: f64, alpha2: f64) -> Self {
        Self { alpha1, alpha2 }
    }

    /// Household effect `alpha` with `alpha2 = alpha + kappa`.
    pub fn restricted(alpha: f64, kappa: f64) -> Self {
        Self::new(alpha, alpha + kappa)
    }
}

/// One household's outcome pair over periods `0..=T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairSequence {
    y1: Vec<u8>,
    y2: Vec<u8>,
}

impl PairSequence {
    pub fn new(y1: Vec<u8>, y2: Vec<u8>) -> Result<Self> {
        check_len("y2 length", y1.len(), y2.len())?;
        if y1.len() < 2 {
            return Err(Error::InvalidInput(
                "a sequence needs the initial period and at least one more".into(),
            ));
        }
        if y1.iter().chain(y2.iter()).any(|&v| v > 1) {
            return Err(Error::InvalidInput("outcomes must be 0 or 1".into()));
        }
        Ok(Self { y1, y2 })
    }

    /// Number of periods after the initial one.
    pub fn periods(&self) -> usize {
        self.y1.len() - 1
    }

    pub fn initial(&self) -> Pair {
        (self.y1[0], self.y2[0])
    }

    pub fn y1(&self) -> &[u8] {
        &self.y1
    }

    pub fn y2(&self) -> &[u8] {
        &self.y2
    }

    pub fn at(&self, t: usize) -> Pair {
        (self.y1[t], self.y2[t])
    }

    /// Index of the continuation among the `4^T` sequences sharing the
    /// initial pair. Bits are laid out as `(y1_1..y1_T, y2_1..y2_T)`, most
    /// significant first, so codes follow the tuple ordering of
    /// [`PairSequence::to_tuple`].
    pub fn continuation_code(&self) -> usize {
        let t = self.periods();
        let mut code = 0usize;
        for s in 1..=t {
            code = (code << 1) | self.y1[s] as usize;
        }
        for s in 1..=t {
            code = (code << 1) | self.y2[s] as usize;
        }
        code
    }

    pub fn from_code(t: usize, initial: Pair, code: usize) -> Self {
        let mut y1 = Vec::with_capacity(t + 1);
        let mut y2 = Vec::with_capacity(t + 1);
        y1.push(initial.0);
        y2.push(initial.1);
        for s in 0..t {
            y1.push(((code >> (2 * t - 1 - s)) & 1) as u8);
        }
        for s in 0..t {
            y2.push(((code >> (t - 1 - s)) & 1) as u8);
        }
        Self { y1, y2 }
    }

    /// Flat layout `(y1_0..y1_T, y2_0..y2_T)`.
    pub fn to_tuple(&self) -> Vec<u8> {
        self.y1.iter().chain(self.y2.iter()).copied().collect()
    }
}

/// Strictly exogenous covariates for periods `1..=T`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariatePath {
    x1: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
}

impl CovariatePath {
    pub fn new(x1: Vec<Vec<f64>>, x2: Vec<Vec<f64>>) -> Result<Self> {
        check_len("covariate rows", x1.len(), x2.len())?;
        let k = x1.first().map_or(0, Vec::len);
        for row in x1.iter().chain(x2.iter()) {
            check_len("covariate columns", k, row.len())?;
        }
        Ok(Self { x1, x2 })
    }

    /// `t` periods with no covariates.
    pub fn empty(t: usize) -> Self {
        Self {
            x1: alloc::vec![Vec::new(); t],
            x2: alloc::vec![Vec::new(); t],
        }
    }

    pub fn periods(&self) -> usize {
        self.x1.len()
    }

    pub fn dim(&self) -> usize {
        self.x1.first().map_or(0, Vec::len)
    }

    /// Covariates of period `t` (1-based).
    pub fn row(&self, t: usize) -> (&[f64], &[f64]) {
        (&self.x1[t - 1], &self.x2[t - 1])
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(values.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

/// Log cell probabilities for linear indices `v1`, `v2` and association `rho`.
#[inline]
pub fn cell_log_probs(v1: f64, v2: f64, rho: f64) -> [f64; 4] {
    let w = [0.0, v2, v1, v1 + v2 + rho];
    let norm = log_sum_exp(&w);
    [w[0] - norm, w[1] - norm, w[2] - norm, w[3] - norm]
}

#[inline]
pub(crate) fn cell_index(c: Pair) -> usize {
    2 * c.0 as usize + c.1 as usize
}

fn check_bit(c: u8) -> Result<()> {
    if c > 1 {
        Err(Error::InvalidInput("outcomes must be 0 or 1".into()))
    } else {
        Ok(())
    }
}

fn covariate_index(beta: &[f64], x: &[f64], what: &'static str) -> Result<f64> {
    check_len(what, beta.len(), x.len())?;
    Ok(dot(beta, x))
}

/// Cross-sectional joint probability `P(y1 = c1, y2 = c2 | x1, x2)`.
pub fn joint_prob_static(params: &CommonParams, x1: &[f64], x2: &[f64], c1: u8, c2: u8) -> Result<f64> {
    check_bit(c1)?;
    check_bit(c2)?;
    let v1 = covariate_index(&params.beta1, x1, "x1 length")?;
    let v2 = covariate_index(&params.beta2, x2, "x2 length")?;
    Ok(libm::exp(cell_log_probs(v1, v2, params.rho)[cell_index((c1, c2))]))
}

/// Which equation of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spouse {
    First,
    Second,
}

/// `P(y_own = 1 | y_other, x_own) = Λ(x_own'β_own + ρ y_other)`.
pub fn conditional_prob(params: &CommonParams, spouse: Spouse, x_own: &[f64], y_other: u8) -> Result<f64> {
    check_bit(y_other)?;
    let beta = match spouse {
        Spouse::First => &params.beta1,
        Spouse::Second => &params.beta2,
    };
    let v = covariate_index(beta, x_own, "own covariate length")? + params.rho * y_other as f64;
    Ok(logistic(v))
}

#[inline]
pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

/// Linear indices of a transition out of `y_prev`.
#[inline]
pub(crate) fn transition_indices(
    params: &CommonParams,
    fe: FixedEffects,
    x_t: Option<(&[f64], &[f64])>,
    y_prev: Pair,
) -> Result<(f64, f64)> {
    let (z1, z2) = params.gamma.lag_index(y_prev);
    let (b1, b2) = match x_t {
        Some((x1, x2)) => (
            covariate_index(&params.beta1, x1, "x1 length")?,
            covariate_index(&params.beta2, x2, "x2 length")?,
        ),
        None => {
            if !params.beta1.is_empty() {
                return Err(Error::DimensionMismatch {
                    what: "covariates",
                    expected: params.beta1.len(),
                    got: 0,
                });
            }
            (0.0, 0.0)
        }
    };
    Ok((z1 + b1 + fe.alpha1, z2 + b2 + fe.alpha2))
}

/// Log probabilities of the four next-period cells given the previous state.
pub fn transition_log_probs(
    params: &CommonParams,
    fe: FixedEffects,
    x_t: Option<(&[f64], &[f64])>,
    y_prev: Pair,
) -> Result<[f64; 4]> {
    let (v1, v2) = transition_indices(params, fe, x_t, y_prev)?;
    Ok(cell_log_probs(v1, v2, params.rho))
}

/// `P(y_t = c | y_{t-1} = y_prev, x_t, alpha)`.
pub fn transition_prob(
    params: &CommonParams,
    fe: FixedEffects,
    x_t: Option<(&[f64], &[f64])>,
    y_prev: Pair,
    c: Pair,
) -> Result<f64> {
    check_bit(c.0)?;
    check_bit(c.1)?;
    Ok(libm::exp(transition_log_probs(params, fe, x_t, y_prev)?[cell_index(c)]))
}

/// Log probability of periods `1..=T` given the initial pair.
pub fn sequence_log_prob(
    params: &CommonParams,
    fe: FixedEffects,
    xpath: Option<&CovariatePath>,
    seq: &PairSequence,
) -> Result<f64> {
    let t = seq.periods();
    if let Some(x) = xpath {
        check_len("covariate path periods", t, x.periods())?;
    }
    let mut lp = 0.0;
    for s in 1..=t {
        let row = xpath.map(|x| x.row(s));
        let lc = transition_log_probs(params, fe, row, seq.at(s - 1))?;
        lp += lc[cell_index(seq.at(s))];
    }
    Ok(lp)
}

pub fn sequence_prob(
    params: &CommonParams,
    fe: FixedEffects,
    xpath: Option<&CovariatePath>,
    seq: &PairSequence,
) -> Result<f64> {
    Ok(libm::exp(sequence_log_prob(params, fe, xpath, seq)?))
}

/// All `4^T` sequences sharing an initial pair, ordered by continuation code.
pub fn enumerate_sequences(t: usize, initial: Pair) -> Vec<PairSequence> {
    assert!(t >= 1, "enumerate_sequences needs T >= 1");
    (0..1usize << (2 * t))
        .map(|code| PairSequence::from_code(t, initial, code))
        .collect()
}

/// The four initial pairs in cell order.
pub const INITIAL_PAIRS: [Pair; 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Straight transcription of the four-cell formula, no log space.
    fn naive_cells(v1: f64, v2: f64, rho: f64) -> [f64; 4] {
        let w = [1.0, v2.exp(), v1.exp(), (v1 + v2 + rho).exp()];
        let s: f64 = w.iter().sum();
        [w[0] / s, w[1] / s, w[2] / s, w[3] / s]
    }

    fn random_params(rng: &mut ChaCha8Rng, k: usize) -> CommonParams {
        let b1 = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b2 = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = Gamma::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        CommonParams::new(b1, b2, g, rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)).unwrap()
    }

    #[test]
    fn static_cells_trivial_values() {
        let p = CommonParams::static_model(vec![], vec![], 0.0).unwrap();
        for c in INITIAL_PAIRS {
            assert!(close(joint_prob_static(&p, &[], &[], c.0, c.1).unwrap(), 0.25, 1e-15));
        }
        let p = CommonParams::static_model(vec![], vec![], 3f64.ln()).unwrap();
        assert!(close(joint_prob_static(&p, &[], &[], 1, 1).unwrap(), 0.5, 1e-15));
        for c in [(0, 0), (0, 1), (1, 0)] {
            assert!(close(joint_prob_static(&p, &[], &[], c.0, c.1).unwrap(), 1.0 / 6.0, 1e-15));
        }
    }

    #[test]
    fn static_cells_match_naive_normalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = random_params(&mut rng, 3);
            let x1: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let naive = naive_cells(dot(&p.beta1, &x1), dot(&p.beta2, &x2), p.rho);
            let mut total = 0.0;
            for (i, c) in INITIAL_PAIRS.iter().enumerate() {
                let v = joint_prob_static(&p, &x1, &x2, c.0, c.1).unwrap();
                assert!(close(v, naive[i], 1e-13));
                total += v;
            }
            assert!(close(total, 1.0, 1e-12));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = CommonParams::static_model(vec![1.0], vec![1.0], 0.0).unwrap();
        assert!(matches!(
            joint_prob_static(&p, &[], &[1.0], 1, 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(CommonParams::static_model(vec![1.0], vec![], 0.0).is_err());
    }

    #[test]
    fn conditional_prob_values_and_bayes() {
        let p = CommonParams::static_model(vec![], vec![], 0.0).unwrap();
        assert!(close(conditional_prob(&p, Spouse::First, &[], 1).unwrap(), 0.5, 1e-15));
        let p = CommonParams::static_model(vec![], vec![], 3f64.ln()).unwrap();
        assert!(close(conditional_prob(&p, Spouse::First, &[], 1).unwrap(), 0.75, 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = random_params(&mut rng, 2);
            let x1: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            for y2 in 0..2u8 {
                let j1 = joint_prob_static(&p, &x1, &x2, 1, y2).unwrap();
                let j0 = joint_prob_static(&p, &x1, &x2, 0, y2).unwrap();
                let c = conditional_prob(&p, Spouse::First, &x1, y2).unwrap();
                assert!(close(c, j1 / (j1 + j0), 1e-12));
            }
            for y1 in 0..2u8 {
                let j1 = joint_prob_static(&p, &x1, &x2, y1, 1).unwrap();
                let j0 = joint_prob_static(&p, &x1, &x2, y1, 0).unwrap();
                let c = conditional_prob(&p, Spouse::Second, &x2, y1).unwrap();
                assert!(close(c, j1 / (j1 + j0), 1e-12));
            }
            // sign of rho orders the conditional probabilities
            let d = conditional_prob(&p, Spouse::First, &x1, 1).unwrap()
                - conditional_prob(&p, Spouse::First, &x1, 0).unwrap();
            assert!(d * p.rho >= 0.0);
        }
    }

    #[test]
    fn log_odds_ratio_recovers_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = random_params(&mut rng, 1);
            let x1 = [rng.random_range(-1.0..1.0)];
            let x2 = [rng.random_range(-1.0..1.0)];
            let c = |a, b| joint_prob_static(&p, &x1, &x2, a, b).unwrap().ln();
            let r = c(1, 1) + c(0, 0) - c(0, 1) - c(1, 0);
            assert!(close(r, p.rho, 1e-10));
        }
    }

    #[test]
    fn transition_trivial_values() {
        let p = CommonParams::dynamic(Gamma::default(), 0.0, 0.0);
        for prev in INITIAL_PAIRS {
            for c in INITIAL_PAIRS {
                let v = transition_prob(&p, FixedEffects::default(), None, prev, c).unwrap();
                assert!(close(v, 0.25, 1e-15));
            }
        }
        let p = CommonParams::dynamic(Gamma::default(), 3f64.ln(), 0.0);
        let v = transition_prob(&p, FixedEffects::default(), None, (1, 0), (1, 1)).unwrap();
        assert!(close(v, 0.5, 1e-15));
        let v = transition_prob(&p, FixedEffects::default(), None, (1, 0), (0, 1)).unwrap();
        assert!(close(v, 1.0 / 6.0, 1e-15));
    }

    #[test]
    fn transition_matches_hand_normalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = random_params(&mut rng, 0);
            let fe = FixedEffects::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let prev = INITIAL_PAIRS[rng.random_range(0..4)];
            let g = p.gamma;
            let v1 = g.g11 * prev.0 as f64 + g.g12 * prev.1 as f64 + fe.alpha1;
            let v2 = g.g21 * prev.0 as f64 + g.g22 * prev.1 as f64 + fe.alpha2;
            let naive = naive_cells(v1, v2, p.rho);
            let mut total = 0.0;
            for (i, c) in INITIAL_PAIRS.iter().enumerate() {
                let v = transition_prob(&p, fe, None, prev, *c).unwrap();
                assert!(close(v, naive[i], 1e-13));
                total += v;
            }
            assert!(close(total, 1.0, 1e-12));
        }
    }

    #[test]
    fn extreme_parameters_stay_finite() {
        let p = CommonParams::dynamic(Gamma::new(50.0, -50.0, 40.0, 45.0), 50.0, 0.0);
        let fe = FixedEffects::new(50.0, -50.0);
        let lp = transition_log_probs(&p, fe, None, (1, 1)).unwrap();
        assert!(lp.iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY));
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!(close(total, 1.0, 1e-12));
    }

    #[test]
    fn sequence_probabilities_and_enumeration() {
        let p = CommonParams::dynamic(Gamma::default(), 0.0, 0.0);
        let seq = PairSequence::new(vec![0, 1], vec![1, 1]).unwrap();
        assert!(close(sequence_prob(&p, FixedEffects::default(), None, &seq).unwrap(), 0.25, 1e-15));
        let seq = PairSequence::new(vec![0, 1, 0, 1], vec![1, 1, 0, 0]).unwrap();
        assert!(close(sequence_prob(&p, FixedEffects::default(), None, &seq).unwrap(), 1.0 / 64.0, 1e-15));

        assert_eq!(enumerate_sequences(1, (0, 0)).len(), 4);
        let all = enumerate_sequences(3, (1, 1));
        assert_eq!(all.len(), 64);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 64);
        for s in enumerate_sequences(2, (1, 0)) {
            assert_eq!(s.initial(), (1, 0));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for t in 1..=4 {
            for _ in 0..10 {
                let p = random_params(&mut rng, 1);
                let fe = FixedEffects::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let x1: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
                let x2: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
                let path = CovariatePath::new(x1, x2).unwrap();
                let init = INITIAL_PAIRS[rng.random_range(0..4)];
                let total: f64 = enumerate_sequences(t, init)
                    .iter()
                    .map(|s| sequence_prob(&p, fe, Some(&path), s).unwrap())
                    .sum();
                assert!(close(total, 1.0, 1e-12), "T={t} total={total}");
            }
        }
    }

    #[test]
    fn continuation_codes_round_trip() {
        for t in 1..=4 {
            for code in 0..1usize << (2 * t) {
                let s = PairSequence::from_code(t, (1, 0), code);
                assert_eq!(s.continuation_code(), code);
            }
        }
        let s = PairSequence::new(vec![1, 0, 0, 1], vec![0, 0, 1, 0]).unwrap();
        assert_eq!(s.to_tuple(), vec![1, 0, 0, 1, 0, 0, 1, 0]);
    }

    #[test]
    fn invalid_sequences_rejected() {
        assert!(PairSequence::new(vec![0, 2], vec![0, 0]).is_err());
        assert!(PairSequence::new(vec![0], vec![0]).is_err());
        assert!(PairSequence::new(vec![0, 1], vec![0]).is_err());
    }
}
