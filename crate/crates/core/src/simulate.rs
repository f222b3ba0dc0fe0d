//! Synthetic panels from the dynamic model.
//!
//! Household `i` draws from a ChaCha8 stream keyed by `(seed, i)`; period
//! `t` starts at word position `t << 32`. A household's outcomes therefore
//! never depend on how many other households are simulated or in what order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    cell_index, sequence_prob, transition_log_probs, CommonParams, CovariatePath, FixedEffects, Pair, PairSequence,
    INITIAL_PAIRS,
};
use crate::panel::{Household, Panel, SequenceTable};
use crate::quadrature::{normal_cdf, QuadratureRule};

/// Distribution of the household effect given the initial pair.
#[derive(Debug, Clone, PartialEq)]
pub enum HeterogeneityDist {
    /// `alpha = d0 + d1 y1_0 + d2 y2_0 + d3 y1_0 y2_0 + sigma Z`.
    NormalLinear { delta: [f64; 4], sigma: f64 },
    /// Five-point symmetric law with unit variance.
    DiscreteApproxNormal,
    /// `3` with mass 1/4, `-1` with mass 3/4.
    DiscreteAsymmetric,
    /// `+-sqrt(2 + 2 y1_0)`, each with mass 1/2.
    Heteroskedastic,
    /// `+-sqrt(5 y1_0)`, each with mass 1/2.
    VeryHeteroskedastic,
    /// Support points and masses for each initial pair, in cell order.
    CustomDiscrete { support: [Vec<(f64, f64)>; 4] },
    Degenerate(f64),
}

/// Outer support point of the five-point law, chosen for unit variance:
/// `2 d^2 Phi(-1.5) + 2 (Phi(1.5) - Phi(0.5)) = 1`.
pub fn five_point_d() -> f64 {
    let tail = normal_cdf(-1.5);
    let inner = normal_cdf(1.5) - normal_cdf(0.5);
    libm::sqrt((1.0 - 2.0 * inner) / (2.0 * tail))
}

impl HeterogeneityDist {
    /// `alpha = -1 + y1_0 + y2_0 + N(0, 1)`.
    pub fn correctly_specified() -> Self {
        Self::NormalLinear {
            delta: [-1.0, 1.0, 1.0, 0.0],
            sigma: 1.0,
        }
    }

    pub const NAMES: [&'static str; 6] = [
        "normal-linear",
        "discrete-approx-normal",
        "discrete-asymmetric",
        "heteroskedastic",
        "very-heteroskedastic",
        "degenerate",
    ];

    /// Named distributions; `normal-linear` is the correctly specified one
    /// and `degenerate` sits at zero.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "normal-linear" | "correct" | "correctly-specified" => Self::correctly_specified(),
            "discrete-approx-normal" => Self::DiscreteApproxNormal,
            "discrete-asymmetric" => Self::DiscreteAsymmetric,
            "heteroskedastic" => Self::Heteroskedastic,
            "very-heteroskedastic" => Self::VeryHeteroskedastic,
            "degenerate" => Self::Degenerate(0.0),
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::NormalLinear { .. } => "normal-linear",
            Self::DiscreteApproxNormal => "discrete-approx-normal",
            Self::DiscreteAsymmetric => "discrete-asymmetric",
            Self::Heteroskedastic => "heteroskedastic",
            Self::VeryHeteroskedastic => "very-heteroskedastic",
            Self::CustomDiscrete { .. } => "custom-discrete",
            Self::Degenerate(_) => "degenerate",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::NormalLinear { delta, sigma } => {
                if !(*sigma >= 0.0 && sigma.is_finite()) || delta.iter().any(|d| !d.is_finite()) {
                    return Err(Error::InvalidInput("normal-linear needs finite deltas and sigma >= 0".into()));
                }
            }
            Self::CustomDiscrete { support } => {
                for (i, s) in support.iter().enumerate() {
                    let total: f64 = s.iter().map(|p| p.1).sum();
                    if s.is_empty()
                        || s.iter().any(|p| !p.0.is_finite() || !(p.1 >= 0.0))
                        || (total - 1.0).abs() > 1e-10
                    {
                        return Err(Error::InvalidInput(format!(
                            "masses for initial pair {:?} must be nonnegative and sum to 1",
                            INITIAL_PAIRS[i]
                        )));
                    }
                }
            }
            Self::Degenerate(a) if !a.is_finite() => {
                return Err(Error::InvalidInput("degenerate effect must be finite".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Support and masses given the initial pair; `None` for the normal law.
    pub fn support(&self, initial: Pair) -> Option<Vec<(f64, f64)>> {
        let y10 = initial.0 as f64;
        Some(match self {
            Self::NormalLinear { .. } => return None,
            Self::DiscreteApproxNormal => {
                let d = five_point_d();
                let tail = normal_cdf(-1.5);
                let inner = normal_cdf(1.5) - normal_cdf(0.5);
                let mid = normal_cdf(0.5) - normal_cdf(-0.5);
                vec![(-d, tail), (-1.0, inner), (0.0, mid), (1.0, inner), (d, tail)]
            }
            Self::DiscreteAsymmetric => vec![(3.0, 0.25), (-1.0, 0.75)],
            Self::Heteroskedastic => {
                let s = libm::sqrt(2.0 + 2.0 * y10);
                vec![(-s, 0.5), (s, 0.5)]
            }
            Self::VeryHeteroskedastic => {
                let s = libm::sqrt(5.0 * y10);
                vec![(-s, 0.5), (s, 0.5)]
            }
            Self::CustomDiscrete { support } => support[cell_index(initial)].clone(),
            Self::Degenerate(a) => vec![(*a, 1.0)],
        })
    }

    /// Nodes and masses: the exact support for discrete laws, Gauss-Hermite
    /// nodes for the normal one.
    pub fn nodes(&self, initial: Pair, quad: &QuadratureRule) -> Vec<(f64, f64)> {
        match self {
            Self::NormalLinear { delta, sigma } => {
                let mu = linear_mean(delta, initial);
                if *sigma == 0.0 {
                    vec![(mu, 1.0)]
                } else {
                    quad.nodes
                        .iter()
                        .zip(&quad.weights)
                        .map(|(x, w)| (mu + sigma * x, *w))
                        .collect()
                }
            }
            _ => self.support(initial).unwrap_or_default(),
        }
    }
}

pub(crate) fn linear_mean(delta: &[f64; 4], initial: Pair) -> f64 {
    let (a, b) = (initial.0 as f64, initial.1 as f64);
    delta[0] + a * delta[1] + b * delta[2] + a * b * delta[3]
}

/// Marginal success probabilities of the initial pair, drawn independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialSpec {
    pub p1: f64,
    pub p2: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { p1: 0.5, p2: 0.5 }
    }
}

impl InitialSpec {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.p1) && (0.0..=1.0).contains(&self.p2) {
            Ok(())
        } else {
            Err(Error::InvalidInput("initial probabilities must lie in [0, 1]".into()))
        }
    }

    pub fn prob(&self, initial: Pair) -> f64 {
        let a = if initial.0 == 1 { self.p1 } else { 1.0 - self.p1 };
        let b = if initial.1 == 1 { self.p2 } else { 1.0 - self.p2 };
        a * b
    }
}

pub fn draw_initial<R: Rng + ?Sized>(spec: &InitialSpec, rng: &mut R) -> Pair {
    let a = (rng.random::<f64>() < spec.p1) as u8;
    let b = (rng.random::<f64>() < spec.p2) as u8;
    (a, b)
}

pub fn draw_alpha<R: Rng + ?Sized>(dist: &HeterogeneityDist, initial: Pair, rng: &mut R) -> f64 {
    match dist {
        HeterogeneityDist::NormalLinear { delta, sigma } => {
            let z: f64 = StandardNormal.sample(rng);
            linear_mean(delta, initial) + sigma * z
        }
        _ => {
            let support = dist.support(initial).unwrap_or_default();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (a, p) in &support {
                acc += p;
                if u < acc {
                    return *a;
                }
            }
            support.last().map_or(0.0, |s| s.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    /// `alpha2 = alpha1 + kappa`; otherwise `alpha2` is an independent draw
    /// from the same distribution.
    pub restricted: bool,
    pub seed: u64,
    pub initial: InitialSpec,
    pub group: String,
}

impl SimConfig {
    pub fn new(n: usize, t: usize, restricted: bool, seed: u64) -> Self {
        Self {
            n,
            t,
            restricted,
            seed,
            initial: InitialSpec::default(),
            group: String::new(),
        }
    }
}

fn household_rng(seed: u64, household: u64, period: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(household);
    rng.set_word_pos((period as u128) << 32);
    rng
}

/// Household `index` of a simulated panel; deterministic in
/// `(config.seed, index)`.
pub fn simulate_household(
    params: &CommonParams,
    dist: &HeterogeneityDist,
    config: &SimConfig,
    index: usize,
) -> Result<Household> {
    let k = params.covariate_dim();
    let mut rng = household_rng(config.seed, index as u64, 0);
    let initial = draw_initial(&config.initial, &mut rng);
    let a1 = draw_alpha(dist, initial, &mut rng);
    let a2 = if config.restricted {
        a1 + params.kappa
    } else {
        draw_alpha(dist, initial, &mut rng)
    };
    let fe = FixedEffects::new(a1, a2);
    // constant-per-household standard normal regressors
    let x1: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x2: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let path = CovariatePath::new(vec![x1.clone(); config.t], vec![x2.clone(); config.t])?;

    let mut y1 = vec![initial.0];
    let mut y2 = vec![initial.1];
    for s in 1..=config.t {
        let mut r = household_rng(config.seed, index as u64, s as u64);
        let row = (k > 0).then(|| path.row(s));
        let lc = transition_log_probs(params, fe, row, (y1[s - 1], y2[s - 1]))?;
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut cell = 3;
        for (c, l) in lc.iter().enumerate() {
            acc += libm::exp(*l);
            if u < acc {
                cell = c;
                break;
            }
        }
        y1.push((cell >> 1) as u8);
        y2.push((cell & 1) as u8);
    }
    Ok(Household {
        id: format!("{index}"),
        seq: PairSequence::new(y1, y2)?,
        x: path,
        x_initial: (x1, x2),
        group: config.group.clone(),
        window_key: None,
    })
}

pub fn simulate_panel_with(params: &CommonParams, dist: &HeterogeneityDist, config: &SimConfig) -> Result<Panel> {
    check_sim(params, dist, config)?;
    let households = (0..config.n)
        .map(|i| simulate_household(params, dist, config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Panel { households })
}

pub(crate) fn check_sim(params: &CommonParams, dist: &HeterogeneityDist, config: &SimConfig) -> Result<()> {
    params.validate()?;
    dist.validate()?;
    config.initial.validate()?;
    if config.n == 0 || config.t == 0 {
        return Err(Error::InvalidInput("need n >= 1 and T >= 1".into()));
    }
    if config.t > 16 {
        return Err(Error::InvalidInput("T above 16 is not supported".into()));
    }
    Ok(())
}

/// `n` households over `t` periods with independent fair initial outcomes.
pub fn simulate_panel(
    params: &CommonParams,
    dist: &HeterogeneityDist,
    n: usize,
    t: usize,
    restricted: bool,
    seed: u64,
) -> Result<Panel> {
    simulate_panel_with(params, dist, &SimConfig::new(n, t, restricted, seed))
}

/// Exact probabilities of every `(initial, continuation)` cell under the
/// simulation design without covariates. Normal effects are integrated with
/// `quad`; discrete ones are summed exactly.
pub fn expected_table(
    params: &CommonParams,
    dist: &HeterogeneityDist,
    t: usize,
    restricted: bool,
    initial: &InitialSpec,
    quad: &QuadratureRule,
) -> Result<SequenceTable> {
    dist.validate()?;
    let mut table = SequenceTable::new(t);
    for init in INITIAL_PAIRS {
        let w0 = initial.prob(init);
        if w0 == 0.0 {
            continue;
        }
        let nodes = dist.nodes(init, quad);
        let seqs: Vec<PairSequence> = crate::model::enumerate_sequences(t, init);
        for (code, s) in seqs.iter().enumerate() {
            let mut p = 0.0;
            for &(a1, m1) in &nodes {
                if restricted {
                    p += m1 * sequence_prob(params, FixedEffects::restricted(a1, params.kappa), None, s)?;
                } else {
                    for &(a2, m2) in &nodes {
                        p += m1 * m2 * sequence_prob(params, FixedEffects::new(a1, a2), None, s)?;
                    }
                }
            }
            table.add_code(init, code, w0 * p);
        }
    }
    Ok(table)
}
