//! Conditional maximum likelihood for the dynamic model with fixed effects.
//!
//! Conditioning on the initial pair, the middle-period sums and the final
//! period (or, under `alpha2 = alpha1 + kappa`, the final-period sum) removes
//! both fixed effects and `rho`. What remains is a conditional logit over
//! the comparison class with sufficient features
//! `(sum y1_t y1_{t-1}, sum y1_t y2_{t-1}, sum y2_t y1_{t-1}, sum y2_t y2_{t-1})`
//! plus `sum y2_t` for `kappa` in the restricted case.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::linalg::inverse_spd;
use crate::model::{cell_index, dot, log_sum_exp, CommonParams, Pair, PairSequence, INITIAL_PAIRS};
use crate::optim::{minimize, OptimOptions};
use crate::panel::{Panel, SequenceTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tail {
    /// `(y1_T, y2_T)`, unrestricted fixed effects.
    Pair(u8, u8),
    /// `y1_T + y2_T`, restricted fixed effects.
    Sum(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SufficientStat {
    pub initial: Pair,
    pub mid_sum1: u8,
    pub mid_sum2: u8,
    pub mid_cross: u8,
    pub tail: Tail,
}

pub fn sufficient_stat(seq: &PairSequence, restricted: bool) -> SufficientStat {
    let t = seq.periods();
    let (mut s1, mut s2, mut sc) = (0u8, 0u8, 0u8);
    for s in 1..t {
        let (a, b) = seq.at(s);
        s1 += a;
        s2 += b;
        sc += a * b;
    }
    let (a, b) = seq.at(t);
    SufficientStat {
        initial: seq.initial(),
        mid_sum1: s1,
        mid_sum2: s2,
        mid_cross: sc,
        tail: if restricted { Tail::Sum(a + b) } else { Tail::Pair(a, b) },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonClass {
    pub stat: SufficientStat,
    pub members: Vec<PairSequence>,
}

/// Every continuation of length `t` sharing the statistic.
pub fn comparison_class(stat: SufficientStat, t: usize) -> ComparisonClass {
    let restricted = matches!(stat.tail, Tail::Sum(_));
    let members = (0..1usize << (2 * t))
        .map(|code| PairSequence::from_code(t, stat.initial, code))
        .filter(|s| sufficient_stat(s, restricted) == stat)
        .collect();
    ComparisonClass { stat, members }
}

/// Features whose coefficients survive conditioning:
/// `[g11, g12, g21, g22, kappa]` loadings.
pub fn conditional_features(seq: &PairSequence) -> [f64; 5] {
    let mut f = [0.0; 5];
    for s in 1..=seq.periods() {
        let (p1, p2) = seq.at(s - 1);
        let (c, d) = seq.at(s);
        let (p1, p2, c, d) = (p1 as f64, p2 as f64, c as f64, d as f64);
        f[0] += c * p1;
        f[1] += c * p2;
        f[2] += d * p1;
        f[3] += d * p2;
        f[4] += d;
    }
    f
}

fn theta_of(params: &CommonParams) -> [f64; 5] {
    let g = params.gamma;
    [g.g11, g.g12, g.g21, g.g22, params.kappa]
}

fn cond_loglik(theta: &[f64; 5], seq: &PairSequence, restricted: bool) -> f64 {
    let class = comparison_class(sufficient_stat(seq, restricted), seq.periods());
    if class.members.len() == 1 {
        return 0.0;
    }
    let k = if restricted { 5 } else { 4 };
    let e: Vec<f64> = class
        .members
        .iter()
        .map(|m| dot(&theta[..k], &conditional_features(m)[..k]))
        .collect();
    dot(&theta[..k], &conditional_features(seq)[..k]) - log_sum_exp(&e)
}

/// Log conditional probability of `seq` given its unrestricted statistic.
/// Uses `gamma` only.
pub fn cond_loglik_unrestricted(params: &CommonParams, seq: &PairSequence) -> f64 {
    cond_loglik(&theta_of(params), seq, false)
}

/// Log conditional probability under `alpha2 = alpha1 + kappa`. Uses
/// `gamma` and `kappa`.
pub fn cond_loglik_restricted(params: &CommonParams, seq: &PairSequence) -> f64 {
    cond_loglik(&theta_of(params), seq, true)
}

#[derive(Debug, Clone)]
struct Class {
    initial: Pair,
    codes: Vec<usize>,
}

/// Comparison classes of all `4^(T+1)` sequences, built once per
/// `(T, restricted)`.
#[derive(Debug, Clone)]
pub struct CmleTables {
    t: usize,
    restricted: bool,
    classes: Vec<Class>,
    features: [Vec<[f64; 5]>; 4],
}

impl CmleTables {
    pub fn new(t: usize, restricted: bool) -> Self {
        let n = 1usize << (2 * t);
        let mut by_stat: BTreeMap<SufficientStat, Vec<usize>> = BTreeMap::new();
        let mut features: [Vec<[f64; 5]>; 4] = Default::default();
        for init in INITIAL_PAIRS {
            let f = &mut features[cell_index(init)];
            for code in 0..n {
                let seq = PairSequence::from_code(t, init, code);
                f.push(conditional_features(&seq));
                by_stat.entry(sufficient_stat(&seq, restricted)).or_default().push(code);
            }
        }
        let classes = by_stat
            .into_iter()
            .map(|(stat, codes)| Class {
                initial: stat.initial,
                codes,
            })
            .collect();
        Self {
            t,
            restricted,
            classes,
            features,
        }
    }

    pub fn periods(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        if self.restricted {
            5
        } else {
            4
        }
    }

    pub fn names(&self) -> Vec<alloc::string::String> {
        let mut n: Vec<_> = ["gamma11", "gamma12", "gamma21", "gamma22"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self.restricted {
            n.push("kappa".to_string());
        }
        n
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Summed conditional log-likelihood, gradient and Hessian over a table
    /// of weighted sequences.
    pub fn evaluate(&self, table: &SequenceTable, theta: &[f64], want_hessian: bool) -> (f64, Vec<f64>, DMatrix<f64>) {
        let k = self.dim();
        let mut ll = 0.0;
        let mut g = vec![0.0; k];
        let mut h = DMatrix::<f64>::zeros(if want_hessian { k } else { 0 }, if want_hessian { k } else { 0 });
        let mut eta = Vec::new();
        for class in &self.classes {
            if class.codes.len() < 2 {
                continue;
            }
            let counts = table.counts_for(class.initial);
            let total: f64 = class.codes.iter().map(|&c| counts[c]).sum();
            if total == 0.0 {
                continue;
            }
            let feats = &self.features[cell_index(class.initial)];
            eta.clear();
            eta.extend(class.codes.iter().map(|&c| dot(&theta[..k], &feats[c][..k])));
            let lse = log_sum_exp(&eta);
            let mut mean = [0.0; 5];
            let mut second = [[0.0; 5]; 5];
            for (&c, e) in class.codes.iter().zip(&eta) {
                let p = libm::exp(e - lse);
                let f = &feats[c];
                for i in 0..k {
                    mean[i] += p * f[i];
                    if want_hessian {
                        for j in 0..=i {
                            second[i][j] += p * f[i] * f[j];
                        }
                    }
                }
                let w = counts[c];
                if w != 0.0 {
                    ll += w * (e - lse);
                    for i in 0..k {
                        g[i] += w * f[i];
                    }
                }
            }
            for i in 0..k {
                g[i] -= total * mean[i];
            }
            if want_hessian {
                for i in 0..k {
                    for j in 0..=i {
                        let v = total * (second[i][j] - mean[i] * mean[j]);
                        h[(i, j)] -= v;
                        if i != j {
                            h[(j, i)] -= v;
                        }
                    }
                }
            }
        }
        (ll, g, h)
    }

    /// Weight of households in classes of size one, which carry no
    /// information.
    pub fn singleton_weight(&self, table: &SequenceTable) -> f64 {
        self.classes
            .iter()
            .filter(|c| c.codes.len() == 1)
            .map(|c| table.count(c.initial, c.codes[0]))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct CmleFit {
    pub fit: FitResult,
    /// Households whose comparison class is a singleton.
    pub singleton_households: f64,
    pub informative_households: f64,
}

/// Conditional MLE from a table of sequence counts.
pub fn fit_cmle_table(table: &SequenceTable, restricted: bool, opts: &OptimOptions) -> Result<CmleFit> {
    if table.periods() < 3 {
        // restricted classes are not all singletons for T < 3, but they only
        // identify contrasts such as g11 - g21, so the Hessian is singular
        return Err(Error::NoInformation(
            "the conditional likelihood needs at least three periods after the initial one".into(),
        ));
    }
    let tables = CmleTables::new(table.periods(), restricted);
    let singleton = tables.singleton_weight(table);
    let informative = table.total() - singleton;
    if !(informative > 0.0) {
        return Err(Error::NoInformation(
            "every household has a singleton comparison class".into(),
        ));
    }
    let k = tables.dim();
    let out = minimize(
        |th| {
            let (ll, g, _) = tables.evaluate(table, th, false);
            (-ll, g.into_iter().map(|v| -v).collect())
        },
        &vec![0.0; k],
        opts,
    );
    let (_, _, h) = tables.evaluate(table, &out.x, true);
    let covariance = inverse_spd(&(-h)).unwrap_or_else(|_| DMatrix::from_element(k, k, f64::NAN));
    Ok(CmleFit {
        fit: FitResult {
            names: tables.names(),
            estimates: out.x,
            covariance,
            loglik: -out.value,
            converged: out.converged,
            iterations: out.iterations,
            quasi_separation: out.quasi_separation,
            n_obs: libm::round(table.total()) as usize,
            trace: out.trace.iter().map(|v| -v).collect(),
        },
        singleton_households: singleton,
        informative_households: informative,
    })
}

/// Conditional MLE over `gamma` (unrestricted) or `(gamma, kappa)`
/// (restricted). Covariates are not supported.
pub fn fit_cmle(panel: &Panel, restricted: bool, opts: &OptimOptions) -> Result<CmleFit> {
    if panel.covariate_dim() > 0 {
        return Err(Error::InvalidInput(
            "the conditional likelihood is implemented without covariates".into(),
        ));
    }
    fit_cmle_table(&panel.sequence_table()?, restricted, opts)
}
