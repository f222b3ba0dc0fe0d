//! Correlated random effects: `alpha = delta0 + y1_0 delta1 + y2_0 delta2 +
//! y1_0 y2_0 delta3 + nu`, `nu ~ N(0, sigma^2)`, with the second effect at
//! `alpha + kappa`. The likelihood conditions on the initial pair.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::linalg::{inverse_spd, symmetrize};
use crate::model::{cell_log_probs, log_sum_exp, CommonParams, FixedEffects, Gamma, Pair, PairSequence, INITIAL_PAIRS};
use crate::optim::{minimize, OptimOptions};
use crate::panel::{Panel, SequenceTable};
use crate::quadrature::QuadratureRule;
use crate::simulate::{expected_table, HeterogeneityDist, InitialSpec};

/// Length of the parameter vector: four `gamma`, `rho`, `kappa`, four
/// `delta` and `log sigma`.
pub const N_CRE: usize = 11;

pub const CRE_NAMES: [&str; N_CRE] = [
    "gamma11", "gamma12", "gamma21", "gamma22", "rho", "kappa", "delta0", "delta1", "delta2", "delta3", "log_sigma",
];

const LOG_SIGMA: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreParams {
    pub gamma: Gamma,
    pub rho: f64,
    pub kappa: f64,
    pub delta: [f64; 4],
    pub sigma: f64,
}

impl CreParams {
    pub fn validate(&self) -> Result<()> {
        let all = self.to_vector();
        if all[..LOG_SIGMA].iter().any(|v| !v.is_finite()) || !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidInput("CRE parameters must be finite with sigma >= 0".into()));
        }
        Ok(())
    }

    /// Parameter vector with `log sigma` last; `sigma = 0` maps to `-inf`.
    pub fn to_vector(&self) -> [f64; N_CRE] {
        let g = self.gamma.to_array();
        let d = self.delta;
        [g[0], g[1], g[2], g[3], self.rho, self.kappa, d[0], d[1], d[2], d[3], libm::log(self.sigma)]
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        crate::error::check_len("CRE parameter vector", N_CRE, v.len())?;
        Ok(Self {
            gamma: Gamma::from_slice(&v[..4]),
            rho: v[4],
            kappa: v[5],
            delta: [v[6], v[7], v[8], v[9]],
            sigma: libm::exp(v[LOG_SIGMA]),
        })
    }

    pub fn common(&self) -> CommonParams {
        CommonParams::dynamic(self.gamma, self.rho, self.kappa)
    }

    /// Mean of `alpha` given the initial pair.
    pub fn mean(&self, initial: Pair) -> f64 {
        crate::simulate::linear_mean(&self.delta, initial)
    }
}

/// Log-likelihood of one sequence with the effect integrated out.
pub fn cre_household_loglik(cre: &CreParams, seq: &PairSequence, quad: &QuadratureRule) -> Result<f64> {
    cre.validate()?;
    let common = cre.common();
    let mu = cre.mean(seq.initial());
    let at = |a: f64| crate::model::sequence_log_prob(&common, FixedEffects::restricted(a, cre.kappa), None, seq);
    if cre.sigma == 0.0 {
        return at(mu);
    }
    let mut terms = Vec::with_capacity(quad.order());
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        terms.push(libm::log(*w) + at(mu + cre.sigma * x)?);
    }
    Ok(log_sum_exp(&terms))
}

/// Per-node log-likelihood and its gradient in
/// `(gamma, rho, kappa, alpha)`.
fn node_loglik(theta: &[f64], seq: &PairSequence, alpha: f64) -> (f64, [f64; 7]) {
    let mut ll = 0.0;
    let mut g = [0.0; 7];
    for s in 1..=seq.periods() {
        let (a, b) = seq.at(s - 1);
        let (p1, p2) = (a as f64, b as f64);
        let v1 = theta[0] * p1 + theta[1] * p2 + alpha;
        let v2 = theta[2] * p1 + theta[3] * p2 + alpha + theta[5];
        let lc = cell_log_probs(v1, v2, theta[4]);
        let c = seq.at(s);
        ll += lc[crate::model::cell_index(c)];
        let pr = lc.map(libm::exp);
        let e1 = c.0 as f64 - (pr[2] + pr[3]);
        let e2 = c.1 as f64 - (pr[1] + pr[3]);
        g[0] += e1 * p1;
        g[1] += e1 * p2;
        g[2] += e2 * p1;
        g[3] += e2 * p2;
        g[4] += (c.0 & c.1) as f64 - pr[3];
        g[5] += e2;
        g[6] += e1 + e2;
    }
    (ll, g)
}

/// Weighted log-likelihood of a sequence table and its gradient in the
/// full parameter vector. A `log sigma` of `-inf` collapses the integral.
pub fn cre_loglik_grad(table: &SequenceTable, theta: &[f64], quad: &QuadratureRule) -> (f64, Vec<f64>) {
    let t = table.periods();
    let sigma = libm::exp(theta[LOG_SIGMA]);
    let nodes: Vec<(f64, f64)> = if sigma == 0.0 {
        vec![(0.0, 1.0)]
    } else {
        quad.nodes.iter().copied().zip(quad.weights.iter().copied()).collect()
    };
    let mut total = 0.0;
    let mut grad = vec![0.0; N_CRE];
    let mut lls = vec![0.0; nodes.len()];
    let mut gs = vec![[0.0; 7]; nodes.len()];
    for init in INITIAL_PAIRS {
        let z = [1.0, init.0 as f64, init.1 as f64, (init.0 * init.1) as f64];
        let mu = crate::model::dot(&theta[6..10], &z);
        for (code, &w) in table.counts_for(init).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let seq = PairSequence::from_code(t, init, code);
            for (q, &(x, qw)) in nodes.iter().enumerate() {
                let (ll, g) = node_loglik(theta, &seq, mu + sigma * x);
                lls[q] = libm::log(qw) + ll;
                gs[q] = g;
            }
            let lse = log_sum_exp(&lls);
            total += w * lse;
            for (q, &(x, _)) in nodes.iter().enumerate() {
                let pi = w * libm::exp(lls[q] - lse);
                let g = &gs[q];
                for k in 0..6 {
                    grad[k] += pi * g[k];
                }
                for k in 0..4 {
                    grad[6 + k] += pi * g[6] * z[k];
                }
                if sigma > 0.0 {
                    grad[LOG_SIGMA] += pi * g[6] * sigma * x;
                }
            }
        }
    }
    (total, grad)
}

/// Fitting controls. Entries of `fixed` hold their parameter at the given
/// value; `Some(f64::NEG_INFINITY)` at `log_sigma` fixes `sigma = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CreOptions {
    pub order: usize,
    /// Doubling stops when no estimate moves more than this.
    pub order_tol: f64,
    pub max_order: usize,
    pub starts: usize,
    pub seed: u64,
    pub start: [f64; N_CRE],
    pub fixed: [Option<f64>; N_CRE],
    pub optim: OptimOptions,
}

impl Default for CreOptions {
    fn default() -> Self {
        Self {
            order: 32,
            order_tol: 1e-4,
            max_order: 256,
            starts: 5,
            seed: 0,
            start: [0.0; N_CRE],
            fixed: [None; N_CRE],
            optim: OptimOptions::default(),
        }
    }
}

impl CreOptions {
    /// `sigma = 0` and `delta1..3 = 0`, which leaves a pooled dynamic model
    /// with intercepts `delta0` and `delta0 + kappa`.
    pub fn pooled_reduction() -> Self {
        let mut o = Self::default();
        for k in 7..10 {
            o.fixed[k] = Some(0.0);
        }
        o.fixed[LOG_SIGMA] = Some(f64::NEG_INFINITY);
        o.starts = 1;
        o
    }

    fn free(&self) -> Vec<usize> {
        (0..N_CRE).filter(|&k| self.fixed[k].is_none()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreFit {
    pub fit: FitResult,
    pub params: CreParams,
    /// Quadrature order of the reported estimates.
    pub order: usize,
    /// Largest move of any estimate at the last doubling.
    pub order_change: f64,
    /// Log-likelihood of the best run from every start, in start order.
    pub start_logliks: Vec<f64>,
}

struct Run {
    x: Vec<f64>,
    loglik: f64,
    converged: bool,
    quasi_separation: bool,
    iterations: usize,
    trace: Vec<f64>,
}

fn run_once(table: &SequenceTable, quad: &QuadratureRule, opts: &CreOptions, start: &[f64]) -> Run {
    let free = opts.free();
    let scale = table.total().max(1.0);
    let full = |z: &[f64]| {
        let mut th = [0.0; N_CRE];
        for k in 0..N_CRE {
            th[k] = opts.fixed[k].unwrap_or(0.0);
        }
        for (i, &k) in free.iter().enumerate() {
            th[k] = z[i];
        }
        th
    };
    let z0: Vec<f64> = free.iter().map(|&k| start[k]).collect();
    let out = minimize(
        |z| {
            let (ll, g) = cre_loglik_grad(table, &full(z), quad);
            (-ll / scale, free.iter().map(|&k| -g[k] / scale).collect())
        },
        &z0,
        &opts.optim,
    );
    Run {
        x: full(&out.x).to_vec(),
        loglik: -out.value * scale,
        converged: out.converged,
        quasi_separation: out.quasi_separation,
        iterations: out.iterations,
        trace: out.trace.iter().map(|v| -v * scale).collect(),
    }
}

/// Hessian of the log-likelihood over the free parameters by central
/// differences of the analytic gradient.
fn free_hessian(table: &SequenceTable, quad: &QuadratureRule, theta: &[f64], free: &[usize]) -> DMatrix<f64> {
    let m = free.len();
    let mut h = DMatrix::<f64>::zeros(m, m);
    for (j, &k) in free.iter().enumerate() {
        let step = 1e-5 * theta[k].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[k] += step;
        dn[k] -= step;
        let gu = cre_loglik_grad(table, &up, quad).1;
        let gd = cre_loglik_grad(table, &dn, quad).1;
        for (i, &l) in free.iter().enumerate() {
            h[(i, j)] = (gu[l] - gd[l]) / (2.0 * step);
        }
    }
    symmetrize(&h)
}

fn check_options(opts: &CreOptions) -> Result<()> {
    if opts.order == 0 || opts.max_order < opts.order || opts.starts == 0 {
        return Err(Error::InvalidInput("CRE options need a positive order, max_order >= order and at least one start".into()));
    }
    for k in 0..LOG_SIGMA {
        if matches!(opts.fixed[k], Some(v) if !v.is_finite()) {
            return Err(Error::InvalidInput(format!("fixed value of {} must be finite", CRE_NAMES[k])));
        }
    }
    Ok(())
}

/// Multi-start maximisation at one quadrature order; the first start is
/// `opts.start`, the others add uniform `[-1, 1]` perturbations.
fn best_of_starts(table: &SequenceTable, quad: &QuadratureRule, opts: &CreOptions, first: &[f64]) -> (Run, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<Run> = None;
    let mut lls = Vec::with_capacity(opts.starts);
    for s in 0..opts.starts {
        let mut start = first.to_vec();
        if s > 0 {
            for v in start.iter_mut() {
                *v += rng.random_range(-1.0..1.0);
            }
        }
        let run = run_once(table, quad, opts, &start);
        lls.push(run.loglik);
        let better = match &best {
            None => true,
            Some(b) => run.loglik.is_finite() && (run.loglik > b.loglik || !b.loglik.is_finite()),
        };
        if better {
            best = Some(run);
        }
    }
    (best.expect("at least one start"), lls)
}

/// Maximum likelihood on a table of (possibly fractional) sequence weights.
///
/// The quadrature order starts at `opts.order` and doubles until no estimate
/// moves more than `opts.order_tol`; each doubling restarts from the
/// previous optimum.
pub fn fit_cre_table(table: &SequenceTable, opts: &CreOptions) -> Result<CreFit> {
    check_options(opts)?;
    if table.total() <= 0.0 {
        return Err(Error::NoInformation("empty sequence table".into()));
    }
    let sigma_fixed = opts.fixed[LOG_SIGMA].is_some_and(|v| v == f64::NEG_INFINITY);
    let mut order = opts.order;
    let mut quad = QuadratureRule::gauss_hermite(order)?;
    let (mut run, start_logliks) = best_of_starts(table, &quad, opts, &opts.start);
    let mut change = 0.0;
    while !sigma_fixed && order < opts.max_order {
        let next = QuadratureRule::gauss_hermite(2 * order)?;
        let refined = run_once(table, &next, opts, &run.x);
        change = run
            .x
            .iter()
            .zip(&refined.x)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max);
        order *= 2;
        quad = next;
        run = refined;
        if change < opts.order_tol {
            break;
        }
    }
    let free = opts.free();
    let h = free_hessian(table, &quad, &run.x, &free);
    let neg: DMatrix<f64> = -&h;
    let mut covariance = DMatrix::<f64>::zeros(N_CRE, N_CRE);
    match inverse_spd(&neg) {
        Ok(c) => {
            for (i, &k) in free.iter().enumerate() {
                for (j, &l) in free.iter().enumerate() {
                    covariance[(k, l)] = c[(i, j)];
                }
            }
        }
        Err(e) if run.converged && !run.quasi_separation => return Err(e),
        Err(_) => covariance.fill(f64::NAN),
    }
    let params = CreParams::from_vector(&run.x)?;
    Ok(CreFit {
        fit: FitResult {
            names: CRE_NAMES.iter().map(|s| s.to_string()).collect::<Vec<String>>(),
            estimates: run.x,
            covariance,
            loglik: run.loglik,
            converged: run.converged && (sigma_fixed || change < opts.order_tol),
            iterations: run.iterations,
            quasi_separation: run.quasi_separation,
            n_obs: table.total() as usize,
            trace: run.trace,
        },
        params,
        order,
        order_change: change,
        start_logliks,
    })
}

pub fn fit_cre(panel: &Panel, opts: &CreOptions) -> Result<CreFit> {
    if panel.covariate_dim() > 0 {
        return Err(Error::InvalidInput("the CRE estimator does not take covariates".into()));
    }
    fit_cre_table(&panel.sequence_table()?, opts)
}

/// Maximiser of the expected CRE log-likelihood when data come from the
/// restricted dynamic model with effect law `dist` and independent fair
/// initial outcomes. The expectation is an exact sum over sequences, and
/// normal laws are integrated at the current quadrature order.
pub fn cre_plim(truth: &CommonParams, dist: &HeterogeneityDist, t: usize, opts: &CreOptions) -> Result<CreFit> {
    check_options(opts)?;
    if !truth.beta1.is_empty() || !truth.beta2.is_empty() {
        return Err(Error::InvalidInput("the CRE probability limit has no covariates".into()));
    }
    let spec = InitialSpec::default();
    let normal = matches!(dist, HeterogeneityDist::NormalLinear { .. });
    let mut order = opts.order;
    let quad = QuadratureRule::gauss_hermite(order)?;
    let table = expected_table(truth, dist, t, true, &spec, &quad)?;
    let mut start = opts.start;
    if start == [0.0; N_CRE] {
        // the truth is a natural first start for the common parameters
        let g = truth.gamma.to_array();
        start[..4].copy_from_slice(&g);
        start[4] = truth.rho;
        start[5] = truth.kappa;
    }
    let mut local = opts.clone();
    local.max_order = order;
    let (mut run, start_logliks) = best_of_starts(&table, &quad, &local, &start);
    let mut change = 0.0;
    let mut fit = None;
    while order < opts.max_order {
        order *= 2;
        let q = QuadratureRule::gauss_hermite(order)?;
        let table = if normal { expected_table(truth, dist, t, true, &spec, &q)? } else { table.clone() };
        local.order = order;
        local.max_order = order;
        local.starts = 1;
        local.start.copy_from_slice(&run.x);
        let f = fit_cre_table(&table, &local)?;
        change = run
            .x
            .iter()
            .zip(&f.fit.estimates)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max);
        run.x = f.fit.estimates.clone();
        fit = Some(f);
        if change < opts.order_tol {
            break;
        }
    }
    let mut fit = match fit {
        Some(f) => f,
        None => {
            local.order = order;
            local.max_order = order;
            local.starts = 1;
            local.start.copy_from_slice(&run.x);
            fit_cre_table(&table, &local)?
        }
    };
    fit.fit.converged &= change < opts.order_tol || order == opts.order;
    fit.order_change = change;
    fit.start_logliks = start_logliks;
    Ok(fit)
}

/// The six reported quantities `gamma11, gamma12, gamma21, gamma22, rho,
/// kappa` of a CRE fit.
pub fn headline(fit: &CreFit) -> [f64; 6] {
    let e = &fit.fit.estimates;
    [e[0], e[1], e[2], e[3], e[4], e[5]]
}
