//! Pooled (no fixed effects) estimators of the simultaneous logit.
//!
//! Static and dynamic models share one likelihood: each observation has two
//! linear indices `v1 = x1'b1`, `v2 = x2'b2` and the association `rho`. In the
//! dynamic model lagged outcomes are just extra columns of `x1`, `x2`. The
//! per-observation log-likelihood is an exponential family in
//! `(c1, c2, c1 c2)`, so the Hessian is available in closed form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::linalg::{has_full_column_rank, inverse_spd};
use crate::model::{cell_log_probs, dot};
use crate::optim::{minimize, OptimOptions};
use crate::panel::Panel;

/// One observation of the pair with its design rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateObs {
    pub y1: u8,
    pub y2: u8,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BivariateDesign {
    pub obs: Vec<BivariateObs>,
    pub names1: Vec<String>,
    pub names2: Vec<String>,
}

impl BivariateDesign {
    pub fn dim(&self) -> usize {
        self.names1.len() + self.names2.len() + 1
    }

    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.names1.iter().chain(self.names2.iter()).cloned().collect();
        n.push("rho".to_string());
        n
    }

    fn validate(&self) -> Result<()> {
        if self.obs.is_empty() {
            return Err(Error::InvalidInput("no observations".into()));
        }
        let (k1, k2) = (self.names1.len(), self.names2.len());
        for o in &self.obs {
            if o.x1.len() != k1 || o.x2.len() != k2 {
                return Err(Error::DimensionMismatch {
                    what: "design row",
                    expected: k1 + k2,
                    got: o.x1.len() + o.x2.len(),
                });
            }
            if o.y1 > 1 || o.y2 > 1 {
                return Err(Error::InvalidInput("outcomes must be 0 or 1".into()));
            }
        }
        let r1: Vec<&[f64]> = self.obs.iter().map(|o| o.x1.as_slice()).collect();
        let r2: Vec<&[f64]> = self.obs.iter().map(|o| o.x2.as_slice()).collect();
        if !has_full_column_rank(&r1, k1) || !has_full_column_rank(&r2, k2) {
            return Err(Error::InvalidInput("design matrix is rank deficient".into()));
        }
        Ok(())
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], f64) {
        let k1 = self.names1.len();
        let k2 = self.names2.len();
        (&theta[..k1], &theta[k1..k1 + k2], theta[k1 + k2])
    }

    /// Summed log-likelihood and its gradient.
    pub fn loglik_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (b1, b2, rho) = self.split(theta);
        let k1 = b1.len();
        let mut ll = 0.0;
        let mut g = vec![0.0; theta.len()];
        for o in &self.obs {
            let lc = cell_log_probs(dot(b1, &o.x1), dot(b2, &o.x2), rho);
            ll += lc[2 * o.y1 as usize + o.y2 as usize];
            let (r1, r2, r12) = residuals(o, &lc);
            for (gi, x) in g[..k1].iter_mut().zip(&o.x1) {
                *gi += r1 * x;
            }
            for (gi, x) in g[k1..k1 + b2.len()].iter_mut().zip(&o.x2) {
                *gi += r2 * x;
            }
            *g.last_mut().unwrap() += r12;
        }
        (ll, g)
    }

    /// Per-observation score vectors.
    pub fn scores(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let (b1, b2, rho) = self.split(theta);
        self.obs
            .iter()
            .map(|o| {
                let lc = cell_log_probs(dot(b1, &o.x1), dot(b2, &o.x2), rho);
                let (r1, r2, r12) = residuals(o, &lc);
                let mut s: Vec<f64> = o.x1.iter().map(|x| r1 * x).collect();
                s.extend(o.x2.iter().map(|x| r2 * x));
                s.push(r12);
                s
            })
            .collect()
    }

    /// Hessian of the summed log-likelihood (negative semidefinite).
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let (b1, b2, rho) = self.split(theta);
        let (k1, k2) = (b1.len(), b2.len());
        let p = theta.len();
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut row = vec![0.0; p];
        for o in &self.obs {
            let lc = cell_log_probs(dot(b1, &o.x1), dot(b2, &o.x2), rho);
            let p11 = libm::exp(lc[3]);
            let q1 = libm::exp(lc[2]) + p11;
            let q2 = libm::exp(lc[1]) + p11;
            // covariance of (c1, c2, c1 c2)
            let cov = [
                [q1 * (1.0 - q1), p11 - q1 * q2, p11 * (1.0 - q1)],
                [p11 - q1 * q2, q2 * (1.0 - q2), p11 * (1.0 - q2)],
                [p11 * (1.0 - q1), p11 * (1.0 - q2), p11 * (1.0 - p11)],
            ];
            // which natural parameter each coefficient loads on
            for (i, r) in row.iter_mut().enumerate() {
                *r = if i < k1 {
                    o.x1[i]
                } else if i < k1 + k2 {
                    o.x2[i - k1]
                } else {
                    1.0
                };
            }
            let slot = |i: usize| {
                if i < k1 {
                    0
                } else if i < k1 + k2 {
                    1
                } else {
                    2
                }
            };
            for i in 0..p {
                for j in 0..=i {
                    let v = row[i] * row[j] * cov[slot(i)][slot(j)];
                    h[(i, j)] -= v;
                    if i != j {
                        h[(j, i)] -= v;
                    }
                }
            }
        }
        h
    }

    pub fn clusters(&self) -> Vec<usize> {
        self.obs.iter().map(|o| o.cluster).collect()
    }
}

fn residuals(o: &BivariateObs, lc: &[f64; 4]) -> (f64, f64, f64) {
    let p11 = libm::exp(lc[3]);
    let q1 = libm::exp(lc[2]) + p11;
    let q2 = libm::exp(lc[1]) + p11;
    let (c1, c2) = (o.y1 as f64, o.y2 as f64);
    (c1 - q1, c2 - q2, c1 * c2 - p11)
}

/// A pooled fit together with what the sandwich needs.
#[derive(Debug, Clone)]
pub struct PooledFit {
    pub fit: FitResult,
    pub hessian: DMatrix<f64>,
    pub design: BivariateDesign,
}

impl PooledFit {
    /// Sandwich covariance clustered on the design's cluster ids.
    pub fn clustered_vcov(&self) -> Result<DMatrix<f64>> {
        clustered_vcov(
            &self.hessian,
            &self.design.scores(&self.fit.estimates),
            &self.design.clusters(),
        )
    }
}

/// Maximum likelihood for a bivariate design.
pub fn fit_bivariate(design: BivariateDesign, opts: &OptimOptions) -> Result<PooledFit> {
    design.validate()?;
    let p = design.dim();
    let out = minimize(
        |th| {
            let (ll, g) = design.loglik_grad(th);
            (-ll, g.into_iter().map(|v| -v).collect())
        },
        &vec![0.0; p],
        opts,
    );
    let hessian = design.hessian(&out.x);
    let neg: DMatrix<f64> = -&hessian;
    let covariance = match inverse_spd(&neg) {
        Ok(c) => c,
        Err(e) if out.converged && !out.quasi_separation => return Err(e),
        Err(_) => DMatrix::from_element(p, p, f64::NAN),
    };
    let fit = FitResult {
        names: design.names(),
        estimates: out.x,
        covariance,
        loglik: -out.value,
        converged: out.converged,
        iterations: out.iterations,
        quasi_separation: out.quasi_separation,
        n_obs: design.obs.len(),
        trace: out.trace.iter().map(|v| -v).collect(),
    };
    Ok(PooledFit {
        fit,
        hessian,
        design,
    })
}

/// A cross-sectional observation of the static model.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticObs {
    pub y1: u8,
    pub y2: u8,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub cluster: usize,
}

/// Static simultaneous logit by maximum likelihood. Include a column of
/// ones in `x1`/`x2` for intercepts.
pub fn fit_static_ss(obs: &[StaticObs], names1: Vec<String>, names2: Vec<String>, opts: &OptimOptions) -> Result<PooledFit> {
    let design = BivariateDesign {
        obs: obs
            .iter()
            .map(|o| BivariateObs {
                y1: o.y1,
                y2: o.y2,
                x1: o.x1.clone(),
                x2: o.x2.clone(),
                cluster: o.cluster,
            })
            .collect(),
        names1,
        names2,
    };
    fit_bivariate(design, opts)
}

/// Which lagged outcomes enter the dynamic pooled model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagStructure {
    pub own: bool,
    pub cross: bool,
}

impl Default for LagStructure {
    fn default() -> Self {
        Self {
            own: true,
            cross: true,
        }
    }
}

/// Design of the dynamic pooled model: every transition `t = 1..=T` of every
/// household is an observation, clustered by household.
pub fn dynamic_design(panel: &Panel, lags: LagStructure, intercept: bool) -> Result<BivariateDesign> {
    let t = panel
        .periods()
        .ok_or_else(|| Error::InvalidInput("empty panel".into()))?;
    let k = panel.covariate_dim();
    let mut names1 = Vec::new();
    let mut names2 = Vec::new();
    if intercept {
        names1.push("const1".to_string());
        names2.push("const2".to_string());
    }
    for j in 0..k {
        names1.push(format!("x1_{}", j + 1));
        names2.push(format!("x2_{}", j + 1));
    }
    if lags.own {
        names1.push("gamma11".to_string());
    }
    if lags.cross {
        names1.push("gamma12".to_string());
        names2.push("gamma21".to_string());
    }
    if lags.own {
        names2.push("gamma22".to_string());
    }

    let mut obs = Vec::with_capacity(panel.len() * t);
    for (hi, h) in panel.households.iter().enumerate() {
        for s in 1..=t {
            let (prev1, prev2) = h.seq.at(s - 1);
            let (cur1, cur2) = h.seq.at(s);
            let (xr1, xr2) = h.x.row(s);
            let mut x1 = Vec::with_capacity(names1.len());
            let mut x2 = Vec::with_capacity(names2.len());
            if intercept {
                x1.push(1.0);
                x2.push(1.0);
            }
            x1.extend_from_slice(xr1);
            x2.extend_from_slice(xr2);
            if lags.own {
                x1.push(prev1 as f64);
            }
            if lags.cross {
                x1.push(prev2 as f64);
                x2.push(prev1 as f64);
            }
            if lags.own {
                x2.push(prev2 as f64);
            }
            obs.push(BivariateObs {
                y1: cur1,
                y2: cur2,
                x1,
                x2,
                cluster: hi,
            });
        }
    }
    Ok(BivariateDesign { obs, names1, names2 })
}

/// Dynamic simultaneous logit with lagged outcomes as regressors.
pub fn fit_dynamic_ss(panel: &Panel, lags: LagStructure, intercept: bool, opts: &OptimOptions) -> Result<PooledFit> {
    fit_bivariate(dynamic_design(panel, lags, intercept)?, opts)
}

/// Cluster-robust sandwich `A^-1 (sum_c s_c s_c') A^-1` with `A = -H`.
pub fn clustered_vcov(hessian: &DMatrix<f64>, scores: &[Vec<f64>], clusters: &[usize]) -> Result<DMatrix<f64>> {
    if scores.len() != clusters.len() {
        return Err(Error::DimensionMismatch {
            what: "cluster ids",
            expected: scores.len(),
            got: clusters.len(),
        });
    }
    let p = hessian.nrows();
    let bread = inverse_spd(&(-hessian))?;
    let mut sums: alloc::collections::BTreeMap<usize, Vec<f64>> = alloc::collections::BTreeMap::new();
    for (s, c) in scores.iter().zip(clusters) {
        let acc = sums.entry(*c).or_insert_with(|| vec![0.0; p]);
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for s in sums.values() {
        for i in 0..p {
            for j in 0..p {
                meat[(i, j)] += s[i] * s[j];
            }
        }
    }
    Ok(&bread * meat * &bread)
}

/// Log odds ratio of the 2x2 table. Every cell must be strictly positive
/// and the cells must sum to one.
pub fn rho_from_cells(p11: f64, p10: f64, p01: f64, p00: f64) -> Result<f64> {
    for (p, name) in [(p11, "p11"), (p10, "p10"), (p01, "p01"), (p00, "p00")] {
        if !(p > 0.0) {
            return Err(Error::DegenerateCell(name));
        }
    }
    let total = p11 + p10 + p01 + p00;
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("cells sum to {total}, not 1")));
    }
    Ok(libm::log(p11) + libm::log(p00) - libm::log(p01) - libm::log(p10))
}

/// Sample analogue of [`rho_from_cells`] from counts, with optional additive
/// (Laplace) smoothing; `smoothing = 0` rejects empty cells.
pub fn rho_from_counts(n11: f64, n10: f64, n01: f64, n00: f64, smoothing: f64) -> Result<f64> {
    let c = [n11 + smoothing, n10 + smoothing, n01 + smoothing, n00 + smoothing];
    let total: f64 = c.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoInformation("empty table".into()));
    }
    rho_from_cells(c[0] / total, c[1] / total, c[2] / total, c[3] / total)
}

/// Correlation of the two outcomes when both marginals equal one half.
///
/// With `p11 = p00 = q` and `p10 = p01 = 1/2 - q`, `rho = 2 log(q / (1/2 - q))`
/// and the correlation `4q - 1` simplifies to `tanh(rho / 4)`.
pub fn rho_to_correlation(rho: f64) -> f64 {
    libm::tanh(rho / 4.0)
}
