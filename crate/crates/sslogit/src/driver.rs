//! Estimation over group × window cells.
//!
//! Cells run as independent rayon jobs and come back in cell order, and
//! bootstrap replicates are merged in replicate order, so reports do not
//! depend on scheduling.

use std::collections::BTreeSet;

use rayon::prelude::*;
use sslogit_core::bootstrap::{expand_table, resample_indices, resampled_table, summarize, ResampleMode};
use sslogit_core::cmle::fit_cmle_table;
use sslogit_core::cre::{fit_cre_table, CreOptions, CRE_NAMES};
use sslogit_core::gmm::{fit_two_step, RhoBounds};
use sslogit_core::pooled::{fit_dynamic_ss, fit_static_ss, LagStructure, StaticObs};
use sslogit_core::{Error, OptimOptions, Panel, SequenceTable};

use crate::config::{Estimator, RunConfig, WindowSpec};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("windows were requested but household {0} has no window key")]
    MissingWindowKey(String),
    #[error("the panel is empty")]
    EmptyPanel,
}

/// A centred window of keys `lo..=hi`. Windows whose full width would run
/// past the observed key range are cut at the range and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub center: i64,
    pub lo: i64,
    pub hi: i64,
    pub truncated: bool,
}

/// Windows centred on `min, min + step, ...` up to `max`. An even width puts
/// the extra key after the centre.
pub fn windows(min: i64, max: i64, spec: WindowSpec, edges: bool) -> Vec<Window> {
    let below = (spec.width - 1) / 2;
    let above = spec.width / 2;
    let mut out = Vec::new();
    let mut c = min;
    while c <= max {
        let (lo, hi) = (c - below, c + above);
        let truncated = lo < min || hi > max;
        if edges || !truncated {
            out.push(Window {
                center: c,
                lo: lo.max(min),
                hi: hi.min(max),
                truncated,
            });
        }
        c += spec.step;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub boot_se: Option<Vec<f64>>,
    pub converged: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Fitted(EstimateSet),
    /// Nothing to estimate (empty cell, no informative households).
    Skipped(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub group: String,
    pub window: Option<Window>,
    pub households: usize,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        match &self.outcome {
            CellOutcome::Fitted(e) => e.converged,
            CellOutcome::Skipped(_) => true,
            CellOutcome::Failed(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub estimator: Estimator,
    pub config_echo: String,
    pub cells: Vec<CellResult>,
}

impl RunReport {
    /// Every cell converged or was skippable.
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(CellResult::ok)
    }
}

/// What an estimator sees: a full panel, or only sequence counts for the
/// covariate-free estimators.
pub enum Sample<'a> {
    Panel(&'a Panel),
    Table(&'a SequenceTable),
}

impl Sample<'_> {
    fn table(&self) -> Result<SequenceTable, Error> {
        match self {
            Sample::Panel(p) => {
                if p.covariate_dim() > 0 {
                    return Err(Error::InvalidInput("this estimator does not take covariates".into()));
                }
                p.sequence_table()
            }
            Sample::Table(t) => Ok((*t).clone()),
        }
    }

    fn panel(&self) -> Result<&Panel, Error> {
        match self {
            Sample::Panel(p) => Ok(p),
            Sample::Table(_) => Err(Error::InvalidInput("pooled estimators need household data".into())),
        }
    }
}

fn table_based(est: Estimator) -> bool {
    matches!(est, Estimator::Cmle | Estimator::CmleRestricted | Estimator::GmmRho | Estimator::Cre)
}

fn static_obs(panel: &Panel) -> Vec<StaticObs> {
    let mut obs = Vec::new();
    for (i, h) in panel.households.iter().enumerate() {
        for s in 0..=h.seq.periods() {
            let (x1, x2) = if s == 0 { (&h.x_initial.0[..], &h.x_initial.1[..]) } else { h.x.row(s) };
            let (y1, y2) = h.seq.at(s);
            obs.push(StaticObs {
                y1,
                y2,
                x1: std::iter::once(1.0).chain(x1.iter().copied()).collect(),
                x2: std::iter::once(1.0).chain(x2.iter().copied()).collect(),
                cluster: i,
            });
        }
    }
    obs
}

fn diag_sqrt(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)].max(0.0).sqrt()).collect()
}

fn cre_options(cfg: &RunConfig) -> CreOptions {
    CreOptions {
        order: cfg.quad_order,
        max_order: cfg.quad_order.max(256),
        seed: cfg.seed,
        ..CreOptions::default()
    }
}

/// One estimator on one sample.
pub fn estimate(est: Estimator, sample: &Sample, cfg: &RunConfig) -> Result<EstimateSet, Error> {
    let opts = OptimOptions::default();
    let set = |names: Vec<String>, estimates: Vec<f64>, se: Vec<f64>, converged: bool, notes: Vec<String>| EstimateSet {
        names,
        estimates,
        se,
        boot_se: None,
        converged,
        notes,
    };
    Ok(match est {
        Estimator::StaticSs => {
            let panel = sample.panel()?;
            let k = panel.covariate_dim();
            let names = |s: usize| {
                std::iter::once(format!("const{s}"))
                    .chain((1..=k).map(|j| format!("x{s}_{j}")))
                    .collect::<Vec<_>>()
            };
            let f = fit_static_ss(&static_obs(panel), names(1), names(2), &opts)?;
            let se = diag_sqrt(&f.clustered_vcov()?);
            let mut notes = Vec::new();
            if f.fit.quasi_separation {
                notes.push("quasi-separation".into());
            }
            set(f.fit.names, f.fit.estimates, se, f.fit.converged, notes)
        }
        Estimator::DynamicPooled => {
            let f = fit_dynamic_ss(sample.panel()?, LagStructure::default(), true, &opts)?;
            let se = diag_sqrt(&f.clustered_vcov()?);
            let mut notes = Vec::new();
            if f.fit.quasi_separation {
                notes.push("quasi-separation".into());
            }
            set(f.fit.names, f.fit.estimates, se, f.fit.converged, notes)
        }
        Estimator::Cmle | Estimator::CmleRestricted => {
            let f = fit_cmle_table(&sample.table()?, est == Estimator::CmleRestricted, &opts)?;
            let se = f.fit.se();
            let share = f.singleton_households / (f.singleton_households + f.informative_households);
            set(
                f.fit.names,
                f.fit.estimates,
                se,
                f.fit.converged,
                vec![format!("singleton share {share:.4}")],
            )
        }
        Estimator::GmmRho => {
            let bounds = RhoBounds {
                low: cfg.rho_low,
                high: cfg.rho_high,
            };
            let f = fit_two_step(&sample.table()?, bounds, &opts)?;
            let mut names = f.first.fit.names.clone();
            names.push("rho".into());
            let mut se = f.first.fit.se();
            se.push(f.gmm.se);
            let mut notes = Vec::new();
            if f.gmm.boundary_flag {
                notes.push("rho at a bound".into());
            }
            if !f.gmm.dropped.is_empty() {
                notes.push(format!("{} moments dropped", f.gmm.dropped.len()));
            }
            let matched = (f.gmm.match_fraction.iter().enumerate())
                .filter(|(i, _)| !f.gmm.dropped.contains(i))
                .map(|(_, m)| *m)
                .fold(f64::INFINITY, f64::min);
            if matched.is_finite() {
                notes.push(format!("min match fraction over retained moments {matched:.4}"));
            }
            notes.push("rho se is conditional on the first stage".into());
            set(names, f.estimates(), se, f.first.fit.converged, notes)
        }
        Estimator::Cre => {
            let f = fit_cre_table(&sample.table()?, &cre_options(cfg))?;
            let se = f.fit.se();
            set(
                CRE_NAMES.iter().map(|s| s.to_string()).collect(),
                f.fit.estimates,
                se,
                f.fit.converged,
                vec![format!("quadrature order {}", f.order)],
            )
        }
    })
}

/// Household bootstrap of `est` on `panel`, replicates in parallel.
/// Replicates that fail or do not converge are dropped and counted.
pub fn bootstrap(
    est: Estimator,
    panel: &Panel,
    point: &EstimateSet,
    replicates: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<sslogit_core::bootstrap::BootstrapResult, Error> {
    let n = panel.len();
    let mut rcfg = cfg.clone();
    rcfg.bootstrap = None;
    let outcomes: Vec<Option<Vec<f64>>> = if table_based(est) && panel.covariate_dim() == 0 {
        let table = panel.sequence_table()?;
        let households = expand_table(&table)?;
        let t = table.periods();
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let idx = resample_indices(n, seed, r, ResampleMode::Independent);
                let rt = resampled_table(t, &households, &idx);
                let fit = if est == Estimator::Cre {
                    // restart from the point estimate instead of multi-starting
                    let mut o = cre_options(cfg);
                    o.starts = 1;
                    o.start.copy_from_slice(&point.estimates);
                    fit_cre_table(&rt, &o).ok().filter(|f| f.fit.converged).map(|f| f.fit.estimates)
                } else {
                    estimate(est, &Sample::Table(&rt), &rcfg)
                        .ok()
                        .filter(|e| e.converged)
                        .map(|e| e.estimates)
                };
                fit
            })
            .collect()
    } else {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let idx = resample_indices(n, seed, r, ResampleMode::Independent);
                let p = panel.select(&idx);
                estimate(est, &Sample::Panel(&p), &rcfg)
                    .ok()
                    .filter(|e| e.converged)
                    .map(|e| e.estimates)
            })
            .collect()
    };
    summarize(outcomes)
}

fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed ^ (cell as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn run_cell(cfg: &RunConfig, panel: &Panel, index: usize, group: &str, window: Option<Window>) -> CellResult {
    let members: Vec<usize> = panel
        .households
        .iter()
        .enumerate()
        .filter(|(_, h)| cfg.group_column.is_none() || h.group == group)
        .filter(|(_, h)| match (window, h.window_key) {
            (Some(w), Some(k)) => (w.lo..=w.hi).contains(&k),
            (Some(_), None) => false,
            (None, _) => true,
        })
        .map(|(i, _)| i)
        .collect();
    let sub = panel.select(&members);
    let result = |outcome| CellResult {
        group: group.to_string(),
        window,
        households: members.len(),
        outcome,
    };
    if sub.is_empty() {
        return result(CellOutcome::Skipped("no households in this cell".into()));
    }
    let mut fitted = match estimate(cfg.estimator, &Sample::Panel(&sub), cfg) {
        Ok(e) => e,
        Err(Error::NoInformation(m)) => return result(CellOutcome::Skipped(m)),
        Err(e) => return result(CellOutcome::Failed(e.to_string())),
    };
    if let Some(b) = cfg.bootstrap {
        match bootstrap(cfg.estimator, &sub, &fitted, b, cell_seed(cfg.seed, index), cfg) {
            Ok(r) => {
                if r.dropped > 0 {
                    fitted.notes.push(format!("{} of {b} bootstrap replicates dropped", r.dropped));
                }
                if let Some(w) = r.warning {
                    fitted.notes.push(w);
                }
                fitted.boot_se = Some(r.se);
            }
            Err(e) => fitted.notes.push(format!("bootstrap failed: {e}")),
        }
    }
    result(CellOutcome::Fitted(fitted))
}

/// All group × window cells of the configuration.
pub fn plan(cfg: &RunConfig, panel: &Panel) -> Result<Vec<(String, Option<Window>)>, DriverError> {
    let groups: Vec<String> = if cfg.group_column.is_some() {
        panel
            .households
            .iter()
            .map(|h| h.group.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        vec!["all".to_string()]
    };
    let wins: Vec<Option<Window>> = match cfg.window {
        None => vec![None],
        Some(spec) => {
            let mut keys = Vec::with_capacity(panel.len());
            for h in &panel.households {
                keys.push(h.window_key.ok_or_else(|| DriverError::MissingWindowKey(h.id.clone()))?);
            }
            let (min, max) = (*keys.iter().min().unwrap(), *keys.iter().max().unwrap());
            windows(min, max, spec, cfg.window_edges).into_iter().map(Some).collect()
        }
    };
    Ok(groups
        .iter()
        .flat_map(|g| wins.iter().map(move |w| (g.clone(), *w)))
        .collect())
}

pub fn run(cfg: &RunConfig, panel: &Panel) -> Result<RunReport, DriverError> {
    cfg.validate()?;
    if panel.is_empty() {
        return Err(DriverError::EmptyPanel);
    }
    let cells = plan(cfg, panel)?;
    let results = cells
        .par_iter()
        .enumerate()
        .map(|(i, (g, w))| run_cell(cfg, panel, i, g, *w))
        .collect();
    Ok(RunReport {
        estimator: cfg.estimator,
        config_echo: cfg.echo(),
        cells: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_year_windows_over_forty_years() {
        let spec = WindowSpec { width: 5, step: 1 };
        let all = windows(1982, 2021, spec, true);
        assert_eq!(all.len(), 40);
        let full: Vec<_> = all.iter().filter(|w| !w.truncated).collect();
        assert_eq!(full.len(), 36);
        assert_eq!((full[0].center, full[0].lo, full[0].hi), (1984, 1982, 1986));
        assert_eq!(full[35].center, 2019);
        assert_eq!((all[0].lo, all[0].hi, all[0].truncated), (1982, 1984, true));
        assert_eq!(windows(1982, 2021, spec, false), full.into_iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn even_width_and_steps() {
        let w = windows(0, 10, WindowSpec { width: 4, step: 3 }, false);
        assert_eq!(
            w.iter().map(|w| (w.lo, w.hi)).collect::<Vec<_>>(),
            vec![(2, 5), (5, 8)]
        );
    }
}
