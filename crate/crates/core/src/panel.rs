//! Panels of households and their sufficient summary for covariate-free
//! estimators.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{cell_index, CovariatePath, Pair, PairSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct Household {
    pub id: String,
    pub seq: PairSequence,
    /// Covariates for periods `1..=T`.
    pub x: CovariatePath,
    /// Period-0 covariates `(x1, x2)`, used only by cross-sectional fits.
    pub x_initial: (Vec<f64>, Vec<f64>),
    pub group: String,
    pub window_key: Option<i64>,
}

impl Household {
    /// Household without covariates, in the default group.
    pub fn bare(id: impl Into<String>, seq: PairSequence) -> Self {
        let t = seq.periods();
        Self {
            id: id.into(),
            seq,
            x: CovariatePath::empty(t),
            x_initial: (Vec::new(), Vec::new()),
            group: String::new(),
            window_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub households: Vec<Household>,
}

impl Panel {
    /// Checks shared `T`, unique ids and consistent covariate shapes.
    pub fn new(households: Vec<Household>) -> Result<Self> {
        let panel = Self { households };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.households.first() else {
            return Ok(());
        };
        let t = first.seq.periods();
        let k = first.x.dim();
        let mut ids = BTreeSet::new();
        for h in &self.households {
            if h.seq.periods() != t {
                return Err(Error::InvalidInput(alloc::format!(
                    "household {} has T={} but the panel has T={t}",
                    h.id,
                    h.seq.periods()
                )));
            }
            if h.x.periods() != t || h.x.dim() != k {
                return Err(Error::InvalidInput(alloc::format!(
                    "household {} has a covariate path of the wrong shape",
                    h.id
                )));
            }
            if !ids.insert(h.id.as_str()) {
                return Err(Error::InvalidInput(alloc::format!("duplicate household id {}", h.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    /// Shared number of periods after the initial one.
    pub fn periods(&self) -> Option<usize> {
        self.households.first().map(|h| h.seq.periods())
    }

    pub fn covariate_dim(&self) -> usize {
        self.households.first().map_or(0, |h| h.x.dim())
    }

    /// Households selected by index (with repetition), for resampling.
    pub fn select(&self, idx: &[usize]) -> Panel {
        Panel {
            households: idx.iter().map(|&i| self.households[i].clone()).collect(),
        }
    }

    pub fn sequence_table(&self) -> Result<SequenceTable> {
        let t = self
            .periods()
            .ok_or_else(|| Error::InvalidInput("empty panel".into()))?;
        let mut table = SequenceTable::new(t);
        for h in &self.households {
            table.add(&h.seq, 1.0)?;
        }
        Ok(table)
    }
}

/// Weighted counts of every `(initial pair, continuation)` cell.
///
/// Without covariates the household sequence is sufficient for every
/// estimator here, so fits run over at most `4^(T+1)` cells instead of
/// households. Weights need not be integers.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTable {
    t: usize,
    counts: [Vec<f64>; 4],
}

impl SequenceTable {
    pub fn new(t: usize) -> Self {
        let n = 1usize << (2 * t);
        Self {
            t,
            counts: [
                alloc::vec![0.0; n],
                alloc::vec![0.0; n],
                alloc::vec![0.0; n],
                alloc::vec![0.0; n],
            ],
        }
    }

    pub fn from_sequences<'a>(t: usize, seqs: impl IntoIterator<Item = &'a PairSequence>) -> Result<Self> {
        let mut table = Self::new(t);
        for s in seqs {
            table.add(s, 1.0)?;
        }
        Ok(table)
    }

    pub fn periods(&self) -> usize {
        self.t
    }

    pub fn add(&mut self, seq: &PairSequence, weight: f64) -> Result<()> {
        if seq.periods() != self.t {
            return Err(Error::DimensionMismatch {
                what: "sequence periods",
                expected: self.t,
                got: seq.periods(),
            });
        }
        self.counts[cell_index(seq.initial())][seq.continuation_code()] += weight;
        Ok(())
    }

    pub fn add_code(&mut self, initial: Pair, code: usize, weight: f64) {
        self.counts[cell_index(initial)][code] += weight;
    }

    pub fn count(&self, initial: Pair, code: usize) -> f64 {
        self.counts[cell_index(initial)][code]
    }

    /// Counts over continuation codes for one initial pair.
    pub fn counts_for(&self, initial: Pair) -> &[f64] {
        &self.counts[cell_index(initial)]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flat_map(|c| c.iter()).sum()
    }

    /// Nonzero cells as `(initial, code, weight)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (Pair, usize, f64)> + '_ {
        crate::model::INITIAL_PAIRS.iter().flat_map(move |&init| {
            self.counts[cell_index(init)]
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(move |(code, w)| (init, code, *w))
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in out.counts.iter_mut() {
            for v in c.iter_mut() {
                *v *= factor;
            }
        }
        out
    }
}
