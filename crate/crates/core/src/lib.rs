#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Estimation toolbox for the dynamic simultaneous bivariate logit with
//! household fixed effects.

extern crate alloc;

pub mod appendix;
pub mod bootstrap;
pub mod cmle;
pub mod cre;
pub mod discovery;
pub mod error;
pub mod fit;
pub mod gmm;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod panel;
pub mod pooled;
pub mod quadrature;
pub mod simulate;

pub use cre::{cre_plim, fit_cre, CreFit, CreOptions, CreParams};
pub use error::{Error, Result};
pub use fit::FitResult;
pub use model::{
    cell_log_probs, conditional_prob, enumerate_sequences, joint_prob_static, logistic, sequence_log_prob,
    sequence_prob, transition_log_probs, transition_prob, CommonParams, CovariatePath, FixedEffects, Gamma, Pair,
    PairSequence, Spouse, INITIAL_PAIRS,
};
pub use optim::{minimize, OptimOptions, OptimOutcome};
pub use panel::{Household, Panel, SequenceTable};
pub use quadrature::QuadratureRule;
pub use simulate::{simulate_panel, HeterogeneityDist};
