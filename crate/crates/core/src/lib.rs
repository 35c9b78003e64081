//! Diversity-regularized deep ensembles for regression.
//!
//! A small ensemble of heteroskedastic Gaussian MLPs is trained with an
//! auxiliary term that rewards disagreement between member means on inputs
//! drawn from outside the training distribution. The crate covers the
//! network and its hand-derived gradients, ensemble aggregation, the
//! augmentation samplers for each regularizer, the training loop, dataset
//! construction, evaluation statistics and a batch-UCB Bayesian optimization
//! harness. The `modens` binary drives the experiments.

pub mod augment;
pub mod bayesopt;
pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod exec;
pub mod network;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
