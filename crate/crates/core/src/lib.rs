//! Online batch selection for training small classifiers, centred on
//! reducible holdout loss: the training loss of a candidate minus its loss
//! under a model trained only on held-out data.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`autograd`], [`nn`], [`optim`]: dense numerics, reverse-mode
//!   differentiation, MLPs and optimizers.
//! * [`data`]: datasets, IDX loading, synthetic clusters, noise/relevance/
//!   duplication transforms.
//! * [`il`]: irreducible-loss models and per-example loss tables.
//! * [`selection`]: scoring rules and the top-k / importance samplers.
//! * [`trainer`]: the selection training loop, evaluation and composition
//!   tracking, with CSV run records.
//! * [`ladder`]: rank-correlation comparison of cheaper selection pipelines
//!   against an ensemble-based reference.

pub mod autograd;
pub mod data;
pub mod error;
pub mod il;
pub mod ladder;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod selection;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
