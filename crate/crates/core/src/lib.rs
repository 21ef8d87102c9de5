//! Stream-native online learning with certified unlearning.
//!
//! The crate couples an online L-BFGS learner with a symmetric unlearner on a
//! shared curvature memory, governed by a deletion-capacity odometer that
//! accounts a zCDP budget and calibrates per-delete Gaussian noise. On top of
//! the state machine sit closed-form bound calculators, reference baselines,
//! seeded stream generators, and an experiment harness with exact regret
//! accounting.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod lbfgs;
pub mod model;
pub mod odometer;
pub mod pair;
pub mod stream;
pub mod theory;

mod vecops;

pub use error::MpError;
pub use model::{HyperParams, LossKind, LossModel, WeightVector};
