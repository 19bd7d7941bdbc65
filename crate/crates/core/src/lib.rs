//! Building blocks for studying importance-weighted training: a small
//! reverse-mode tensor engine, the logistic-regression / MLP / CNN model
//! families, weighted binary cross-entropy with momentum SGD, synthetic and
//! CIFAR-10 data pipelines, and the measurement geometry (fractions,
//! accuracies, exact 2-D max-margin separators, importance-weighted means).

pub mod cifar;
pub mod data;
pub mod datagen;
pub mod error;
pub mod grad;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use grad::{NodeId, Padding, Tape, Tensor};
