//! Coresets for soft-margin SVM training via importance sampling.

pub mod bench;
pub mod clustering;
pub mod coreset;
pub mod data;
pub mod datagen;
pub mod error;
pub mod objective;
pub mod par;
pub mod rng;
pub mod sensitivity;
pub mod solver;
pub mod streaming;

pub use data::{Label, LabeledPoint, WeightedDataset};
pub use error::{Error, Result};
pub use objective::{svm_objective, Hyperplane, ObjectiveContext};
