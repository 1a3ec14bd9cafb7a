//! Weighted complementary-label learning (WCLL).
//!
//! A complementary label marks one class an instance does *not* belong to.
//! This crate builds class-imbalanced complementary-label training sets,
//! trains multi-class classifiers with an inverse-frequency weighted
//! complementary risk, compares against unweighted and resampling baselines,
//! and evaluates the method's estimation-error bound.
//!
//! Module map:
//! - [`numerics`]: dense matrices, seeded RNG streams, stable softmax,
//!   finite-difference gradient oracle.
//! - [`datasets`]: IDX/CIFAR-10 loaders, synthetic Gaussians, imbalanced
//!   subsampling, complementary labelers, resampling baselines.
//! - [`weighting`]: base rates `pi` and loss weights `omega`, plus the
//!   perturbed weightings used by the ablations.
//! - [`loss`]: the weighted complementary loss, empirical risk variants,
//!   and analytic logit gradients.
//! - [`model`]: linear and one-hidden-layer scorers with exact backprop.
//! - [`training`]: mini-batch loop with Adam/SGD and decoupled weight decay.
//! - [`bounds`]: the uniform-deviation and estimation-error bounds with an
//!   empirical Rademacher-complexity estimator.
//! - [`harness`]: experiment orchestration, metrics, CSV/JSON reporting.
//!
//! With the default `parallel` feature, trial sweeps, Monte-Carlo draws and
//! large matrix products fan out over a rayon pool; reductions keep a fixed
//! order so results are byte-identical to the sequential fallback
//! (`--no-default-features`).

pub mod bounds;
pub mod datasets;
pub mod harness;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod training;
pub mod weighting;

pub use datasets::{AlphaVector, ComplementaryDataset, ImbalanceSpec, LabeledDataset};
pub use model::{Architecture, ModelParams};
pub use numerics::{Matrix, SeededRng};

pub use weighting::ClassWeighting;
