//! Implicit class-wise semantic augmentation for domain adaptation, at desk
//! scale and fully checkable.
//!
//! A classifier is trained on a labeled source domain and adapted to an
//! unlabeled target domain. For every class, the feature mean difference
//! between domains and the target intra-class covariance define a Gaussian
//! over feature transformations; instead of sampling augmented features, an
//! upper bound on the expected cross-entropy over infinitely many of them is
//! minimized in closed form, together with a mutual-information term on the
//! target predictions. Class statistics come from either a feature memory
//! that caches the latest feature and (pseudo-)label per sample, or an
//! iterative moment estimator.
//!
//! Everything the training loop relies on is verified against independent
//! oracles: a Monte-Carlo sampler checks that the closed-form loss really is
//! an upper bound, finite differences check every analytic gradient, and an
//! ideal full-dataset estimator measures the bias of the practical ones.
//!
//! # Library layout
//!
//! - [`linalg`]: dense `f64` vectors and matrices, covariance, Cholesky,
//!   Gaussian sampling.
//! - [`dataset`]: two-domain datasets, the rotated two-moons task, CSV IO,
//!   batching.
//! - [`network`]: a small MLP with explicit forward records, analytic
//!   backward, SGD with momentum, checkpoints.
//! - [`stats`]: the feature memory, iterative moment estimator, ideal
//!   estimator, and estimation-bias measurement.
//! - [`loss`]: the augmentation schedule, augmented logits, the closed-form
//!   surrogate loss, and the mutual-information loss.
//! - [`oracle`]: Monte-Carlo bound verification, the moment-generating-
//!   function identity check, and finite-difference gradient audits.
//! - [`runner`]: training configs and loops, evaluation, the estimator-bias
//!   experiment, the target-fraction sweep, decision-boundary dumps.
//!
//! # Runnable examples
//!
//! Each major capability has a runnable example under `examples/`:
//!
//! ```text
//! cargo run --release --example two_moons        # adapt across a 30 degree rotation
//! cargo run --release --example verify_bound     # Monte-Carlo check of the surrogate bound
//! cargo run --release --example gradient_audit   # finite-difference audit of both losses
//! cargo run --release --example estimator_bias   # memory vs iterative estimator drift
//! cargo run --release --example rho_sweep        # accuracy vs target data fraction
//! ```
//!
//! The `semaug` binary wraps the same entry points behind `train`, `verify`,
//! `bias`, `sweep`, and `boundary` subcommands.

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod oracle;
pub mod runner;
pub mod stats;

pub use error::{Error, Result};
