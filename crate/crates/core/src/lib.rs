//! Semi-supervised classification with a dynamic loss threshold.
//!
//! Training runs in two stages. A warm-up stage fits the model on the small
//! labeled set with plain SGD. A selection stage then feeds unlabeled examples
//! through a pseudo-labeling pipeline and keeps only those whose loss falls
//! below a geometrically shrinking threshold `rho_t = C * gamma^-(t-1) * rho_hat`.
//!
//! The crate is organised bottom-up:
//!
//! - [`models`]: softmax-linear and one-hidden-layer tanh classifiers with
//!   analytic gradients of the cross-entropy loss.
//! - [`data`]: synthetic generators, label-budget splits and `qP + (1-q)Q`
//!   unlabeled pools.
//! - [`augment`]: weak/strong perturbations, pseudo labels, sharpening and the
//!   fixed-confidence baseline loss.
//! - [`dash`]: threshold schedules, truncated gradients and both training
//!   loops (growing-batch theory mode and epoch-based practice mode).
//! - [`theory`]: constants of the convergence analysis and a harness that
//!   checks them on quadratic problems satisfying the PL inequality.
//! - [`io`]: the on-disk formats (metrics CSV, checkpoints).

pub mod augment;
pub mod dash;
pub mod data;
mod error;
pub mod io;
pub mod models;
pub mod rng;
pub mod theory;

pub use error::{DashError, Result};
