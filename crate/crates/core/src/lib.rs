#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Generalized projected gradient descent for low-dimensional recovery.
//!
//! The iteration
//!
//! ```text
//! x_{n+1} = P(x_n) - mu * L(A P(x_n) - y)
//! ```
//!
//! alternates a generalized projection `P` onto a model set with a gradient
//! step whose back-projection `L` need not be `A^T`. The crate provides the
//! pieces to build and analyse such solvers:
//!
//! - [`operators`]: Gaussian measurement operators, masked and
//!   residual-thresholded back-projections, the joint operator `(A, I)`.
//! - [`models`]: hard thresholding, the degraded family `P_alpha`, product
//!   projections.
//! - [`gpgd`]: the iteration itself with per-iteration traces.
//! - [`constants`]: restricted isometry and restricted Lipschitz constants
//!   and the resulting error bound.
//! - [`metrics`]: post-optimum stability metrics and centile summaries.
//! - [`nipr`]: a small trainable autoencoder prior with a normalized
//!   idempotence penalty.
//! - [`harness`]: seeded experiment drivers that emit CSV tables.
//!
//! ```
//! use gpgd::gpgd::{gpgd_run, GpgdConfig};
//! use gpgd::models::Projection;
//! use gpgd::operators::{gaussian_operator, BackProjection};
//!
//! let a = gaussian_operator(60, 120, 1).unwrap();
//! let mut truth = vec![0.0; 120];
//! truth[3] = 1.0;
//! truth[70] = -2.0;
//! let y = a.apply(&truth).unwrap();
//! let cfg = GpgdConfig { mu: 1.0, max_iters: 200, ..Default::default() };
//! let trace = gpgd_run(
//!     &vec![0.0; 120],
//!     &Projection::hard_threshold(2),
//!     &BackProjection::adjoint(&a),
//!     &a,
//!     &y,
//!     &cfg,
//!     Some(&truth),
//! )
//! .unwrap();
//! assert!(*trace.errors().unwrap().last().unwrap() < 1e-8);
//! ```

pub mod constants;
pub mod error;
pub mod gpgd;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod nipr;
pub mod operators;
pub mod rng;

pub use error::{Error, Result};
