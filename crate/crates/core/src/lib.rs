//! Variable selection for the partially linear single-index varying-coefficient
//! model
//!
//! ```text
//! Y = θᵀU + Σ_k g_k(βᵀX) Z_k + ε,   ‖β‖ = 1,
//! ```
//!
//! with the coefficient functions `g_k` expanded in clamped B-splines and
//! SCAD or LASSO penalties on `β`, `θ` and the function norms `‖g_k‖`.
//!
//! The crate is organised bottom-up:
//!
//! - [`spline`]: knot vectors, basis and derivative evaluation, Gram matrices.
//! - [`penalty`]: SCAD/LASSO values, derivatives and LQA weight matrices.
//! - [`model`]: datasets, the `β(φ)` reparameterization and design rows.
//! - [`estimator`]: the alternating penalized least-squares algorithm.
//! - [`tuning`]: adaptive tuning parameters and cross-validated `(K, λ)`.
//! - [`simulation`]: the Monte Carlo design, comparators and metrics.
//! - [`io`], [`bodyfat`], [`manifest`]: CSV handling, the body-fat pipeline
//!   and reproducibility manifests used by the `plsivc` binary.

pub mod bodyfat;
pub mod error;
pub mod estimator;
pub mod io;
pub mod manifest;
pub mod model;
pub mod penalty;
pub mod simulation;
pub mod spline;
pub mod tuning;

pub use error::{Error, ErrorKind, Result};
pub use estimator::{fit_penalized, fit_unpenalized, FitConfig, FitResult, Support};
pub use model::{Coefficients, Dataset, IndexParam};
pub use penalty::{PenaltyFamily, PenaltySpec};
pub use spline::KnotVector;
