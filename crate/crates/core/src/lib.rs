//! Prediction of center-specific treatment effects in multi-center trials
//! with random center intercepts and random treatment effects, and
//! A-optimal choice of the treatment allocation rate for those predictions.
//!
//! The per-center model is `Y_ij = mu_i + alpha_i * x_ij + eps_ij` with
//! `Cov((mu_i, alpha_i)) = sigma^2 * diag(u, v)`. Everything here works in
//! units of `sigma^2`.
//!
//! - [`model`]: dimensions, variance ratios, designs and moment matrices.
//! - [`blup`]: shrinkage weights and predictions (scalar and matrix routes).
//! - [`criterion`]: prediction MSE matrices, the A-criterion and efficiency.
//! - [`optimizer`]: optimal allocation rates, exact rounding and sweeps.
//! - [`simulation`]: Monte Carlo check of the analytic MSE formulas.
//! - [`cli`]: the `hiermed` command-line front end.

pub mod blup;
pub mod cli;
pub mod criterion;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod simulation;

pub use blup::{BlupWeights, CenterPredictions, CenterSummaries};
pub use criterion::{CompoundSymmetricMatrix, CriterionValue, FullMseMatrix};
pub use error::{Error, Result};
pub use model::{ApproxDesign, ExactDesign, ModelDims, MomentMatrix2, SymMatrix2, VarianceRatios};
pub use optimizer::{ExactOptimum, Optimum, SweepAxis, SweepRow, SweepSpec};
pub use simulation::{McReport, SimConfig, SimDataset};
