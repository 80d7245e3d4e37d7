//! Bayesian optimization in high dimensions via random embeddings.
//!
//! The core idea: draw a random matrix `A` (D x d, standard normal entries),
//! optimize a Gaussian-process surrogate over the low-dimensional box
//! `Y = [-sqrt(d), sqrt(d)]^d`, and evaluate the objective at the box
//! projection of `A y` back in the original D-dimensional space. For
//! objectives with low effective dimensionality this preserves the optimum
//! with high probability while the surrogate model only ever sees `d`
//! dimensions, so `D` can be made absurdly large (10^9) at no extra cost.
//!
//! The crate provides:
//!
//! - [`embedding`]: the random embedding `A`, box projection, and the
//!   categorical decoding used for discrete parameter spaces;
//! - [`kernels`]: squared-exponential covariances over the embedded space,
//!   the projected high-dimensional variant, a Hamming-distance kernel for
//!   categorical vectors, and a skewed variant with a full length-scale
//!   matrix;
//! - [`gp`]: exact zero-mean Gaussian-process regression (Cholesky based);
//! - [`acquisition`]: expected improvement / UCB and their global
//!   maximization over a box;
//! - [`inner_opt`]: the two derivative-free inner optimizers (DIRECT and
//!   CMA-ES) used to maximize acquisition functions and tune
//!   hyperparameters;
//! - [`hyperopt`]: the exploration-guard length-scale controller;
//! - [`driver`]: the optimization loop (random-embedding runs, plain BO,
//!   random search, interleaved restarts);
//! - [`objectives`]: benchmark objectives (embedded/rotated Branin, a
//!   categorical test problem, external commands);
//! - [`theory`]: Monte-Carlo checks of the embedding guarantees;
//! - [`experiment`]: replicated experiment execution, aggregation, CSV
//!   reports.

pub mod acquisition;
pub mod driver;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod hyperopt;
pub mod inner_opt;
pub mod kernels;
pub mod objectives;
pub mod rng;
pub mod stats;
pub mod theory;

pub use acquisition::{AcquisitionMax, AcquisitionSpec, Incumbent, Surrogate};
pub use driver::{KernelChoice, Mode, RunConfig, RunReport, TraceRow};
pub use embedding::{CategoricalTable, Embedding};
pub use error::{Error, EvalError, Result};
pub use experiment::{ExperimentArtifacts, ExperimentConfig, VerifyReport};
pub use gp::{Dataset, GpModel};
pub use inner_opt::{Bounds, InnerOptBudget};
pub use kernels::{KernelSpec, LengthScale};
pub use objectives::{Objective, Point, Sense};
