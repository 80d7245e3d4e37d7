//! Derivative-free inner optimizers.
//!
//! Acquisition maximization and hyperparameter tuning never see the real
//! objective; they optimize cheap surrogate surfaces, but they must do so
//! deterministically and under an exact evaluation budget. Two
//! complementary global optimizers are provided: [`direct::direct_maximize`]
//! (deterministic space partitioning, good at broad coverage) and
//! [`cmaes::cmaes_maximize`] (seeded evolution strategy, good at local
//! refinement).

pub mod cmaes;
pub mod direct;

pub use cmaes::cmaes_maximize;
pub use direct::direct_maximize;

use crate::error::{Error, Result};

/// An axis-aligned box `[lower_i, upper_i]^n`, the search domain of every
/// inner optimization in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    /// Builds a box from per-coordinate bounds. Every pair must be finite
    /// with `lower < upper`.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(Error::InvalidParameter("bounds must have at least one dimension".into()));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidParameter(format!(
                    "bounds for dimension {i} must be finite with lower < upper (got [{lo}, {hi}])"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The symmetric box `[-half_width, half_width]^dim`.
    pub fn symmetric(half_width: f64, dim: usize) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// Maps a unit-cube point into this box.
    pub(crate) fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&t, (&lo, &hi))| lo + t * (hi - lo))
            .collect()
    }

    /// Clamps a point into the box, coordinate by coordinate.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect()
    }
}

/// Evaluation allowance for one inner optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptBudget {
    /// Hard cap on objective evaluations; always respected exactly.
    pub max_evals: usize,
    /// Cap on outer iterations (DIRECT divisions / CMA-ES generations).
    pub max_iters: usize,
    /// Stagnation stop in function-value units: an iteration that improves
    /// the best value by less than this ends the search. Zero disables the
    /// check (the default for budget-driven use).
    pub tol: f64,
}

impl InnerOptBudget {
    /// Budget limited by evaluations only.
    pub fn evals(max_evals: usize) -> Self {
        Self { max_evals, max_iters: usize::MAX, tol: 0.0 }
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        if self.max_evals < dim + 1 {
            return Err(Error::InvalidParameter(format!(
                "inner optimizer budget {} too small for dimension {dim} (need at least dim + 1)",
                self.max_evals
            )));
        }
        if !self.tol.is_finite() || self.tol < 0.0 {
            return Err(Error::InvalidParameter("stagnation tolerance must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Result of an inner optimization: the best point found, its value, and
/// how many evaluations were spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}
