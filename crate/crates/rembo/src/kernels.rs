//! Covariance functions for the Gaussian-process surrogate.
//!
//! Four kernels cover the crate's needs:
//!
//! - [`k_se`]: squared exponential over low-dimensional embedded points,
//!   `exp(-||y1 - y2||^2 / (2 l^2))`;
//! - [`k_se_highdim`]: the same form over the *projected images*
//!   `clamp(A y)`, so covariance saturates once points clamp to the same
//!   box face;
//! - [`k_categorical`]: `exp(-(lambda/2) h^2)` with `h` the Hamming count
//!   of differing decoded categories — no artificial ordering between
//!   category values;
//! - [`k_skew_se`]: `exp(-delta' Lambda^-1 delta)` with a full SPD
//!   length-scale matrix. Note the exponent carries no 1/2 factor; the
//!   bridge to the plain squared exponential is `Lambda = 2 l^2 I`.
//!
//! Kernels are pure functions; Gram-matrix conditioning (jitter) is the GP
//! module's job.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// A validated positive length scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthScale(f64);

impl LengthScale {
    pub fn new(ell: f64) -> Result<Self> {
        if !ell.is_finite() || ell <= 0.0 {
            return Err(Error::InvalidParameter(format!("length scale must be positive (got {ell})")));
        }
        Ok(Self(ell))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// Squared exponential kernel `exp(-||y1 - y2||^2 / (2 l^2))`.
pub fn k_se(y1: &[f64], y2: &[f64], ell: LengthScale) -> Result<f64> {
    check_dims(y1, y2)?;
    let sq: f64 = y1.iter().zip(y2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * ell.get() * ell.get())).exp())
}

/// Squared exponential over projected images: `k_se(clamp(A y1), clamp(A y2))`.
///
/// Depends on `y` only through the projection, so points whose images clamp
/// to the same box corner have covariance exactly 1.
pub fn k_se_highdim(y1: &[f64], y2: &[f64], emb: &Embedding, ell: LengthScale) -> Result<f64> {
    check_dims(y1, y2)?;
    if y1.len() != emb.dim() {
        return Err(Error::DimensionMismatch { expected: emb.dim(), got: y1.len() });
    }
    // Streamed coordinate by coordinate: no D-length allocation, and lazy
    // rows are touched once each.
    let mut sq = 0.0;
    for i in 0..emb.extrinsic_dim() {
        let a = emb.map_coord(y1, i)?;
        let b = emb.map_coord(y2, i)?;
        sq += (a - b) * (a - b);
    }
    Ok((-sq / (2.0 * ell.get() * ell.get())).exp())
}

/// Hamming distance: the number of coordinates where two discrete vectors
/// differ.
pub fn hamming(x1: &[u32], x2: &[u32]) -> Result<u32> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch { expected: x1.len(), got: x2.len() });
    }
    Ok(x1.iter().zip(x2).filter(|(a, b)| a != b).count() as u32)
}

/// Categorical kernel `exp(-(lambda/2) h(s(A y1), s(A y2))^2)` where `s`
/// decodes projected images into category indices and `h` is [`hamming`].
pub fn k_categorical(y1: &[f64], y2: &[f64], emb: &Embedding, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!("lambda must be positive (got {lambda})")));
    }
    let c1 = emb.decode_embedded(y1)?;
    let c2 = emb.decode_embedded(y2)?;
    Ok(k_categorical_codes(&c1, &c2, lambda))
}

/// Categorical kernel evaluated directly on decoded category vectors.
pub(crate) fn k_categorical_codes(c1: &[u32], c2: &[u32], lambda: f64) -> f64 {
    let h = c1.iter().zip(c2).filter(|(a, b)| a != b).count() as f64;
    (-(lambda / 2.0) * h * h).exp()
}

/// Skew squared exponential kernel `exp(-delta' Lambda^-1 delta)` for SPD
/// `Lambda`. The exponent has no 1/2 factor; `Lambda = 2 l^2 I` recovers
/// the plain squared exponential with length scale `l`.
pub fn k_skew_se(x1: &[f64], x2: &[f64], lambda: &DMatrix<f64>) -> Result<f64> {
    check_dims(x1, x2)?;
    if lambda.nrows() != x1.len() || lambda.ncols() != x1.len() {
        return Err(Error::DimensionMismatch { expected: x1.len(), got: lambda.nrows() });
    }
    let chol = spd_cholesky(lambda)?;
    let delta = DVector::from_iterator(x1.len(), x1.iter().zip(x2).map(|(a, b)| a - b));
    let solved = chol.solve(&delta);
    Ok((-delta.dot(&solved)).exp())
}

/// Cholesky of a symmetric positive-definite matrix, rejecting asymmetric
/// or non-PD inputs.
fn spd_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 * (1.0 + m.abs().max()) {
        return Err(Error::NotPositiveDefinite);
    }
    m.clone().cholesky().ok_or(Error::NotPositiveDefinite)
}

/// A kernel choice with its parameters, ready to evaluate on point pairs.
///
/// The projected and categorical variants carry the embedding they decode
/// through, so a `KernelSpec` is self-contained for Gram assembly.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    LowDimSe { ell: LengthScale },
    HighDimProjectedSe { ell: LengthScale, embedding: Arc<Embedding> },
    CategoricalHamming { lambda: f64, embedding: Arc<Embedding> },
    SkewSe { lambda_matrix: DMatrix<f64> },
}

impl KernelSpec {
    pub fn low_dim_se(ell: LengthScale) -> Self {
        Self::LowDimSe { ell }
    }

    pub fn high_dim_projected_se(ell: LengthScale, embedding: Arc<Embedding>) -> Self {
        Self::HighDimProjectedSe { ell, embedding }
    }

    pub fn categorical_hamming(lambda: f64, embedding: Arc<Embedding>) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidParameter(format!("lambda must be positive (got {lambda})")));
        }
        if embedding.decode_table().is_none() {
            return Err(Error::MissingDecodeTable);
        }
        Ok(Self::CategoricalHamming { lambda, embedding })
    }

    pub fn skew_se(lambda_matrix: DMatrix<f64>) -> Result<Self> {
        spd_cholesky(&lambda_matrix)?;
        Ok(Self::SkewSe { lambda_matrix })
    }

    /// Evaluates the kernel on a pair of points.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Self::LowDimSe { ell } => k_se(a, b, *ell),
            Self::HighDimProjectedSe { ell, embedding } => k_se_highdim(a, b, embedding, *ell),
            Self::CategoricalHamming { lambda, embedding } => k_categorical(a, b, embedding, *lambda),
            Self::SkewSe { lambda_matrix } => k_skew_se(a, b, lambda_matrix),
        }
    }

    /// The same kernel family re-parameterized by a new length scale; used
    /// by the hyperparameter controller. The categorical kernel maps
    /// `lambda = 1 / l^2` so its exponent is `-h^2 / (2 l^2)`, keeping the
    /// controller's "small l = more exploration" semantics.
    pub fn with_ell(&self, ell: LengthScale) -> Self {
        match self {
            Self::LowDimSe { .. } => Self::LowDimSe { ell },
            Self::HighDimProjectedSe { embedding, .. } => {
                Self::HighDimProjectedSe { ell, embedding: Arc::clone(embedding) }
            }
            Self::CategoricalHamming { embedding, .. } => Self::CategoricalHamming {
                lambda: 1.0 / (ell.get() * ell.get()),
                embedding: Arc::clone(embedding),
            },
            Self::SkewSe { lambda_matrix } => {
                let d = lambda_matrix.nrows();
                Self::SkewSe {
                    lambda_matrix: DMatrix::identity(d, d) * (2.0 * ell.get() * ell.get()),
                }
            }
        }
    }

    /// The embedding this kernel evaluates through, if any.
    pub fn embedding(&self) -> Option<&Arc<Embedding>> {
        match self {
            Self::HighDimProjectedSe { embedding, .. }
            | Self::CategoricalHamming { embedding, .. } => Some(embedding),
            _ => None,
        }
    }
}
