//! Zero-mean Gaussian-process regression.
//!
//! Exact inference: assemble the Gram matrix, factorize `K + jitter*I` by
//! Cholesky, and answer posterior mean/variance queries plus the log
//! marginal likelihood the length-scale controller maximizes. The model is
//! noise-free; diagonal jitter exists purely for numerical stability and
//! escalates tenfold (up to 1e-2) when factorization fails, which
//! near-duplicate query points routinely cause.
//!
//! The prior mean is fixed at zero. Because benchmark objectives are not
//! zero-mean, `fit` centers the observed values by their mean and adds the
//! offset back to predictive means; the log marginal likelihood is computed
//! on the values exactly as given.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{k_categorical_codes, k_se, KernelSpec};

/// Jitter escalation cap.
const JITTER_MAX: f64 = 1e-2;

/// Observed inputs and objective values, dimension-checked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        let mut data = Self::default();
        if points.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: values.len() });
        }
        for (p, v) in points.into_iter().zip(values) {
            data.push(p, v)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, point: Vec<f64>, value: f64) -> Result<()> {
        if let Some(first) = self.points.first() {
            if point.len() != first.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), got: point.len() });
            }
        }
        if point.iter().any(|v| !v.is_finite()) || !value.is_finite() {
            return Err(Error::InvalidParameter("dataset entries must be finite".into()));
        }
        self.points.push(point);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(Vec::len)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// A copy with the value mean subtracted, plus the offset removed.
    pub fn centered(&self) -> (Dataset, f64) {
        if self.is_empty() {
            return (self.clone(), 0.0);
        }
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        let values = self.values.iter().map(|v| v - mean).collect();
        (Dataset { points: self.points.clone(), values }, mean)
    }
}

/// Per-point representations cached at fit time so Gram rows and
/// cross-covariances avoid re-deriving projections or categorical codes.
#[derive(Debug, Clone)]
enum Features {
    /// Points used as-is (low-dimensional SE, skew SE).
    Raw(Vec<Vec<f64>>),
    /// Projected images `clamp(A y)` with the SE length scale.
    Projected { images: Vec<Vec<f64>>, ell: crate::kernels::LengthScale },
    /// Decoded category vectors with the Hamming weight.
    Codes { codes: Vec<Vec<u32>>, lambda: f64 },
}

/// A fitted Gaussian process, immutable and cheap to query.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    features: Features,
    input_dim: usize,
    /// Jitter that actually factorized (after any escalation).
    jitter: f64,
    /// Mean of the raw observed values, added back to predictive means.
    mean_offset: f64,
    /// Lower-triangular factor with `low * low' = K + jitter*I`.
    low: DMatrix<f64>,
    /// `(K + jitter*I)^-1 (values - mean_offset)`.
    alpha: DVector<f64>,
}

fn compute_features(points: &[Vec<f64>], kernel: &KernelSpec) -> Result<Features> {
    match kernel {
        KernelSpec::LowDimSe { .. } | KernelSpec::SkewSe { .. } => {
            Ok(Features::Raw(points.to_vec()))
        }
        KernelSpec::HighDimProjectedSe { ell, embedding } => {
            let images =
                points.iter().map(|p| embedding.map_to_x(p)).collect::<Result<Vec<_>>>()?;
            Ok(Features::Projected { images, ell: *ell })
        }
        KernelSpec::CategoricalHamming { lambda, embedding } => {
            let codes =
                points.iter().map(|p| embedding.decode_embedded(p)).collect::<Result<Vec<_>>>()?;
            Ok(Features::Codes { codes, lambda: *lambda })
        }
    }
}

impl Features {
    fn pair(&self, i: usize, j: usize, kernel: &KernelSpec) -> Result<f64> {
        match self {
            Features::Raw(pts) => kernel.eval(&pts[i], &pts[j]),
            Features::Projected { images, ell } => k_se(&images[i], &images[j], *ell),
            Features::Codes { codes, lambda } => {
                Ok(k_categorical_codes(&codes[i], &codes[j], *lambda))
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Features::Raw(pts) => pts.len(),
            Features::Projected { images, .. } => images.len(),
            Features::Codes { codes, .. } => codes.len(),
        }
    }

    /// Covariance vector between `query` and every cached point.
    fn cross(&self, query: &[f64], kernel: &KernelSpec) -> Result<DVector<f64>> {
        match self {
            Features::Raw(pts) => {
                let vals =
                    pts.iter().map(|p| kernel.eval(query, p)).collect::<Result<Vec<_>>>()?;
                Ok(DVector::from_vec(vals))
            }
            Features::Projected { images, ell } => {
                let embedding = kernel.embedding().expect("projected kernel has embedding");
                let image = embedding.map_to_x(query)?;
                let vals =
                    images.iter().map(|p| k_se(&image, p, *ell)).collect::<Result<Vec<_>>>()?;
                Ok(DVector::from_vec(vals))
            }
            Features::Codes { codes, lambda } => {
                let embedding = kernel.embedding().expect("categorical kernel has embedding");
                let code = embedding.decode_embedded(query)?;
                Ok(DVector::from_vec(
                    codes.iter().map(|c| k_categorical_codes(&code, c, *lambda)).collect(),
                ))
            }
        }
    }
}

/// Assembles the Gram matrix of `points` under `kernel`.
fn gram(features: &Features, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = features.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0; // every kernel in this crate is 1 on the diagonal
        for j in 0..i {
            let v = features.pair(i, j, kernel)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// The escalation ladder tried on factorization failure: the requested
/// jitter first, then every decade from 1e-6 up to [`JITTER_MAX`] that
/// exceeds it.
fn jitter_ladder(start: f64) -> Vec<f64> {
    const DECADES: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, JITTER_MAX];
    let mut ladder = vec![start];
    ladder.extend(DECADES.iter().copied().filter(|&j| j > start));
    ladder
}

/// Factorizes `K + j*I`, escalating `j` along the ladder until Cholesky
/// succeeds. Returns the factor and the jitter used.
fn factorize(k: &DMatrix<f64>, start_jitter: f64) -> Result<(DMatrix<f64>, f64)> {
    let ladder = jitter_ladder(start_jitter);
    for &j in &ladder {
        let mut kj = k.clone();
        for i in 0..k.nrows() {
            kj[(i, i)] += j;
        }
        if let Some(chol) = kj.cholesky() {
            return Ok((chol.unpack(), j));
        }
    }
    Err(Error::FactorizationFailed { attempted: ladder })
}

fn validate_fit_inputs(data: &Dataset, jitter: f64) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("cannot fit a GP on an empty dataset".into()));
    }
    if !jitter.is_finite() || jitter < 0.0 {
        return Err(Error::InvalidParameter(format!("jitter must be finite and >= 0 (got {jitter})")));
    }
    Ok(())
}

/// Fits the exact GP posterior: O(t^3) once, then O(t) mean / O(t^2)
/// variance per query.
pub fn fit(data: &Dataset, kernel: &KernelSpec, jitter: f64) -> Result<GpModel> {
    validate_fit_inputs(data, jitter)?;
    let features = compute_features(data.points(), kernel)?;
    let k = gram(&features, kernel)?;
    let (low, jitter_used) = factorize(&k, jitter)?;

    let mean_offset = data.values().iter().sum::<f64>() / data.len() as f64;
    let centered = DVector::from_iterator(data.len(), data.values().iter().map(|v| v - mean_offset));
    let alpha = solve_with_factor(&low, &centered)?;

    Ok(GpModel {
        kernel: kernel.clone(),
        features,
        input_dim: data.dim().expect("nonempty dataset"),
        jitter: jitter_used,
        mean_offset,
        low,
        alpha,
    })
}

/// Solves `(L L') x = b` given the lower-triangular factor.
fn solve_with_factor(low: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = low
        .solve_lower_triangular(b)
        .ok_or_else(|| Error::InvalidParameter("triangular solve failed".into()))?;
    low.transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::InvalidParameter("triangular solve failed".into()))
}

impl GpModel {
    /// Posterior predictive mean and variance at `query`.
    ///
    /// The variance is clamped to zero from below; pre-clamp values more
    /// negative than -1e-8 would indicate a factorization bug and are
    /// checked in tests, not here.
    pub fn predict(&self, query: &[f64]) -> Result<(f64, f64)> {
        if query.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: query.len() });
        }
        let kstar = self.features.cross(query, &self.kernel)?;
        let mu = self.alpha.dot(&kstar) + self.mean_offset;
        let v = self
            .low
            .solve_lower_triangular(&kstar)
            .ok_or_else(|| Error::InvalidParameter("triangular solve failed".into()))?;
        // Prior variance k(q, q) = 1 for every kernel here.
        let var = 1.0 - v.norm_squared();
        Ok((mu, var.max(0.0)))
    }

    /// The jitter that actually factorized.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor of `K + jitter*I`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.low
    }

    /// Value-mean offset added back to predictive means.
    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.len() == 0
    }
}

/// Log marginal likelihood of the data exactly as given (no centering):
/// `-1/2 f'(K+jI)^-1 f - 1/2 log det(K+jI) - (t/2) log 2pi`.
///
/// Factorization failures escalate jitter along the same ladder as `fit`.
pub fn log_marginal_likelihood(data: &Dataset, kernel: &KernelSpec, jitter: f64) -> Result<f64> {
    validate_fit_inputs(data, jitter)?;
    let features = compute_features(data.points(), kernel)?;
    let k = gram(&features, kernel)?;
    let (low, _) = factorize(&k, jitter)?;
    let f = DVector::from_column_slice(data.values());
    let alpha = solve_with_factor(&low, &f)?;
    let log_det: f64 = (0..low.nrows()).map(|i| low[(i, i)].ln()).sum::<f64>() * 2.0;
    let t = data.len() as f64;
    Ok(-0.5 * f.dot(&alpha) - 0.5 * log_det - 0.5 * t * (2.0 * std::f64::consts::PI).ln())
}
