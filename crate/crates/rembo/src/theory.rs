//! Monte-Carlo verification of the embedding guarantees and an empirical
//! regret-decay probe.
//!
//! The guarantees being checked:
//!
//! 1. For a function with effective dimensionality `d_e` and a Gaussian
//!    embedding matrix `A` with `d >= d_e` columns, every input value is
//!    attained inside the embedded space: for any `x` there is a `y` with
//!    `f(x) = f(Ay)`, almost surely.
//! 2. When the effective subspace is axis-aligned, an optimizer `y*` exists
//!    within norm `(sqrt(d_e)/eps) * ||x*_T||` with probability at least
//!    `1 - eps` over the draw of `A`.
//! 3. Expected improvement over the embedding, with an admissible fixed
//!    length scale, drives simple regret down at a dimension-dependent
//!    polynomial rate; the probe fits the observed decay exponent.
//!
//! Checks 1 and 2 use direct linear-algebra oracles (least squares against
//! the basis; the square Gaussian block solve), so they test the statements
//! themselves rather than any optimizer's ability to find the witnesses.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::driver::{run, RunConfig};
use crate::embedding::EmbeddingScale;
use crate::error::{Error, EvalError, Result};
use crate::objectives::{Objective, Point, Sense};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::stats;

/// Relative tolerance for the value-match check of guarantee 1.
const VALUE_MATCH_RTOL: f64 = 1e-6;
/// Orthonormality tolerance for subspace bases.
const BASIS_ORTHO_TOL: f64 = 1e-10;
/// Relative singular-value threshold below which a projected embedding
/// counts as rank-deficient.
const RANK_RTOL: f64 = 1e-10;

/// A test function whose variation is confined to a known linear subspace:
/// `f(x) = base(Phi^T x)` for an orthonormal `D x d_e` basis `Phi`, so the
/// effective dimensionality is `d_e` by construction.
#[derive(Clone)]
pub struct EffectiveSubspaceInstance {
    basis: DMatrix<f64>,
    base: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    optimizer_in_t: Vec<f64>,
}

impl std::fmt::Debug for EffectiveSubspaceInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EffectiveSubspaceInstance")
            .field("extrinsic_dim", &self.extrinsic_dim())
            .field("effective_dim", &self.effective_dim())
            .field("optimizer_in_t", &self.optimizer_in_t)
            .finish_non_exhaustive()
    }
}

impl EffectiveSubspaceInstance {
    /// Builds an instance from an explicit basis, rejecting one whose
    /// columns are not orthonormal to within `1e-10`.
    pub fn new(
        basis: DMatrix<f64>,
        base: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        optimizer_in_t: Vec<f64>,
    ) -> Result<Self> {
        let d_e = basis.ncols();
        if d_e == 0 || basis.nrows() < d_e {
            return Err(Error::InvalidParameter(format!(
                "basis must be D x d_e with 1 <= d_e <= D (got {} x {})",
                basis.nrows(),
                d_e
            )));
        }
        if optimizer_in_t.len() != d_e {
            return Err(Error::DimensionMismatch { expected: d_e, got: optimizer_in_t.len() });
        }
        let gram = basis.transpose() * &basis;
        let dev: DMatrix<f64> = gram - DMatrix::identity(d_e, d_e);
        if dev.abs().max() > BASIS_ORTHO_TOL {
            return Err(Error::InvalidParameter(
                "basis columns are not orthonormal within 1e-10".into(),
            ));
        }
        Ok(Self { basis, base: Arc::new(base), optimizer_in_t })
    }

    /// Instance with a uniformly random orthonormal basis and a smooth
    /// default base function peaking at the stored optimizer.
    pub fn random(extrinsic_dim: usize, effective_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let gauss: DMatrix<f64> = DMatrix::from_fn(extrinsic_dim, effective_dim, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        let qr = gauss.qr();
        let mut q = qr.q();
        let r = qr.r();
        // Fix the sign ambiguity so the basis is a deterministic function
        // of the Gaussian draw.
        for j in 0..effective_dim {
            if r[(j, j)] < 0.0 {
                for i in 0..extrinsic_dim {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        let optimizer: Vec<f64> =
            (0..effective_dim).map(|_| rng.random_range(-0.5..=0.5)).collect();
        let center = optimizer.clone();
        Self::new(
            q,
            move |c: &[f64]| {
                -c.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            },
            optimizer,
        )
    }

    /// Instance whose effective subspace is the span of the first `d_e`
    /// coordinate axes, as guarantee 2's hypothesis requires.
    pub fn axis_aligned(
        extrinsic_dim: usize,
        effective_dim: usize,
        optimizer_in_t: Vec<f64>,
    ) -> Result<Self> {
        let basis = DMatrix::from_fn(extrinsic_dim, effective_dim, |i, j| {
            if i == j {
                1.0
            } else {
                0.0
            }
        });
        let center = optimizer_in_t.clone();
        Self::new(
            basis,
            move |c: &[f64]| {
                -c.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            },
            optimizer_in_t,
        )
    }

    pub fn extrinsic_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn effective_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn optimizer_in_t(&self) -> &[f64] {
        &self.optimizer_in_t
    }

    /// True iff the basis is exactly the first `d_e` coordinate axes.
    pub fn is_axis_aligned(&self) -> bool {
        self.basis.row_iter().enumerate().all(|(i, row)| {
            row.iter().enumerate().all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 })
        })
    }

    /// Subspace coordinates of a full-space point: `Phi^T x`.
    pub fn coords_in_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.extrinsic_dim() {
            return Err(Error::DimensionMismatch { expected: self.extrinsic_dim(), got: x.len() });
        }
        let xv = DVector::from_column_slice(x);
        Ok((self.basis.transpose() * xv).iter().copied().collect())
    }

    /// Evaluates `f(x) = base(Phi^T x)` on a full-space point.
    pub fn eval_full(&self, x: &[f64]) -> Result<f64> {
        Ok((self.base)(&self.coords_in_t(x)?))
    }

    /// Evaluates the base function directly on subspace coordinates.
    pub fn eval_in_t(&self, c: &[f64]) -> f64 {
        (self.base)(c)
    }
}

/// Aggregate result of a Monte-Carlo theorem check.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCheckReport {
    pub trials: usize,
    pub successes: usize,
    /// Trials hitting a measure-zero rank-deficiency (value-match check
    /// only); recorded separately because they are neither success nor
    /// refutation.
    pub degenerate: usize,
    /// The success-frequency threshold the verdict compares against.
    pub bound: f64,
    pub verdict: bool,
}

impl TheoremCheckReport {
    /// Observed success fraction over all trials.
    pub fn frequency(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Outcome of a single value-match trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialOutcome {
    Success,
    Failure,
    /// `Phi^T A` was numerically rank-deficient, so no witness was sought.
    Degenerate,
}

/// One value-match trial with an explicit embedding matrix and query point:
/// solves `(Phi^T A) y = Phi^T x` by least squares and compares `f(Ay)`
/// against `f(x)` at relative tolerance `1e-6`.
pub fn theorem1_trial(
    instance: &EffectiveSubspaceInstance,
    a: &DMatrix<f64>,
    x: &[f64],
) -> Result<TrialOutcome> {
    let big_d = instance.extrinsic_dim();
    if a.nrows() != big_d {
        return Err(Error::DimensionMismatch { expected: big_d, got: a.nrows() });
    }
    if x.len() != big_d {
        return Err(Error::DimensionMismatch { expected: big_d, got: x.len() });
    }
    if a.ncols() < instance.effective_dim() {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension {} is below the effective dimension {}",
            a.ncols(),
            instance.effective_dim()
        )));
    }

    let projected = instance.basis.transpose() * a; // d_e x d
    let svd = projected.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if !(sigma_max > 0.0) || sigma_min <= RANK_RTOL * sigma_max {
        return Ok(TrialOutcome::Degenerate);
    }

    let c = DVector::from_vec(instance.coords_in_t(x)?);
    let y = svd
        .solve(&c, RANK_RTOL * sigma_max)
        .map_err(|e| Error::InvalidParameter(format!("least-squares solve failed: {e}")))?;
    let ay: DVector<f64> = a * y;
    let f_x = instance.eval_full(x)?;
    let f_ay = instance.eval_full(ay.as_slice())?;
    if (f_x - f_ay).abs() <= VALUE_MATCH_RTOL * (1.0 + f_x.abs()) {
        Ok(TrialOutcome::Success)
    } else {
        Ok(TrialOutcome::Failure)
    }
}

/// Monte-Carlo check of the value-match guarantee: over `trials` draws of a
/// Gaussian `D x d` embedding and a Gaussian query point, every trial must
/// find an embedded pre-image with a matching function value. The verdict
/// is true iff no trial fails (rank-deficient draws, a measure-zero event,
/// are tallied separately and do not refute).
pub fn check_theorem1(
    instance: &EffectiveSubspaceInstance,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<TheoremCheckReport> {
    if d < instance.effective_dim() {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension {d} must be at least the effective dimension {}",
            instance.effective_dim()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    let big_d = instance.extrinsic_dim();

    let outcomes: Vec<Result<TrialOutcome>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, tag::THEORY, t as u64));
            let mut a = DMatrix::zeros(big_d, d);
            for j in 0..d {
                for i in 0..big_d {
                    a[(i, j)] = StandardNormal.sample(&mut rng);
                }
            }
            let x: Vec<f64> = (0..big_d).map(|_| StandardNormal.sample(&mut rng)).collect();
            theorem1_trial(instance, &a, &x)
        })
        .collect();

    let mut successes = 0;
    let mut degenerate = 0;
    for o in outcomes {
        match o? {
            TrialOutcome::Success => successes += 1,
            TrialOutcome::Degenerate => degenerate += 1,
            TrialOutcome::Failure => {}
        }
    }
    Ok(TheoremCheckReport {
        trials,
        successes,
        degenerate,
        bound: 1.0,
        verdict: successes + degenerate == trials,
    })
}

/// Monte-Carlo check of the bounded-optimizer guarantee on an axis-aligned
/// instance: per trial, draw a Gaussian `D x d` matrix, take its leading
/// `d_e x d_e` block `B`, solve `B y = x*_T`, and count success when
/// `||y|| <= (sqrt(d_e)/eps) * ||x*_T||`. The verdict requires the success
/// frequency to clear `1 - eps` minus three binomial standard errors.
pub fn check_theorem2(
    instance: &EffectiveSubspaceInstance,
    d: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<TheoremCheckReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be in (0, 1), got {epsilon}")));
    }
    if !instance.is_axis_aligned() {
        return Err(Error::InvalidParameter(
            "the bounded-optimizer check requires an axis-aligned effective subspace".into(),
        ));
    }
    let d_e = instance.effective_dim();
    if d < d_e {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension {d} must be at least the effective dimension {d_e}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }

    let big_d = instance.extrinsic_dim();
    let x_bar = DVector::from_column_slice(&instance.optimizer_in_t);
    let norm_threshold = ((d_e as f64).sqrt() / epsilon) * x_bar.norm();

    let successes: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, tag::THEORY, t as u64));
            let mut a = DMatrix::zeros(big_d, d);
            for j in 0..d {
                for i in 0..big_d {
                    a[(i, j)] = StandardNormal.sample(&mut rng);
                }
            }
            let b = a.view((0, 0), (d_e, d_e)).into_owned();
            match b.lu().solve(&x_bar) {
                // A singular block is a failure: the bound is probabilistic
                // and makes no promise for that draw.
                None => 0usize,
                Some(y) => {
                    let n = y.norm();
                    usize::from(n.is_finite() && n <= norm_threshold)
                }
            }
        })
        .sum();

    let slack = 3.0 * (epsilon * (1.0 - epsilon) / trials as f64).sqrt();
    let bound = 1.0 - epsilon - slack;
    let frequency = successes as f64 / trials as f64;
    Ok(TheoremCheckReport { trials, successes, degenerate: 0, bound, verdict: frequency >= bound })
}

/// A fixed smooth test function in the squared-exponential RKHS: a finite
/// kernel expansion over the first `d` coordinates of a 20-dimensional
/// input box, with its maximum located by dense grid search plus local
/// refinement at construction.
pub struct RkhsSynthetic {
    extrinsic_dim: usize,
    needed: Vec<usize>,
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    ell_f: f64,
    optimum: f64,
}

/// Fixed internal seed making the expansion a deterministic function of
/// `d` alone.
const RKHS_EXPANSION_SEED: u64 = 0x00c0_ffee;

impl RkhsSynthetic {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        let extrinsic_dim = 20.max(d);
        let mut rng = rng_from_seed(derive_seed(RKHS_EXPANSION_SEED, tag::THEORY, d as u64));
        // Centers sit well inside the box so the maximum is reachable from
        // modest embedded moves; weights mix signs so the landscape has
        // structure.
        let n_centers = 6;
        let centers: Vec<Vec<f64>> = (0..n_centers)
            .map(|_| (0..d).map(|_| rng.random_range(-0.35..=0.35)).collect())
            .collect();
        let weights: Vec<f64> =
            (0..n_centers).map(|_| rng.random_range(0.2..=1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let ell_f = 0.3;
        let mut this = Self { extrinsic_dim, needed: (0..d).collect(), centers, weights, ell_f, optimum: 0.0 };
        this.optimum = this.locate_maximum();
        Ok(this)
    }

    fn expansion(&self, c: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| {
                let sq: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                w * (-sq / (2.0 * self.ell_f * self.ell_f)).exp()
            })
            .sum()
    }

    /// Grid search over the effective box followed by coordinate-wise
    /// golden-section refinement.
    fn locate_maximum(&self) -> f64 {
        let d = self.needed.len();
        let steps = match d {
            1 => 20_001usize,
            2 => 401,
            _ => 41,
        };
        let mut best = f64::NEG_INFINITY;
        let mut best_c = vec![0.0; d];
        let mut idx = vec![0usize; d];
        loop {
            let c: Vec<f64> =
                idx.iter().map(|&i| -1.0 + 2.0 * i as f64 / (steps - 1) as f64).collect();
            let v = self.expansion(&c);
            if v > best {
                best = v;
                best_c = c;
            }
            // Mixed-radix odometer over the grid.
            let mut k = 0;
            loop {
                if k == d {
                    break;
                }
                idx[k] += 1;
                if idx[k] < steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        // Coordinate descent with golden-section line searches.
        const PHI: f64 = 0.618_033_988_749_894_9;
        let span = 2.0 / (steps - 1) as f64;
        for _ in 0..6 {
            for k in 0..d {
                let (mut lo, mut hi) =
                    ((best_c[k] - span).max(-1.0), (best_c[k] + span).min(1.0));
                for _ in 0..60 {
                    let m1 = hi - PHI * (hi - lo);
                    let m2 = lo + PHI * (hi - lo);
                    let mut c1 = best_c.clone();
                    c1[k] = m1;
                    let mut c2 = best_c.clone();
                    c2[k] = m2;
                    if self.expansion(&c1) >= self.expansion(&c2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                best_c[k] = 0.5 * (lo + hi);
            }
        }
        best.max(self.expansion(&best_c))
    }
}

impl Objective for RkhsSynthetic {
    fn extrinsic_dim(&self) -> usize {
        self.extrinsic_dim
    }

    fn needed_coords(&self) -> Option<&[usize]> {
        Some(&self.needed)
    }

    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    fn known_optimum(&self) -> Option<f64> {
        Some(self.optimum)
    }

    fn eval(&self, point: Point<'_>) -> std::result::Result<f64, EvalError> {
        let c: Vec<f64> = self
            .needed
            .iter()
            .map(|&i| point.coord(i).ok_or(EvalError::MissingCoordinate(i)))
            .collect::<std::result::Result<_, _>>()?;
        Ok(self.expansion(&c))
    }
}

/// Result of the regret-decay probe.
#[derive(Debug, Clone)]
pub struct RegretProbe {
    /// Fitted log-log slope per seed; `None` when fewer than two usable
    /// (positive-regret) tail points remained.
    pub per_seed_slopes: Vec<Option<f64>>,
    /// Total tail points excluded for having regret exactly 0 (or below
    /// numerical zero).
    pub excluded_points: usize,
}

impl RegretProbe {
    /// Median of the fitted slopes; `None` if no seed produced a fit.
    pub fn median_slope(&self) -> Option<f64> {
        let fitted: Vec<f64> = self.per_seed_slopes.iter().filter_map(|s| *s).collect();
        if fitted.is_empty() {
            None
        } else {
            Some(stats::median(&fitted))
        }
    }
}

/// Fits the decay exponent of a regret trace: ordinary least squares of
/// `ln r(t)` against `ln t` over the tail half of the trace, excluding
/// points with non-positive regret. Returns the slope (None when fewer
/// than two points remain) and the excluded count.
pub fn fit_decay_slope(regret: &[f64]) -> (Option<f64>, usize) {
    let start = regret.len() / 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for (i, &r) in regret.iter().enumerate().skip(start) {
        if r > 0.0 {
            xs.push(((i + 1) as f64).ln());
            ys.push(r.ln());
        } else {
            excluded += 1;
        }
    }
    // A constant tail has zero variance in x only if one point remains;
    // two or more distinct t values always admit a slope.
    if xs.len() < 2 {
        (None, excluded)
    } else {
        (Some(stats::ols_slope(&xs, &ys)), excluded)
    }
}

/// Runs the embedding optimizer with expected improvement and a fixed
/// admissible length scale on the fixed RKHS test function, once per seed,
/// and fits the simple-regret decay exponent of each run. The embedding is
/// scaled by `1/sqrt(d)`, matching the regret guarantee's hypothesis.
pub fn regret_decay_probe(d: usize, seeds: usize, budget: usize) -> Result<RegretProbe> {
    let objective = RkhsSynthetic::new(d)?;
    let reports: Vec<Result<(Option<f64>, usize)>> = (0..seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let config = RunConfig {
                embedding_scale: EmbeddingScale::InvSqrtDim,
                fixed_ell: Some(0.3),
                ..RunConfig::rembo(d, 1, budget, seed)
            };
            let report = run(&config, &objective)?;
            let regrets: Vec<f64> = report.trace.iter().map(|row| row.best_gap).collect();
            Ok(fit_decay_slope(&regrets))
        })
        .collect();

    let mut per_seed_slopes = Vec::with_capacity(seeds);
    let mut excluded_points = 0;
    for r in reports {
        let (slope, excluded) = r?;
        per_seed_slopes.push(slope);
        excluded_points += excluded;
    }
    Ok(RegretProbe { per_seed_slopes, excluded_points })
}
