//! Acquisition functions and their global maximization.
//!
//! Everything here speaks the crate's internal convention: the surrogate is
//! maximized. Expected improvement is the default criterion; an upper
//! confidence bound is available behind a config switch. Maximization over
//! the search box runs a seeded uniform sweep (a sanity floor), then splits
//! the remaining evaluation budget between the two inner optimizers and
//! keeps the better candidate.

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::inner_opt::{cmaes_maximize, direct_maximize, Bounds, InnerOptBudget};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::stats::{normal_cdf, normal_pdf};
use rand::Rng;

/// The best observed input/value pair under the run's optimization sense.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Which acquisition criterion scores candidate points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcquisitionSpec {
    /// Expected improvement over the incumbent (the default).
    ExpectedImprovement,
    /// Upper confidence bound `mu + sqrt(beta) * sigma`.
    Ucb { beta: f64 },
}

impl AcquisitionSpec {
    /// UCB with a validated positive exploration weight.
    pub fn ucb(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::InvalidParameter(format!("ucb beta must be positive (got {beta})")));
        }
        Ok(Self::Ucb { beta })
    }

    /// Scores a posterior `(mu, var)` against the incumbent value.
    pub fn score(&self, mu: f64, var: f64, incumbent_value: f64) -> Result<f64> {
        match *self {
            Self::ExpectedImprovement => expected_improvement(mu, var, incumbent_value),
            Self::Ucb { beta } => ucb(mu, var, beta),
        }
    }
}

/// Expected improvement of a Gaussian posterior `N(mu, var)` over
/// `incumbent_value`, for a maximization run.
///
/// With `sigma = sqrt(var)` and `z = (mu - incumbent)/sigma`, the closed
/// form is `(mu - incumbent) * Phi(z) + sigma * phi(z)`; at `sigma = 0` it
/// degenerates to `max(0, mu - incumbent)`.
pub fn expected_improvement(mu: f64, var: f64, incumbent_value: f64) -> Result<f64> {
    if !var.is_finite() || var < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "expected improvement needs a nonnegative variance (got {var}); clamp upstream"
        )));
    }
    let diff = mu - incumbent_value;
    if var == 0.0 {
        return Ok(diff.max(0.0));
    }
    let sigma = var.sqrt();
    let z = diff / sigma;
    Ok((diff * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0))
}

/// Upper confidence bound `mu + sqrt(beta) * sqrt(var)`.
pub fn ucb(mu: f64, var: f64, beta: f64) -> Result<f64> {
    if !var.is_finite() || var < 0.0 {
        return Err(Error::InvalidParameter(format!("ucb needs a nonnegative variance (got {var})")));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidParameter(format!("ucb beta must be positive (got {beta})")));
    }
    Ok(mu + beta.sqrt() * var.sqrt())
}

/// Anything that can answer posterior mean/variance queries. The run driver
/// only ever sees this trait, which keeps acquisition maximization testable
/// against analytic stand-ins.
pub trait Surrogate {
    fn predict(&self, query: &[f64]) -> Result<(f64, f64)>;
}

impl Surrogate for GpModel {
    fn predict(&self, query: &[f64]) -> Result<(f64, f64)> {
        GpModel::predict(self, query)
    }
}

/// Outcome of one acquisition maximization: the winning point plus the
/// per-strategy candidate values (`-inf` for a strategy that failed), kept
/// for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionMax {
    pub point: Vec<f64>,
    pub value: f64,
    pub direct_value: f64,
    pub cmaes_value: f64,
    pub sweep_value: f64,
}

/// Number of seeded uniform probes evaluated before the inner optimizers.
const SWEEP_POINTS: usize = 64;

/// Maximizes the acquisition surface over `domain`.
///
/// The evaluation budget covers a 64-point seeded uniform sweep plus the
/// two inner optimizers, each getting half the remainder. The sweep winner
/// guarantees the result is at least as good as uniform sampling; the
/// returned value is the max over all three candidates. Surrogate queries
/// that fail score `-inf` rather than aborting the search; only both inner
/// optimizers failing outright is an error.
pub fn maximize_acquisition<S: Surrogate>(
    model: &S,
    spec: &AcquisitionSpec,
    domain: &Bounds,
    incumbent: &Incumbent,
    budget: &InnerOptBudget,
    seed: u64,
) -> Result<AcquisitionMax> {
    let dim = domain.dim();
    let min_needed = SWEEP_POINTS + 2 * (dim + 1);
    if budget.max_evals < min_needed {
        return Err(Error::InvalidParameter(format!(
            "acquisition budget {} too small: need at least {min_needed} for a {dim}-dimensional \
             sweep plus both inner optimizers",
            budget.max_evals
        )));
    }

    let acq = |y: &[f64]| -> f64 {
        match model.predict(y) {
            Ok((mu, var)) => spec.score(mu, var.max(0.0), incumbent.value).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    // Seeded uniform sweep: the sanity floor.
    let mut rng = rng_from_seed(derive_seed(seed, tag::SWEEP, 0));
    let mut sweep_best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..SWEEP_POINTS {
        let y: Vec<f64> = (0..dim).map(|i| rng.random_range(domain.lower()[i]..=domain.upper()[i])).collect();
        let v = acq(&y);
        if sweep_best.as_ref().is_none_or(|(_, best)| v > *best) {
            sweep_best = Some((y, v));
        }
    }
    let (sweep_point, sweep_value) = sweep_best.expect("sweep ran");

    // Split the remainder between the two inner optimizers.
    let remainder = budget.max_evals - SWEEP_POINTS;
    let direct_budget = InnerOptBudget { max_evals: remainder.div_ceil(2), ..*budget };
    let cmaes_budget = InnerOptBudget { max_evals: remainder / 2, ..*budget };

    let direct_res = direct_maximize(acq, domain, &direct_budget);
    let cmaes_res =
        cmaes_maximize(acq, domain, &cmaes_budget, derive_seed(seed, tag::ACQUISITION, 1));

    if let (Err(d), Err(c)) = (&direct_res, &cmaes_res) {
        return Err(Error::InnerOptFailed { direct: d.to_string(), cmaes: c.to_string() });
    }

    let direct_value = direct_res.as_ref().map_or(f64::NEG_INFINITY, |o| o.value);
    let cmaes_value = cmaes_res.as_ref().map_or(f64::NEG_INFINITY, |o| o.value);

    let mut point = sweep_point;
    let mut value = sweep_value;
    if let Ok(o) = direct_res {
        if o.value > value {
            point = o.point;
            value = o.value;
        }
    }
    if let Ok(o) = cmaes_res {
        if o.value > value {
            point = o.point;
            value = o.value;
        }
    }
    Ok(AcquisitionMax { point, value, direct_value, cmaes_value, sweep_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit, Dataset};
    use crate::kernels::{KernelSpec, LengthScale};
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    const PHI_AT_ZERO: f64 = 0.398_942_280_401_432_7; // 1/sqrt(2*pi)

    #[test]
    fn ei_pinned_values() {
        assert_eq!(expected_improvement(3.0, 0.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            expected_improvement(3.0, 1.0, 3.0).unwrap(),
            PHI_AT_ZERO,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected_improvement(4.0, 0.0, 3.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(expected_improvement(0.0, -1e-9, 0.0).is_err());
        assert!(expected_improvement(0.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn ei_monotone_in_mu_and_vanishes_far_below() {
        let mut last = -1.0;
        for k in -30..=30 {
            let mu = k as f64 * 0.2;
            let v = expected_improvement(mu, 0.7, 0.0).unwrap();
            assert!(v > last, "EI must increase with mu");
            last = v;
        }
        assert_eq!(expected_improvement(-40.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(expected_improvement(-8.0, 1.0, 0.0).unwrap() < 1e-14);
    }

    /// Monte-Carlo estimate of `E max(0, N(mu, var) - incumbent)` and its
    /// standard error.
    fn mc_ei(mu: f64, var: f64, incumbent: f64, draws: usize, seed: u64) -> (f64, f64) {
        let mut rng = crate::rng::rng_from_seed(seed);
        let sigma = var.sqrt();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let z: f64 = StandardNormal.sample(&mut rng);
            let imp = (mu + sigma * z - incumbent).max(0.0);
            sum += imp;
            sumsq += imp * imp;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sumsq / n - mean * mean) / n).sqrt();
        (mean, se)
    }

    #[test]
    fn ei_matches_monte_carlo_far_below_incumbent() {
        let (mc, se) = mc_ei(-2.0, 1.0, 0.0, 10_000_000, 77);
        let closed = expected_improvement(-2.0, 1.0, 0.0).unwrap();
        assert!(
            (closed - mc).abs() <= 3.0 * se,
            "closed {closed} vs mc {mc} (3 se = {})",
            3.0 * se
        );
    }

    #[test]
    fn ei_matches_monte_carlo_on_random_triples() {
        let mut rng = crate::rng::rng_from_seed(31);
        use rand::Rng;
        for trial in 0..20 {
            let mu: f64 = rng.random_range(-3.0..3.0);
            let var: f64 = rng.random_range(0.05..4.0);
            let incumbent: f64 = rng.random_range(-3.0..3.0);
            let (mc, se) = mc_ei(mu, var, incumbent, 1_000_000, 1000 + trial);
            let closed = expected_improvement(mu, var, incumbent).unwrap();
            assert!(
                (closed - mc).abs() <= 4.0 * se.max(1e-12),
                "triple ({mu}, {var}, {incumbent}): closed {closed} vs mc {mc}"
            );
        }
    }

    #[test]
    fn ucb_pinned_values() {
        assert_eq!(ucb(1.0, 0.0, 4.0).unwrap(), 1.0);
        assert_abs_diff_eq!(ucb(0.0, 1.0, 4.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ucb(-1.0, 0.25, 1.0).unwrap(), -0.5, epsilon = 1e-15);
        assert!(ucb(0.0, 1.0, 0.0).is_err());
        assert!(ucb(0.0, -1.0, 1.0).is_err());
        assert!(AcquisitionSpec::ucb(-2.0).is_err());
        assert!(AcquisitionSpec::ucb(4.0).is_ok());
    }

    #[test]
    fn ei_is_zero_at_noiseless_observations() {
        let data = Dataset::new(
            vec![vec![-0.8], vec![0.0], vec![0.9]],
            vec![0.2, 1.0, -0.4],
        )
        .unwrap();
        let kernel = KernelSpec::low_dim_se(LengthScale::new(0.6).unwrap());
        let model = fit(&data, &kernel, 0.0).unwrap();
        let incumbent = 1.0; // best observed value
        for p in data.points() {
            let (mu, var) = model.predict(p).unwrap();
            let ei = expected_improvement(mu, var, incumbent).unwrap();
            assert!(ei <= 1e-8, "EI at an observation should vanish (got {ei})");
        }
    }

    /// Deterministic stand-in surrogate: a quadratic bump with zero
    /// variance, so EI reduces to `max(0, mu - incumbent)`.
    struct Bump {
        center: f64,
    }

    impl Surrogate for Bump {
        fn predict(&self, q: &[f64]) -> Result<(f64, f64)> {
            Ok((-(q[0] - self.center) * (q[0] - self.center), 0.0))
        }
    }

    fn small_budget() -> InnerOptBudget {
        InnerOptBudget::evals(400)
    }

    #[test]
    fn analytic_argmax_found_within_1e3() {
        let domain = Bounds::symmetric(1.0, 1).unwrap();
        let incumbent = Incumbent { point: vec![0.0], value: -0.5 };
        let out = maximize_acquisition(
            &Bump { center: 0.3 },
            &AcquisitionSpec::ExpectedImprovement,
            &domain,
            &incumbent,
            &small_budget(),
            5,
        )
        .unwrap();
        assert!((out.point[0] - 0.3).abs() < 1e-3, "argmax = {}", out.point[0]);
    }

    #[test]
    fn single_center_observation_pushes_proposal_away() {
        let data = Dataset::new(vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        let kernel = KernelSpec::low_dim_se(LengthScale::new(0.4).unwrap());
        let model = fit(&data, &kernel, 0.0).unwrap();
        let domain = Bounds::symmetric(1.0, 2).unwrap();
        let incumbent = Incumbent { point: vec![0.0, 0.0], value: 1.0 };
        let out = maximize_acquisition(
            &model,
            &AcquisitionSpec::ExpectedImprovement,
            &domain,
            &incumbent,
            &small_budget(),
            6,
        )
        .unwrap();
        let dist = (out.point[0].powi(2) + out.point[1].powi(2)).sqrt();
        assert!(dist > 1e-3, "proposal stayed at the observed center");
        assert!(out.value > 0.0);
    }

    #[test]
    fn winner_is_max_of_candidates_and_feasible() {
        let data =
            Dataset::new(vec![vec![-0.5], vec![0.2], vec![0.7]], vec![0.1, 0.6, 0.3]).unwrap();
        let kernel = KernelSpec::low_dim_se(LengthScale::new(0.3).unwrap());
        let model = fit(&data, &kernel, 1e-6).unwrap();
        let domain = Bounds::symmetric(1.0, 1).unwrap();
        let incumbent = Incumbent { point: vec![0.2], value: 0.6 };
        let out = maximize_acquisition(
            &model,
            &AcquisitionSpec::ExpectedImprovement,
            &domain,
            &incumbent,
            &small_budget(),
            7,
        )
        .unwrap();
        assert!(domain.contains(&out.point));
        let candidates = [out.direct_value, out.cmaes_value, out.sweep_value];
        let max = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.value, max);
        for c in candidates {
            assert!(out.value >= c);
        }
    }

    #[test]
    fn winner_dominates_1024_random_probes() {
        let data = Dataset::new(
            vec![vec![-0.6, 0.1], vec![0.4, -0.3], vec![0.0, 0.8]],
            vec![0.2, -0.1, 0.5],
        )
        .unwrap();
        let kernel = KernelSpec::low_dim_se(LengthScale::new(0.5).unwrap());
        let model = fit(&data, &kernel, 1e-6).unwrap();
        let domain = Bounds::symmetric(1.0, 2).unwrap();
        let incumbent = Incumbent { point: vec![0.0, 0.8], value: 0.5 };
        let spec = AcquisitionSpec::ExpectedImprovement;
        let out =
            maximize_acquisition(&model, &spec, &domain, &incumbent, &InnerOptBudget::evals(600), 8)
                .unwrap();

        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(999);
        for _ in 0..1024 {
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (mu, var) = model.predict(&y).unwrap();
            let probe = spec.score(mu, var, incumbent.value).unwrap();
            assert!(
                out.value >= probe - 1e-12,
                "random probe {probe} beat the winner {}",
                out.value
            );
        }
    }

    #[test]
    fn mirrored_surface_gives_mirrored_argmax() {
        let domain = Bounds::symmetric(1.0, 1).unwrap();
        let incumbent = Incumbent { point: vec![0.0], value: -0.25 };
        let spec = AcquisitionSpec::ExpectedImprovement;
        let budget = small_budget();
        let a = maximize_acquisition(&Bump { center: 0.4 }, &spec, &domain, &incumbent, &budget, 9)
            .unwrap();
        let b =
            maximize_acquisition(&Bump { center: -0.4 }, &spec, &domain, &incumbent, &budget, 9)
                .unwrap();
        assert_abs_diff_eq!(a.point[0], -b.point[0], epsilon = 1e-3);
    }

    #[test]
    fn budget_floor_enforced() {
        let domain = Bounds::symmetric(1.0, 1).unwrap();
        let incumbent = Incumbent { point: vec![0.0], value: 0.0 };
        let err = maximize_acquisition(
            &Bump { center: 0.0 },
            &AcquisitionSpec::ExpectedImprovement,
            &domain,
            &incumbent,
            &InnerOptBudget::evals(30),
            1,
        );
        assert!(err.is_err());
    }
}
