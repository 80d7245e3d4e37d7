//! Adaptive length-scale control.
//!
//! A plain marginal-likelihood fit tends to drive the SE length scale to
//! large values once the surrogate fits the data well, which collapses
//! predictive variance and stalls exploration. The controller here couples
//! bounded likelihood maximization with an exploitation detector: when the
//! predictive standard deviation at the chosen proposal stays below a
//! threshold for five consecutive iterations, the upper length-scale bound
//! is pulled down to `0.9 * ell` (never below the lower bound), forcing the
//! next retune toward shorter, more exploratory length scales. Retunes also
//! fire unconditionally every 20 iterations.

use crate::error::Result;
use crate::gp::{log_marginal_likelihood, Dataset};
use crate::inner_opt::{direct_maximize, Bounds, InnerOptBudget};
use crate::kernels::{KernelSpec, LengthScale};

/// Default length-scale search interval.
pub const DEFAULT_ELL_BOUNDS: (f64, f64) = (0.01, 50.0);
/// Default exploitation threshold, in standard-deviation units.
pub const DEFAULT_T_SIGMA: f64 = 0.002;
/// Evaluations given to the 1-D likelihood maximization per retune.
const RETUNE_EVALS: usize = 200;
/// Consecutive low-variance proposals that trigger a bound shrink.
const EXPLOIT_LIMIT: u32 = 5;
/// Score for a length scale whose likelihood evaluation failed: effectively
/// minus infinity, but finite so the search arithmetic stays well-defined.
const FAILED_SCORE: f64 = -1e300;

/// Mutable controller state carried across one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    ell: LengthScale,
    lower: f64,
    upper: f64,
    c: u32,
    t_sigma: f64,
    iter: u64,
}

impl HyperState {
    /// Controller with the default interval `[0.01, 50]` and threshold.
    pub fn new(initial_ell: LengthScale) -> Result<Self> {
        Self::with_bounds(initial_ell, DEFAULT_ELL_BOUNDS.0, DEFAULT_ELL_BOUNDS.1, DEFAULT_T_SIGMA)
    }

    pub fn with_bounds(
        initial_ell: LengthScale,
        lower: f64,
        upper: f64,
        t_sigma: f64,
    ) -> Result<Self> {
        use crate::error::Error;
        if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "length-scale bounds must satisfy 0 < lower <= upper (got [{lower}, {upper}])"
            )));
        }
        if !(initial_ell.get() >= lower && initial_ell.get() <= upper) {
            return Err(Error::InvalidParameter(format!(
                "initial length scale {} outside [{lower}, {upper}]",
                initial_ell.get()
            )));
        }
        if !t_sigma.is_finite() || t_sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "exploitation threshold must be positive (got {t_sigma})"
            )));
        }
        Ok(Self { ell: initial_ell, lower, upper, c: 0, t_sigma, iter: 0 })
    }

    pub fn ell(&self) -> LengthScale {
        self.ell
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Consecutive-exploitation counter.
    pub fn counter(&self) -> u32 {
        self.c
    }

    /// Iterations observed so far (per `maybe_retune` calls).
    pub fn iterations(&self) -> u64 {
        self.iter
    }

    /// Feeds the predictive standard deviation of the proposal the
    /// acquisition step just selected: below the threshold counts toward an
    /// exploitation streak, at-or-above resets the streak.
    pub fn observe_proposal(&mut self, proposal_std: f64) {
        if proposal_std < self.t_sigma {
            self.c = (self.c + 1).min(EXPLOIT_LIMIT);
        } else {
            self.c = 0;
        }
    }

    /// Counts one optimization iteration and retunes the length scale if
    /// the cadence (every 20th iteration) or the exploitation streak says
    /// to. Returns whether a retune ran.
    ///
    /// On an exploitation trigger the upper bound first shrinks to
    /// `max(0.9 * ell, lower)` and the streak resets. The retune itself
    /// maximizes the log marginal likelihood of `data` (values centered,
    /// matching what a subsequent fit sees) over `[lower, upper]` with the
    /// deterministic 1-D optimizer; length scales whose likelihood fails to
    /// evaluate are scored as good as minus infinity.
    pub fn maybe_retune(
        &mut self,
        data: &Dataset,
        template: &KernelSpec,
        jitter: f64,
    ) -> Result<bool> {
        self.iter += 1;
        let exploit = self.c >= EXPLOIT_LIMIT;
        if !(self.iter % 20 == 0 || exploit) {
            return Ok(false);
        }
        if exploit {
            self.upper = (0.9 * self.ell.get()).max(self.lower);
            self.c = 0;
        }
        self.retune(data, template, jitter)?;
        Ok(true)
    }

    /// Reoptimizes the length scale immediately, outside the cadence.
    ///
    /// This is the recovery path for a Gram matrix that stops factorizing
    /// at the current scale — possible for the categorical kernel, whose
    /// squared-Hamming form is not guaranteed positive semidefinite —
    /// since unfactorizable scales score as minus infinity here and are
    /// never selected. Leaves the iteration counter, exploitation streak,
    /// and bounds untouched.
    pub fn retune(&mut self, data: &Dataset, template: &KernelSpec, jitter: f64) -> Result<()> {
        // Degenerate interval: the single feasible point wins outright.
        if self.upper - self.lower < 1e-12 {
            self.ell = LengthScale::new(self.lower)?;
            return Ok(());
        }

        let (centered, _) = data.centered();
        let score = |l: &[f64]| -> f64 {
            match LengthScale::new(l[0]) {
                Ok(ell) => log_marginal_likelihood(&centered, &template.with_ell(ell), jitter)
                    .map_or(FAILED_SCORE, |v| if v.is_finite() { v } else { FAILED_SCORE }),
                Err(_) => FAILED_SCORE,
            }
        };
        let bounds = Bounds::new(vec![self.lower], vec![self.upper])?;
        let best = direct_maximize(score, &bounds, &InnerOptBudget::evals(RETUNE_EVALS))?;
        self.ell = LengthScale::new(best.point[0].clamp(self.lower, self.upper))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ell(v: f64) -> LengthScale {
        LengthScale::new(v).unwrap()
    }

    fn se_template() -> KernelSpec {
        KernelSpec::low_dim_se(ell(1.0))
    }

    fn toy_data(n: usize) -> Dataset {
        // A smooth 1-D curve sampled on spread points.
        let points: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 0.4]).collect();
        let values: Vec<f64> = (0..n).map(|i| (i as f64 * 0.4).sin()).collect();
        Dataset::new(points, values).unwrap()
    }

    #[test]
    fn counter_increments_below_threshold() {
        let mut st = HyperState::new(ell(1.0)).unwrap();
        st.observe_proposal(0.001);
        assert_eq!(st.counter(), 1);
    }

    #[test]
    fn counter_resets_at_or_above_threshold() {
        let mut st = HyperState::new(ell(1.0)).unwrap();
        for _ in 0..4 {
            st.observe_proposal(0.0001);
        }
        assert_eq!(st.counter(), 4);
        st.observe_proposal(0.5);
        assert_eq!(st.counter(), 0);
        // Exactly at the threshold is NOT below it.
        st.observe_proposal(DEFAULT_T_SIGMA);
        assert_eq!(st.counter(), 0);
    }

    #[test]
    fn five_quiet_proposals_reach_the_trigger() {
        let mut st = HyperState::new(ell(1.0)).unwrap();
        for _ in 0..5 {
            st.observe_proposal(0.0019);
        }
        assert_eq!(st.counter(), 5);
    }

    #[test]
    fn exploitation_shrinks_upper_bound_to_nine_tenths() {
        let mut st = HyperState::new(ell(10.0)).unwrap();
        for _ in 0..5 {
            st.observe_proposal(0.0);
        }
        let retuned = st.maybe_retune(&toy_data(5), &se_template(), 1e-6).unwrap();
        assert!(retuned);
        assert_abs_diff_eq!(st.upper(), 9.0, epsilon = 1e-12);
        assert_eq!(st.counter(), 0);
        assert!(st.ell().get() >= st.lower() && st.ell().get() <= st.upper());
    }

    #[test]
    fn shrink_is_floored_at_the_lower_bound() {
        let mut st = HyperState::new(ell(0.011)).unwrap();
        for _ in 0..5 {
            st.observe_proposal(0.0);
        }
        st.maybe_retune(&toy_data(4), &se_template(), 1e-6).unwrap();
        assert_eq!(st.upper(), 0.01);
        assert_eq!(st.ell().get(), 0.01);
    }

    #[test]
    fn cadence_retune_does_not_shrink() {
        let mut st = HyperState::new(ell(2.0)).unwrap();
        let data = toy_data(6);
        let mut fired = Vec::new();
        for _ in 0..20 {
            st.observe_proposal(1.0); // never exploiting
            fired.push(st.maybe_retune(&data, &se_template(), 1e-6).unwrap());
        }
        assert_eq!(fired.iter().filter(|&&f| f).count(), 1);
        assert!(fired[19], "the 20th iteration retunes");
        assert_eq!(st.upper(), DEFAULT_ELL_BOUNDS.1, "cadence retune leaves the bound alone");
    }

    #[test]
    fn retunes_fire_exactly_on_the_cadence() {
        let mut st = HyperState::new(ell(1.0)).unwrap();
        let data = toy_data(5);
        let mut fired_at = Vec::new();
        for i in 1..=60 {
            st.observe_proposal(0.7);
            if st.maybe_retune(&data, &se_template(), 1e-6).unwrap() {
                fired_at.push(i);
            }
        }
        assert_eq!(fired_at, vec![20, 40, 60]);
    }

    #[test]
    fn flat_likelihood_stays_feasible_and_deterministic() {
        let single = Dataset::new(vec![vec![0.0]], vec![0.3]).unwrap();
        let mut a = HyperState::new(ell(1.0)).unwrap();
        let mut b = HyperState::new(ell(1.0)).unwrap();
        for _ in 0..20 {
            a.observe_proposal(1.0);
            b.observe_proposal(1.0);
            a.maybe_retune(&single, &se_template(), 1e-6).unwrap();
            b.maybe_retune(&single, &se_template(), 1e-6).unwrap();
        }
        assert!(a.ell().get() >= a.lower() && a.ell().get() <= a.upper());
        assert_eq!(a.ell().get().to_bits(), b.ell().get().to_bits());
        assert_eq!(a.upper().to_bits(), b.upper().to_bits());
    }

    #[test]
    fn upper_bound_never_increases_and_ell_stays_bracketed() {
        let mut st = HyperState::new(ell(5.0)).unwrap();
        let data = toy_data(8);
        let mut last_upper = st.upper();
        // A scripted mix of quiet and loud proposals.
        for i in 0..100 {
            let std = if (i / 7) % 2 == 0 { 0.0001 } else { 0.8 };
            st.observe_proposal(std);
            st.maybe_retune(&data, &se_template(), 1e-6).unwrap();
            assert!(st.upper() <= last_upper + 1e-15, "U must be non-increasing");
            assert_eq!(st.lower(), DEFAULT_ELL_BOUNDS.0, "L is constant");
            assert!(st.ell().get() >= st.lower() && st.ell().get() <= st.upper() + 1e-15);
            assert!(st.counter() <= 5);
            last_upper = st.upper();
        }
    }

    #[test]
    fn scripted_trajectory_is_bit_exact_across_runs() {
        let data = toy_data(7);
        let script: Vec<f64> =
            (0..50).map(|i| if i % 9 < 5 { 0.0015 } else { 0.4 }).collect();
        let run = || {
            let mut st = HyperState::new(ell(3.0)).unwrap();
            let mut trail = Vec::new();
            for &std in &script {
                st.observe_proposal(std);
                st.maybe_retune(&data, &se_template(), 1e-6).unwrap();
                trail.push((st.ell().get().to_bits(), st.upper().to_bits(), st.counter()));
            }
            trail
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn likelihood_actually_improves_at_retune() {
        // On smooth sine data, the retuned ell should make the marginal
        // likelihood at least as high as the starting guess's.
        let data = toy_data(12);
        let (centered, _) = data.centered();
        let start = ell(40.0);
        let before =
            log_marginal_likelihood(&centered, &se_template().with_ell(start), 1e-6).unwrap();
        let mut st = HyperState::new(start).unwrap();
        for _ in 0..20 {
            st.observe_proposal(1.0);
            st.maybe_retune(&data, &se_template(), 1e-6).unwrap();
        }
        let after =
            log_marginal_likelihood(&centered, &se_template().with_ell(st.ell()), 1e-6).unwrap();
        assert!(after >= before - 1e-9, "retune worsened the likelihood: {after} < {before}");
        assert!(st.ell().get() < 40.0, "sine data wants a much shorter length scale");
    }

    #[test]
    fn invalid_construction_rejected() {
        assert!(HyperState::with_bounds(ell(1.0), 0.0, 50.0, 0.002).is_err());
        assert!(HyperState::with_bounds(ell(1.0), 2.0, 1.0, 0.002).is_err());
        assert!(HyperState::with_bounds(ell(100.0), 0.01, 50.0, 0.002).is_err());
        assert!(HyperState::with_bounds(ell(1.0), 0.01, 50.0, 0.0).is_err());
    }
}
