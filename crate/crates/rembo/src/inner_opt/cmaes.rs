//! CMA-ES (covariance matrix adaptation evolution strategy).
//!
//! The stochastic counterpart to DIRECT: a seeded (mu/mu_w, lambda)
//! evolution strategy with cumulative step-size adaptation and rank-1 plus
//! rank-mu covariance updates, using the standard parameterization. The
//! search runs in unit-cube coordinates; candidates falling outside the box
//! are redrawn up to 100 times and clamped as a last resort. On numerical
//! degeneracy of the covariance the strategy restarts from a fresh random
//! mean, keeping the best point found and continuing against the same
//! evaluation budget.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Bounds, InnerOptBudget, Optimum};
use crate::error::Result;
use crate::rng::rng_from_seed;

/// Initial step size, as a fraction of the (normalized) box width.
const SIGMA0: f64 = 0.3;
/// Out-of-box candidates are redrawn this many times before clamping.
const MAX_RESAMPLES: usize = 100;

/// Strategy constants and adapted state, all in unit-cube coordinates.
struct Strategy {
    n: usize,
    lambda: usize,
    weights: Vec<f64>,
    mueff: f64,
    cs: f64,
    ds: f64,
    cc: f64,
    c1: f64,
    cmu: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    ps: DVector<f64>,
    pc: DVector<f64>,
    generation: usize,
}

impl Strategy {
    fn new(n: usize, mean: DVector<f64>) -> Self {
        let lambda = 4 + (3.0 * (n as f64).ln()).floor() as usize;
        let mu = lambda / 2;
        let mut weights: Vec<f64> =
            (0..mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln()).collect();
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let ds = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let c1 = 2.0 / ((nf + 1.3) * (nf + 1.3) + mueff);
        let cmu = (1.0 - c1)
            .min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0) * (nf + 2.0) + mueff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            n,
            lambda,
            weights,
            mueff,
            cs,
            ds,
            cc,
            c1,
            cmu,
            chi_n,
            mean,
            sigma: SIGMA0,
            cov: DMatrix::identity(n, n),
            ps: DVector::zeros(n),
            pc: DVector::zeros(n),
            generation: 0,
        }
    }

    fn restart(&mut self, mean: DVector<f64>) {
        self.mean = mean;
        self.sigma = SIGMA0;
        self.cov = DMatrix::identity(self.n, self.n);
        self.ps = DVector::zeros(self.n);
        self.pc = DVector::zeros(self.n);
        self.generation = 0;
    }
}

/// Eigendecomposition of the covariance, or `None` when it has degenerated.
fn decompose(cov: &DMatrix<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    if cov.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sym = 0.5 * (cov + cov.transpose());
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if !(min_ev > 0.0) || !max_ev.is_finite() || max_ev / min_ev > 1e14 {
        return None;
    }
    Some((eig.eigenvectors, eig.eigenvalues.map(f64::sqrt)))
}

/// Maximizes `objective` over `bounds` with CMA-ES.
///
/// Reproducible: the same seed, bounds, and budget give the same sample
/// sequence. Every evaluated point lies inside `bounds` and at most
/// `budget.max_evals` evaluations are spent.
pub fn cmaes_maximize(
    mut objective: impl FnMut(&[f64]) -> f64,
    bounds: &Bounds,
    budget: &InnerOptBudget,
    seed: u64,
) -> Result<Optimum> {
    let n = bounds.dim();
    budget.validate(n)?;
    let mut rng = rng_from_seed(seed);
    let uniform_mean =
        |rng: &mut rand_chacha::ChaCha8Rng| DVector::from_fn(n, |_, _| rng.random::<f64>());

    let mut evals = 0usize;
    let mut best_point: Vec<f64> = Vec::new();
    let mut best_g = f64::INFINITY; // minimized: g = -objective

    let first_mean = uniform_mean(&mut rng);
    let mut st = Strategy::new(n, first_mean);
    let mut stagnant_gens = 0usize;

    'outer: while evals < budget.max_evals && st.generation < budget.max_iters {
        let (eigvecs, eig_sqrt) = match decompose(&st.cov) {
            Some(d) => d,
            None => {
                st.restart(uniform_mean(&mut rng));
                continue;
            }
        };

        // Sample one generation (possibly truncated by the budget).
        let mut xs: Vec<DVector<f64>> = Vec::with_capacity(st.lambda);
        let mut gs: Vec<f64> = Vec::with_capacity(st.lambda);
        for _ in 0..st.lambda {
            if evals >= budget.max_evals {
                break;
            }
            let mut x = DVector::zeros(n);
            let mut in_box = false;
            for _ in 0..=MAX_RESAMPLES {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let scaled = &eigvecs * z.component_mul(&eig_sqrt);
                x = &st.mean + st.sigma * scaled;
                if x.iter().all(|&v| (0.0..=1.0).contains(&v)) {
                    in_box = true;
                    break;
                }
            }
            if !in_box {
                x.apply(|v| *v = v.clamp(0.0, 1.0));
            }
            let point = bounds.denormalize(x.as_slice());
            let g = -objective(&point);
            evals += 1;
            if best_point.is_empty() || g < best_g {
                best_g = g;
                best_point = point;
            }
            xs.push(x);
            gs.push(g);
        }
        let mu = st.weights.len();
        if xs.len() < mu {
            break 'outer; // budget exhausted mid-generation
        }

        let g_gen_best = gs.iter().cloned().fold(f64::INFINITY, f64::min);

        // Rank by objective, ties by sample order.
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| gs[a].total_cmp(&gs[b]).then(a.cmp(&b)));

        // Recombination. Displacements are recomputed from the evaluated
        // (possibly clamped) positions so the update reflects what was
        // actually sampled.
        let old_mean = st.mean.clone();
        let mut new_mean = DVector::zeros(n);
        for (i, &w) in st.weights.iter().enumerate() {
            new_mean += w * &xs[order[i]];
        }
        let ys: Vec<DVector<f64>> =
            order[..mu].iter().map(|&i| (&xs[i] - &old_mean) / st.sigma).collect();
        let mean_shift = (&new_mean - &old_mean) / st.sigma;

        // Step-size path, using C^(-1/2) from the eigendecomposition.
        let inv_sqrt =
            &eigvecs * DMatrix::from_diagonal(&eig_sqrt.map(|v| 1.0 / v)) * eigvecs.transpose();
        st.ps = (1.0 - st.cs) * &st.ps
            + (st.cs * (2.0 - st.cs) * st.mueff).sqrt() * (&inv_sqrt * &mean_shift);
        st.generation += 1;
        let ps_norm = st.ps.norm();
        let expected = (1.0 - (1.0 - st.cs).powi(2 * st.generation as i32)).sqrt() * st.chi_n;
        let hsig = ps_norm / expected < 1.4 + 2.0 / (n as f64 + 1.0);

        // Covariance path and update.
        st.pc = (1.0 - st.cc) * &st.pc
            + if hsig { (st.cc * (2.0 - st.cc) * st.mueff).sqrt() } else { 0.0 } * &mean_shift;
        let mut rank_mu = DMatrix::zeros(n, n);
        for (y, &w) in ys.iter().zip(&st.weights) {
            rank_mu += w * y * y.transpose();
        }
        let hsig_correction = if hsig { 0.0 } else { st.cc * (2.0 - st.cc) };
        st.cov = (1.0 - st.c1 - st.cmu) * &st.cov
            + st.c1 * (&st.pc * st.pc.transpose() + hsig_correction * &st.cov)
            + st.cmu * rank_mu;

        // Step-size adaptation.
        st.sigma *= ((st.cs / st.ds) * (ps_norm / st.chi_n - 1.0)).exp();
        st.mean = new_mean;

        if !st.sigma.is_finite() || st.sigma < 1e-12 || st.sigma > 1e4 {
            st.restart(uniform_mean(&mut rng));
            continue;
        }

        // Optional stagnation stop.
        if budget.tol > 0.0 {
            if g_gen_best > best_g - budget.tol {
                stagnant_gens += 1;
            } else {
                stagnant_gens = 0;
            }
            if stagnant_gens >= 15 {
                break;
            }
        }
    }

    Ok(Optimum { point: best_point, value: -best_g, evals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::branin;

    #[test]
    fn solves_sphere_to_1e6() {
        let bounds = Bounds::symmetric(1.0, 5).unwrap();
        let opt = cmaes_maximize(
            |x| -x.iter().map(|v| v * v).sum::<f64>(),
            &bounds,
            &InnerOptBudget::evals(5000),
            17,
        )
        .unwrap();
        assert!(opt.value >= -1e-6, "best = {}", opt.value);
    }

    #[test]
    fn respects_eval_budget_exactly() {
        let bounds = Bounds::symmetric(1.0, 3).unwrap();
        let mut count = 0usize;
        let opt = cmaes_maximize(
            |x| {
                count += 1;
                -x.iter().map(|v| v * v).sum::<f64>()
            },
            &bounds,
            &InnerOptBudget::evals(137),
            3,
        )
        .unwrap();
        assert_eq!(count, opt.evals);
        assert_eq!(opt.evals, 137);
    }

    #[test]
    fn all_samples_stay_in_bounds() {
        let bounds = Bounds::new(vec![-2.0, 3.0], vec![-1.0, 7.0]).unwrap();
        let inner = bounds.clone();
        cmaes_maximize(
            |x| {
                assert!(inner.contains(x), "sample {x:?} escaped the box");
                x[0] + x[1]
            },
            &bounds,
            &InnerOptBudget::evals(500),
            11,
        )
        .unwrap();
    }

    #[test]
    fn same_seed_reproduces() {
        let bounds = Bounds::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
        let run = |seed| {
            cmaes_maximize(|x| -branin(x[0], x[1]), &bounds, &InnerOptBudget::evals(600), seed)
                .unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a.point, b.point);
        assert_eq!(a.value, b.value);
        let c = run(43);
        assert_ne!(a.point, c.point, "different seeds should explore differently");
    }

    #[test]
    fn branin_median_gap_below_1e3() {
        let bounds = Bounds::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
        let mut gaps: Vec<f64> = (0..10)
            .map(|seed| {
                let opt = cmaes_maximize(
                    |x| -branin(x[0], x[1]),
                    &bounds,
                    &InnerOptBudget::evals(3000),
                    seed,
                )
                .unwrap();
                -opt.value - crate::objectives::BRANIN_MIN
            })
            .collect();
        gaps.sort_by(f64::total_cmp);
        let median = 0.5 * (gaps[4] + gaps[5]);
        assert!(median < 1e-3, "median gap = {median}, gaps = {gaps:?}");
    }

    #[test]
    fn survives_degenerate_flat_objective() {
        // A constant surface collapses sigma; the restart logic must keep
        // the search alive without NaNs and still use the whole budget.
        let bounds = Bounds::symmetric(1.0, 2).unwrap();
        let opt = cmaes_maximize(|_| 5.0, &bounds, &InnerOptBudget::evals(400), 9).unwrap();
        assert_eq!(opt.value, 5.0);
        assert_eq!(opt.evals, 400);
    }
}
