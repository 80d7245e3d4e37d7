//! The DIRECT (DIviding RECTangles) global optimizer.
//!
//! DIRECT deterministically partitions the search box into hyperrectangles,
//! always sampling rectangle centers, and each iteration subdivides the
//! "potentially optimal" rectangles: those that could contain the optimum
//! under *some* Lipschitz constant. It needs no derivatives, no random
//! numbers, and covers the whole box, which makes it the workhorse here for
//! acquisition maximization and one-dimensional hyperparameter tuning.

use std::collections::BTreeMap;

use super::{Bounds, InnerOptBudget, Optimum};
use crate::error::Result;

/// Balance parameter: a rectangle must promise at least this relative
/// improvement over the current best to count as potentially optimal.
const EPSILON: f64 = 1e-4;

/// One hyperrectangle of the partition, in unit-cube coordinates.
struct Rect {
    center: Vec<f64>,
    /// Trisection count per dimension; side length along `i` is `3^-levels[i]`.
    levels: Vec<u32>,
    /// Objective (negated: DIRECT minimizes internally) at the center.
    f: f64,
    /// Center-to-vertex distance, the rectangle's "size."
    size: f64,
    /// Creation order, used to break ties deterministically.
    index: usize,
}

fn half_diagonal(levels: &[u32]) -> f64 {
    0.5 * levels.iter().map(|&l| 9.0f64.powi(-(l as i32))).sum::<f64>().sqrt()
}

/// Maximizes `objective` over `bounds` with the DIRECT algorithm.
///
/// Fully deterministic: the same objective, bounds, and budget always
/// produce the same sample sequence and result. The first sample is the box
/// center, and `budget.max_evals` is never exceeded.
pub fn direct_maximize(
    mut objective: impl FnMut(&[f64]) -> f64,
    bounds: &Bounds,
    budget: &InnerOptBudget,
) -> Result<Optimum> {
    let n = bounds.dim();
    budget.validate(n)?;

    let mut evals = 0usize;
    let mut best_point: Vec<f64> = Vec::new();
    let mut best_g = f64::INFINITY; // minimized: g = -objective
    let mut eval = |u: &[f64], evals: &mut usize, best_point: &mut Vec<f64>, best_g: &mut f64| {
        let x = bounds.denormalize(u);
        let g = -objective(&x);
        *evals += 1;
        if g < *best_g || best_point.is_empty() {
            *best_g = g;
            *best_point = x;
        }
        g
    };

    let center = vec![0.5; n];
    let f0 = eval(&center, &mut evals, &mut best_point, &mut best_g);
    let mut rects = vec![Rect {
        center,
        levels: vec![0; n],
        f: f0,
        size: half_diagonal(&vec![0; n]),
        index: 0,
    }];

    let mut iter = 0usize;
    'outer: while evals < budget.max_evals && iter < budget.max_iters {
        iter += 1;
        let g_before = best_g;

        let selected = potentially_optimal(&rects, best_g);
        if selected.is_empty() {
            break;
        }

        for &ri in &selected {
            if evals + 2 > budget.max_evals {
                break 'outer;
            }
            // Longest sides of this rectangle.
            let min_level = *rects[ri].levels.iter().min().expect("non-empty levels");
            let long_dims: Vec<usize> =
                (0..n).filter(|&i| rects[ri].levels[i] == min_level).collect();
            let delta = 3.0f64.powi(-(min_level as i32 + 1));

            // Sample center +/- delta along each longest side, while the
            // budget lasts.
            let mut sampled: Vec<(usize, f64, f64)> = Vec::new(); // (dim, f+, f-)
            for &i in &long_dims {
                if evals + 2 > budget.max_evals {
                    break;
                }
                let mut plus = rects[ri].center.clone();
                plus[i] += delta;
                let mut minus = rects[ri].center.clone();
                minus[i] -= delta;
                let f_plus = eval(&plus, &mut evals, &mut best_point, &mut best_g);
                let f_minus = eval(&minus, &mut evals, &mut best_point, &mut best_g);
                sampled.push((i, f_plus, f_minus));
            }
            if sampled.is_empty() {
                break 'outer;
            }

            // Divide along the sampled dimensions, best dimension first, so
            // the most promising samples end up in the largest new
            // rectangles.
            sampled.sort_by(|a, b| {
                let wa = a.1.min(a.2);
                let wb = b.1.min(b.2);
                wa.total_cmp(&wb).then(a.0.cmp(&b.0))
            });
            let mut levels = rects[ri].levels.clone();
            for &(i, f_plus, f_minus) in &sampled {
                levels[i] += 1;
                let size = half_diagonal(&levels);
                for (offset, f) in [(delta, f_plus), (-delta, f_minus)] {
                    let mut c = rects[ri].center.clone();
                    c[i] += offset;
                    let index = rects.len();
                    rects.push(Rect { center: c, levels: levels.clone(), f, size, index });
                }
            }
            rects[ri].levels = levels;
            rects[ri].size = half_diagonal(&rects[ri].levels);
        }

        if budget.tol > 0.0 && g_before - best_g < budget.tol {
            break;
        }
    }

    Ok(Optimum { point: best_point, value: -best_g, evals })
}

/// Indices of the rectangles to divide this iteration, largest first.
///
/// A rectangle is potentially optimal when some Lipschitz constant `K > 0`
/// makes its center value minus `K * size` at least as low as every other
/// rectangle's, and lower than `fmin - EPSILON * |fmin|`. Within a size
/// class only the rectangle with the lowest value (lowest index on ties)
/// can qualify.
fn potentially_optimal(rects: &[Rect], fmin: f64) -> Vec<usize> {
    // Best rectangle per size class, keyed by the size's bit pattern
    // (all sizes are positive, so bit order equals numeric order). Ties on
    // value keep the earlier rectangle.
    let mut classes: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, r) in rects.iter().enumerate() {
        classes
            .entry(r.size.to_bits())
            .and_modify(|j| {
                if r.f < rects[*j].f {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let class_list: Vec<usize> = classes.into_values().collect(); // ascending size
    let m = class_list.len();

    let mut chosen = Vec::new();
    for (c, &rc) in class_list.iter().enumerate() {
        let (fc, sc) = (rects[rc].f, rects[rc].size);
        // Tightest Lipschitz constant forced by smaller rectangles...
        let mut k_lo = 0.0f64;
        for &rj in &class_list[..c] {
            k_lo = k_lo.max((fc - rects[rj].f) / (sc - rects[rj].size));
        }
        // ...and allowed by larger ones.
        let mut k_hi = f64::INFINITY;
        for &rj in &class_list[c + 1..m] {
            k_hi = k_hi.min((rects[rj].f - fc) / (rects[rj].size - sc));
        }
        if k_hi <= 0.0 || k_lo > k_hi {
            continue;
        }
        // Improvement condition, checked at the most favorable K.
        if k_hi.is_finite() && fc - k_hi * sc > fmin - EPSILON * fmin.abs() {
            continue;
        }
        chosen.push(rc);
    }
    // Largest rectangles first; creation index breaks exact size ties.
    chosen.sort_by(|&a, &b| {
        rects[b].size.total_cmp(&rects[a].size).then(rects[a].index.cmp(&rects[b].index))
    });
    chosen
}
