//! Small statistical utilities: normal distribution functions,
//! Kolmogorov-Smirnov statistics, and quantiles.

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal cumulative distribution function.
///
/// Computed via `erfc` so both tails keep full relative accuracy; absolute
/// error is far below 1e-12 everywhere.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against the
/// continuous CDF `cdf`. `samples` need not be sorted.
pub fn ks_statistic_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty(), "KS statistic needs at least one sample");
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic (maximum distance between the
/// two empirical CDFs).
pub fn ks_statistic_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS statistic needs samples on both sides");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        let t = x.min(y);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic critical value `c(alpha) / sqrt(n)` for the one-sample KS
/// test: reject at level `alpha` when the statistic exceeds this.
pub fn ks_critical_one_sample(alpha: f64, n: usize) -> f64 {
    ks_scale(alpha) / (n as f64).sqrt()
}

/// Asymptotic critical value `c(alpha) * sqrt((n + m) / (n m))` for the
/// two-sample KS test. At `alpha = 0.01` the scale factor is 1.628.
pub fn ks_critical_two_sample(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ks_scale(alpha) * ((n + m) / (n * m)).sqrt()
}

/// `c(alpha) = sqrt(-ln(alpha / 2) / 2)` from the Kolmogorov distribution.
fn ks_scale(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// Linear-interpolation quantile (the common "type 7" estimator) of sorted
/// data. `p` must lie in `[0, 1]` and `sorted` must be non-empty and sorted
/// ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level out of range");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Arithmetic mean. Panics on empty input.
pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean of empty slice");
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Median of unsorted data.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "slope needs at least two points");
    let mx = mean(x);
    let my = mean(y);
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_reference_values() {
        // Reference values accurate to ~1e-16 (computed with mpmath).
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.841344746068543, epsilon = 1e-13);
        assert_abs_diff_eq!(normal_cdf(-1.0), 0.158655253931457, epsilon = 1e-13);
        assert_abs_diff_eq!(normal_cdf(2.0), 0.977249868051821, epsilon = 1e-13);
        assert_abs_diff_eq!(normal_cdf(-5.0), 2.866515718791939e-7, epsilon = 1e-15);
    }

    #[test]
    fn normal_pdf_reference_values() {
        assert_abs_diff_eq!(normal_pdf(0.0), 0.3989422804014327, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_pdf(1.0), 0.24197072451914337, epsilon = 1e-15);
    }

    #[test]
    fn ks_one_sample_detects_uniform_vs_normal() {
        // Uniform [0,1] data against the N(0,1) CDF: statistic is large.
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic_one_sample(&xs, normal_cdf);
        assert!(d > 0.4, "d = {d}");
        // The same data against its own CDF: statistic is tiny.
        let d_self = ks_statistic_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d_self < 0.002, "d = {d_self}");
    }

    #[test]
    fn ks_two_sample_identical_is_zero() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_statistic_two_sample(&xs, &xs), 0.0);
    }

    #[test]
    fn ks_two_sample_disjoint_is_one() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..50).map(|i| 1000.0 + i as f64).collect();
        assert_eq!(ks_statistic_two_sample(&xs, &ys), 1.0);
    }

    #[test]
    fn ks_critical_two_sample_matches_published_scale() {
        // c(0.01) = 1.628 (to three decimals).
        let c = ks_critical_two_sample(0.01, 1, 1) / (2.0f64).sqrt();
        assert_abs_diff_eq!(c, 1.628, epsilon = 1e-3);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_abs_diff_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.25), 1.75);
    }

    #[test]
    fn slope_of_line_is_exact() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(ols_slope(&x, &y), 2.0, epsilon = 1e-14);
    }
}
