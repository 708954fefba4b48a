//! Small numerical kernels shared across the crate: order-independent
//! summation, quadrature, bracketed root finding, golden-section search,
//! and the least-squares slope fit used by the growth curves.

/// Pairwise (cascade) summation. Order-fixed and far more accurate than a
/// naive left fold; used everywhere replicate values are aggregated so that
/// results do not depend on how replicates were scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean via pairwise summation.
pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (n-1 denominator) about the given mean.
pub fn sample_variance(xs: &[f64], mean: f64) -> f64 {
    assert!(xs.len() >= 2);
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Fourth central sample moment, used for the standard error of a variance
/// estimate: Var(s^2) ~ (m4 - s^4)/n.
pub fn fourth_central_moment(xs: &[f64], mean: f64) -> f64 {
    assert!(!xs.is_empty());
    let q: Vec<f64> = xs
        .iter()
        .map(|x| {
            let d = x - mean;
            d * d * d * d
        })
        .collect();
    pairwise_sum(&q) / xs.len() as f64
}

/// Standard error of the sample variance via the fourth-moment formula.
pub fn variance_se(xs: &[f64], mean: f64, variance: f64) -> f64 {
    let m4 = fourth_central_moment(xs, mean);
    ((m4 - variance * variance).max(0.0) / xs.len() as f64).sqrt()
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + step * i as f64).collect()
}

/// Composite Simpson quadrature with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// Bisection on a bracketing interval. `f(a)` and `f(b)` must have opposite
/// signs; returns the midpoint once the interval is below `tol`.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    while (b - a).abs() > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Ordinary least-squares slope of `y` on `x` with the slope's standard
/// deviation propagated from known per-point standard errors of `y`.
///
/// Returns `(slope, slope_sd)`.
pub fn ols_slope_with_se(x: &[f64], y: &[f64], y_se: &[f64]) -> (f64, f64) {
    assert!(x.len() == y.len() && y.len() == y_se.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let xbar = pairwise_sum(x) / n;
    let sxx: f64 = x.iter().map(|xi| (xi - xbar) * (xi - xbar)).sum();
    assert!(sxx > 0.0, "degenerate time grid");
    let slope: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (xi - xbar) * yi / sxx)
        .sum();
    let var: f64 = x
        .iter()
        .zip(y_se)
        .map(|(xi, si)| {
            let c = (xi - xbar) / sxx;
            c * c * si * si
        })
        .sum();
    (slope, var.sqrt())
}

/// Two-sided Kolmogorov-Smirnov statistic of a sample against the unit-rate
/// exponential distribution.
pub fn ks_statistic_exp1(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in samples.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    d
}

/// Critical value for the two-sided KS test at significance `alpha`,
/// using the asymptotic formula with the Stephens small-sample correction.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    let sn = (n as f64).sqrt();
    c / (sn + 0.12 + 0.11 / sn)
}

/// Wilson-Hilferty approximation to the chi-square quantile at upper-tail
/// probability `alpha` with `df` degrees of freedom.
pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    // Upper-tail standard normal quantiles for the significances we use.
    let z = match alpha {
        a if (a - 0.001).abs() < 1e-12 => 3.090_232_306_167_813,
        a if (a - 0.01).abs() < 1e-12 => 2.326_347_874_040_841,
        a if (a - 0.05).abs() < 1e-12 => 1.644_853_626_951_472,
        _ => panic!("unsupported significance level {alpha}"),
    };
    let k = df as f64;
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * t * t * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert_relative_eq!(pairwise_sum(&xs), naive, max_relative = 1e-12);
    }

    #[test]
    fn simpson_integrates_exponential() {
        let val = simpson(|u| (-u).exp(), 0.0, 20.0, 20_000);
        assert_relative_eq!(val, 1.0 - (-20.0f64).exp(), epsilon = 1e-12, max_relative = 1e-12);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert_relative_eq!(root, 2.0f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn golden_section_finds_parabola_min() {
        let m = golden_section_min(|x| (x - 0.3) * (x - 0.3), -1.0, 1.0, 1e-10);
        assert_relative_eq!(m, 0.3, epsilon = 1e-8);
    }

    #[test]
    fn ols_slope_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        let se = [0.1; 4];
        let (slope, sd) = ols_slope_with_se(&x, &y, &se);
        assert_relative_eq!(slope, 2.0, epsilon = 1e-12);
        assert!(sd > 0.0 && sd < 0.2);
    }

    #[test]
    fn chi2_critical_close_to_table() {
        // Table value for df=1, alpha=0.001 is 10.828.
        let c = chi2_critical(1, 0.001);
        assert!((c - 10.828).abs() < 0.35, "{c}");
    }
}
