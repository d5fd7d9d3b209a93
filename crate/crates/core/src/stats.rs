//! Small descriptive and goodness-of-fit statistics used by tests and
//! evaluation.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Upper-tail p-value of Pearson's χ² statistic for observed counts against
/// expected counts (`observed.len() − 1` degrees of freedom).
pub fn chi_square_p_value(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (*o as f64 - e).powi(2) / e)
        .sum();
    let df = (observed.len() - 1) as f64;
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Kolmogorov–Smirnov statistic of `samples` against the standard normal.
pub fn ks_standard_normal(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let norm = Normal::standard();
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = norm.cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Linear-interpolated quantile of already sorted values, `q ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((variance(&[1.0, 2.0, 3.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.1]) - 1.0).abs() < 1e-3);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 5.0]), 0.0);
    }

    #[test]
    fn chi_square_reference() {
        // 2 d.o.f.: upper tail is exp(−x/2)
        let p = chi_square_p_value(&[10, 20, 30], &[20.0, 20.0, 20.0]);
        assert!((p - (-10.0f64 / 2.0).exp()).abs() < 1e-9);
        assert!((chi_square_p_value(&[5, 5], &[5.0, 5.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_of_midpoints_is_half_step() {
        // samples at Φ⁻¹((i+0.5)/n) give the minimal statistic 1/(2n)
        let n = 100;
        let norm = Normal::standard();
        let xs: Vec<f64> = (0..n).map(|i| norm.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
        assert!((ks_standard_normal(&xs) - 0.5 / n as f64).abs() < 1e-9);
    }

    #[test]
    fn quantiles() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
        assert_eq!(quantile_sorted(&[4.0], 0.3), 4.0);
    }
}
