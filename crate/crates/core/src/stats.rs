//! Small numeric helpers shared across modules.

/// Linear-interpolation percentile between order statistics, `q` in [0, 1].
/// For sorted data of length n the rank is `h = q * (n - 1)` and the result
/// interpolates between `x[floor(h)]` and `x[ceil(h)]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    assert!((0.0..=1.0).contains(&q), "q out of [0,1]");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile of unsorted data; sorts a copy.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty slice");
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (ddof = 1); 0.0 for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)
}

/// Population variance (ddof = 0); 0.0 for fewer than two values.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
}

/// Median absolute deviation about the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let devs: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&devs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_linear_interpolation() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert!((percentile(&v, 0.01) - 1.99).abs() < 1e-12);
        assert!((percentile(&v, 0.99) - 99.01).abs() < 1e-12);
        assert!((percentile(&v, 0.5) - 50.5).abs() < 1e-12);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
    }

    #[test]
    fn percentile_single_value() {
        assert_eq!(percentile(&[42.0], 0.25), 42.0);
    }

    #[test]
    fn variance_degenerate() {
        assert_eq!(sample_variance(&[3.0]), 0.0);
        assert_eq!(population_variance(&[3.0]), 0.0);
        assert_eq!(sample_variance(&[5.0, 5.0, 5.0]), 0.0);
    }

    #[test]
    fn mad_basic() {
        // median 2, deviations [1,0,1] -> mad 1
        assert_eq!(mad(&[1.0, 2.0, 3.0]), 1.0);
    }
}
