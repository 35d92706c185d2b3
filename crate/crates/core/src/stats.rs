//! Small summary statistics shared by the trial and resampling protocols.

/// Arithmetic mean. Returns `NaN` for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (denominator `n - 1`). Zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Mean and `k` times the sample standard deviation.
pub fn mean_margin(values: &[f64], k: f64) -> (f64, f64) {
    (mean(values), k * sample_sd(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_sample_sd() {
        assert!((sample_sd(&[80.0, 82.0]) - 2f64.sqrt()).abs() < 1e-12);
        let (m, margin) = mean_margin(&[80.0, 82.0], 2.0);
        assert_eq!(m, 81.0);
        assert!((margin - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_values_have_zero_spread() {
        assert_eq!(sample_sd(&[0.8; 6]), 0.0);
    }
}
