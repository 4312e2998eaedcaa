//! Small descriptive statistics used by the estimators and the experiment summaries.

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased (n - 1) sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Standard error of the mean, treating values as independent.
pub fn standard_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Standard error of the mean of a correlated series, from `blocks` equal block averages.
/// Trailing values that do not fill a block are dropped from the error estimate only.
pub fn blocked_standard_error(series: &[f64], blocks: usize) -> f64 {
    let blocks = blocks.max(2);
    let size = series.len() / blocks;
    if size < 1 {
        return standard_error(series);
    }
    let averages: Vec<f64> = series
        .chunks_exact(size)
        .take(blocks)
        .map(mean)
        .collect();
    standard_error(&averages)
}

/// Least-squares slope of y against x.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Kendall's tau-b rank correlation (tie-corrected).
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j]).partial_cmp(&0.0).unwrap() as i64;
            let db = (b[i] - b[j]).partial_cmp(&0.0).unwrap() as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n_a = (concordant + discordant + ties_b) as f64;
    let n_b = (concordant + discordant + ties_a) as f64;
    (concordant - discordant) as f64 / (n_a * n_b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&v), 2.5);
        assert!((sample_variance(&v) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(sample_variance(&[3.0]), 0.0);
    }

    #[test]
    fn slope_of_line() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, -1.0, -3.0];
        assert!((linear_slope(&x, &y) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_extremes() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((kendall_tau_b(&a, &a) - 1.0).abs() < 1e-15);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((kendall_tau_b(&a, &rev) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_series_has_zero_blocked_error() {
        assert_eq!(blocked_standard_error(&[2.0; 100], 10), 0.0);
    }
}
