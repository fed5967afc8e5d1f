//! Sample statistics used by ensembles and experiments.
//!
//! Sums are pairwise so results do not depend on how paths were chunked
//! beyond rounding far below reporting precision.

use nalgebra::DMatrix;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

/// Mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    (mean(xs), (variance(xs) / xs.len() as f64).sqrt())
}

/// Sample skewness and excess kurtosis (population moments).
pub fn skew_kurtosis(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let c2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let c3: Vec<f64> = xs.iter().map(|x| (x - m).powi(3)).collect();
    let c4: Vec<f64> = xs.iter().map(|x| (x - m).powi(4)).collect();
    let (m2, m3, m4) = (pairwise_sum(&c2) / n, pairwise_sum(&c3) / n, pairwise_sum(&c4) / n);
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Mean vector and covariance matrix of a sample of vectors, each with
/// entrywise standard errors.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Unbiased sample covariance.
    pub cov: DMatrix<f64>,
    /// Standard error of each covariance entry, from the sample variance of
    /// the centred products.
    pub cov_se: DMatrix<f64>,
}

impl MomentSummary {
    pub fn from_samples(samples: &[Vec<f64>]) -> Self {
        let n = samples.len();
        assert!(n >= 2, "need at least two samples");
        let d = samples[0].len();
        let col = |i: usize| -> Vec<f64> { samples.iter().map(|s| s[i]).collect() };
        let cols: Vec<Vec<f64>> = (0..d).map(col).collect();
        let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
        let mean_se: Vec<f64> = cols.iter().map(|c| (variance(c) / n as f64).sqrt()).collect();
        let mut cov = DMatrix::zeros(d, d);
        let mut cov_se = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let prod: Vec<f64> = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| (a - means[i]) * (b - means[j]))
                    .collect();
                let c = pairwise_sum(&prod) / (n - 1) as f64;
                let se = (variance(&prod) / n as f64).sqrt();
                cov[(i, j)] = c;
                cov[(j, i)] = c;
                cov_se[(i, j)] = se;
                cov_se[(j, i)] = se;
            }
        }
        Self {
            n,
            mean: means,
            mean_se,
            cov,
            cov_se,
        }
    }
}

/// Batch-means estimate of the mean of an autocorrelated series and its
/// standard error. Trailing samples that do not fill a batch are dropped.
pub fn batch_means(series: &[f64], n_batches: usize) -> (f64, f64) {
    let b = series.len() / n_batches;
    assert!(b >= 1 && n_batches >= 2, "series too short for {n_batches} batches");
    let bm: Vec<f64> = (0..n_batches).map(|i| mean(&series[i * b..(i + 1) * b])).collect();
    mean_se(&bm)
}

/// Least-squares line `y = slope x + intercept`; returns
/// `(slope, intercept, slope_se)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len();
    assert!(n >= 2 && n == y.len());
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn covariance_of_known_sample() {
        let s = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let m = MomentSummary::from_samples(&s);
        assert_eq!(m.mean, vec![2.0, 4.0]);
        assert!((m.cov[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m.cov[(0, 1)] - 2.0).abs() < 1e-15);
        assert!((m.cov[(1, 1)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn line_fit_exact() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 2.0).collect();
        let (s, i, se) = fit_line(&x, &y);
        assert!((s + 0.5).abs() < 1e-14 && (i - 2.0).abs() < 1e-14 && se < 1e-12);
    }

    #[test]
    fn batch_means_of_constant_series() {
        let (m, se) = batch_means(&[3.0; 100], 10);
        assert_eq!((m, se), (3.0, 0.0));
    }
}
