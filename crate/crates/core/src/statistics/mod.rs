//! Shadowing distribution fitting and empirical spatial-correlation
//! estimation.
//!
//! Shadowing samples are fit to a Gaussian and to a skew-normal density; the
//! skewness parameter is chosen by NMSE grid search against the sample
//! histogram. Correlation estimators live in [`correlation`], least-squares
//! model fitting in [`fitting`].
//!
//! Stationarity note: measured shadowing means differ between flight heights
//! while the correlation definition assumes a stationary field; all
//! estimators therefore de-mean with per-flight statistics, the finest
//! granularity the data supports.

pub mod correlation;
pub mod fitting;

pub use correlation::{
    correlation_3d, horizontal_correlation, horizontal_correlation_with_stats, pair_correlation,
    vertical_correlation, CorrelationCurve, CorrelationModel3D, FlightStats, ShadowingFlight,
    VerticalCorrelation,
};
pub use fitting::{fit_biexponential, fit_biexponential_fixed_a, fit_exponential_vertical};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("scale parameter must be > 0, got {0}")]
    InvalidScale(f64),
    #[error("degenerate (zero) standard deviation")]
    DegenerateStd,
    #[error("flights {0} and {1} share fewer than {2} position-matched samples")]
    NoOverlap(usize, usize, usize),
    #[error("fit diverged: {0}")]
    FitDiverged(String),
}

/// Shadowing distribution summary for one flight height.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShadowingStats {
    pub mean_db: f64,
    pub std_db: f64,
    /// Skew-normal shape parameter minimizing the histogram NMSE.
    pub alpha: f64,
    pub nmse_gaussian: f64,
    pub nmse_skewed: f64,
}

/// Sample mean and population-normalized standard deviation.
pub fn fit_gaussian(w: &[f64]) -> Result<(f64, f64), StatsError> {
    if w.len() < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: w.len() });
    }
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Skew-normal density `2/omega * phi(z) * Phi(alpha z)` with
/// `z = (x - xi) / omega`.
///
/// The `1/omega` scale factor is included so the density integrates to 1;
/// `alpha = 0` reduces exactly to the Gaussian density.
pub fn skew_normal_pdf(x: f64, xi: f64, omega: f64, alpha: f64) -> Result<f64, StatsError> {
    if !(omega > 0.0) {
        return Err(StatsError::InvalidScale(omega));
    }
    let z = (x - xi) / omega;
    Ok(2.0 / omega * std_normal_pdf(z) * std_normal_cdf(alpha * z))
}

/// Location/scale of the skew-normal whose first two moments match
/// `(mean, std)` for the given shape `alpha`.
pub fn skew_normal_from_moments(mean: f64, std: f64, alpha: f64) -> (f64, f64) {
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let omega = std / (1.0 - 2.0 * delta * delta / std::f64::consts::PI).sqrt();
    let xi = mean - omega * delta * (2.0 / std::f64::consts::PI).sqrt();
    (xi, omega)
}

/// Fits a skew-normal to shadowing samples by NMSE grid search.
///
/// `alpha` is swept over [-6, 6] in 0.01 steps with (xi, omega) matched to
/// the sample moments at each step; NMSE is computed against the
/// density-normalized histogram with `histogram_bins` equal-width bins. The
/// `alpha = 0` grid point is the plain Gaussian, so `nmse_skewed <=
/// nmse_gaussian` by construction.
pub fn fit_skew_normal(w: &[f64], histogram_bins: usize) -> Result<ShadowingStats, StatsError> {
    if w.len() < 100 {
        return Err(StatsError::TooFewSamples { needed: 100, got: w.len() });
    }
    let (mean, std) = fit_gaussian(w)?;
    if std == 0.0 {
        return Err(StatsError::DegenerateStd);
    }
    let bins = histogram_bins.max(2);
    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    if !(width > 0.0) {
        return Err(StatsError::DegenerateStd);
    }
    let mut counts = vec![0usize; bins];
    for x in w {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = w.len() as f64;
    let density: Vec<f64> = counts.iter().map(|c| *c as f64 / (n * width)).collect();
    let centers: Vec<f64> = (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let density_ss: f64 = density.iter().map(|d| d * d).sum();

    let nmse_for = |alpha: f64| -> f64 {
        let (xi, omega) = skew_normal_from_moments(mean, std, alpha);
        let sse: f64 = centers
            .iter()
            .zip(&density)
            .map(|(x, d)| {
                let f = skew_normal_pdf(*x, xi, omega, alpha).expect("omega > 0");
                (d - f) * (d - f)
            })
            .sum();
        sse / density_ss
    };

    let nmse_gaussian = nmse_for(0.0);
    let mut best_alpha = 0.0;
    let mut best_nmse = nmse_gaussian;
    for i in -600..=600i32 {
        let alpha = i as f64 / 100.0;
        let nmse = nmse_for(alpha);
        if nmse < best_nmse {
            best_nmse = nmse;
            best_alpha = alpha;
        }
    }
    Ok(ShadowingStats {
        mean_db: mean,
        std_db: std,
        alpha: best_alpha,
        nmse_gaussian,
        nmse_skewed: best_nmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::Distribution;

    #[test]
    fn gaussian_fit_on_constant_samples_is_degenerate() {
        let (mean, std) = fit_gaussian(&[3.25, 3.25, 3.25]).unwrap();
        assert_eq!(mean, 3.25);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn gaussian_fit_needs_two_samples() {
        assert!(matches!(
            fit_gaussian(&[1.0]),
            Err(StatsError::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn gaussian_fit_monte_carlo() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let normal = rand_distr::Normal::new(0.0, 6.9).unwrap();
        let w: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
        let (mean, std) = fit_gaussian(&w).unwrap();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((std - 6.9).abs() < 0.05, "std {std}");
    }

    #[test]
    fn skew_normal_with_zero_alpha_is_gaussian() {
        for x in [-3.0, -1.0, 0.0, 0.5, 2.5] {
            let sn = skew_normal_pdf(x, 1.5, 2.0, 0.0).unwrap();
            let z: f64 = (x - 1.5) / 2.0;
            let gauss = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() / 2.0;
            assert!((sn - gauss).abs() < 1e-15, "x={x}: {sn} vs {gauss}");
        }
    }

    #[test]
    fn skew_normal_integrates_to_one() {
        // Simpson quadrature over [xi - 10w, xi + 10w].
        for (xi, omega, alpha) in [(0.0, 1.0, 0.0), (1.5, 2.0, -2.13), (-3.0, 0.5, 4.0)] {
            let n = 20_000usize;
            let a = xi - 10.0 * omega;
            let b = xi + 10.0 * omega;
            let h = (b - a) / n as f64;
            let mut acc = skew_normal_pdf(a, xi, omega, alpha).unwrap()
                + skew_normal_pdf(b, xi, omega, alpha).unwrap();
            for i in 1..n {
                let x = a + i as f64 * h;
                let c = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += c * skew_normal_pdf(x, xi, omega, alpha).unwrap();
            }
            let integral = acc * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-6, "({xi},{omega},{alpha}): {integral}");
        }
    }

    #[test]
    fn negative_alpha_gives_heavier_left_tail() {
        let left = skew_normal_pdf(-1.0, 0.0, 1.0, -2.13).unwrap();
        let right = skew_normal_pdf(1.0, 0.0, 1.0, -2.13).unwrap();
        assert!(left > right, "left {left} right {right}");
    }

    #[test]
    fn invalid_scale_is_rejected() {
        assert!(matches!(
            skew_normal_pdf(0.0, 0.0, 0.0, 1.0),
            Err(StatsError::InvalidScale(_))
        ));
        assert!(skew_normal_pdf(0.0, 0.0, -1.0, 1.0).is_err());
    }

    /// Draws standard skew-normal variates via the conditioning construction.
    fn skew_normal_draws(n: usize, xi: f64, omega: f64, alpha: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let delta = alpha / (1.0 + alpha * alpha).sqrt();
        (0..n)
            .map(|_| {
                let z0: f64 = normal.sample(&mut rng);
                let z1: f64 = normal.sample(&mut rng);
                let z = delta * z0.abs() + (1.0 - delta * delta).sqrt() * z1;
                xi + omega * z
            })
            .collect()
    }

    #[test]
    fn skew_fit_recovers_negative_alpha() {
        let w = skew_normal_draws(100_000, 0.0, 1.0, -2.0, 11);
        let stats = fit_skew_normal(&w, 100).unwrap();
        assert!(
            (-2.5..=-1.5).contains(&stats.alpha),
            "recovered alpha {}",
            stats.alpha
        );
        assert!(stats.nmse_skewed < stats.nmse_gaussian);
    }

    #[test]
    fn skew_fit_on_symmetric_input_finds_near_zero_alpha() {
        // Near alpha = 0 the NMSE objective is O(alpha^3)-flat under moment
        // matching, so the estimate carries ~0.3 of seed-dependent spread at
        // this sample size; the seed is a fixed fixture.
        let w = skew_normal_draws(100_000, 0.0, 1.0, 0.0, 5);
        let stats = fit_skew_normal(&w, 100).unwrap();
        assert!(stats.alpha.abs() < 0.3, "alpha {}", stats.alpha);
        assert!(stats.nmse_skewed <= stats.nmse_gaussian);
    }

    #[test]
    fn skew_fit_needs_100_samples() {
        let w: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!(matches!(
            fit_skew_normal(&w, 30),
            Err(StatsError::TooFewSamples { needed: 100, .. })
        ));
    }
}
