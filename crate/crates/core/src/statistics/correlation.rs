//! Empirical spatial-correlation estimation and the 3D correlation model.
//!
//! Horizontal correlation follows the five-step procedure: all intra-flight
//! sample pairs, sorted into 2 m horizontal-distance bins, averaged per
//! flight height and then across heights. Vertical correlation pairs
//! position-matched samples from flights at different heights. The 3D model
//! is the separable product of a bi-exponential horizontal term and an
//! exponential vertical term.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::{horizontal_distance, GeoLocation};
use crate::statistics::{fit_gaussian, StatsError};

/// Pairs per chunk handed to one worker during pair enumeration; partial
/// sums are merged in chunk order so results do not depend on scheduling.
const PAIR_CHUNK: usize = 64;

/// Per-flight normalization constants used by the correlation estimators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlightStats {
    pub mean_db: f64,
    pub std_db: f64,
}

/// Shadowing samples of one flight: positions and the per-sample shadowing
/// component in dB.
#[derive(Debug, Clone)]
pub struct ShadowingFlight {
    pub height_m: f64,
    pub locations: Vec<GeoLocation>,
    pub w_db: Vec<f64>,
}

impl ShadowingFlight {
    pub fn new(height_m: f64, locations: Vec<GeoLocation>, w_db: Vec<f64>) -> Self {
        assert_eq!(locations.len(), w_db.len(), "locations and w must align");
        Self { height_m, locations, w_db }
    }

    pub fn len(&self) -> usize {
        self.w_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_db.is_empty()
    }

    pub fn stats(&self) -> Result<FlightStats, StatsError> {
        let (mean_db, std_db) = fit_gaussian(&self.w_db)?;
        Ok(FlightStats { mean_db, std_db })
    }
}

/// Binned correlation estimates against distance.
///
/// `bin_centers_m` holds the count-weighted mean pair distance of each bin
/// (not the geometric bin center), which is what the model fits use. Bins
/// without any pair are dropped, so `counts` entries are always >= 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub bin_centers_m: Vec<f64>,
    pub values: Vec<f64>,
    pub counts: Vec<u64>,
}

impl CorrelationCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Parameters of the separable 3D correlation model
/// `R(d_v, d_h) = exp(-(d_v/d_cor) ln 2) * (a e^{-b1 d_h} + (1-a) e^{-b2 d_h})`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorrelationModel3D {
    /// Mixture weight in [0, 1].
    pub a: f64,
    /// Horizontal decay rates, per meter, > 0.
    pub b1: f64,
    pub b2: f64,
    /// Vertical half-correlation distance, meters, > 0.
    pub d_cor_m: f64,
    /// Shadowing variance, dB^2.
    pub sigma_w2: f64,
}

impl CorrelationModel3D {
    /// Evaluates the model; `R(0, 0) = 1` exactly and the two factors reduce
    /// to the pure horizontal / vertical models when the other distance is 0.
    pub fn eval(&self, d_v: f64, d_h: f64) -> f64 {
        let vertical = (-(d_v / self.d_cor_m) * std::f64::consts::LN_2).exp();
        let horizontal = self.a * (-self.b1 * d_h).exp() + (1.0 - self.a) * (-self.b2 * d_h).exp();
        vertical * horizontal
    }
}

/// Correlation contribution of one sample pair:
/// `(w_i - nu_i)(w_j - nu_j) / (sigma_i sigma_j)`.
pub fn pair_correlation(
    w_i: f64,
    w_j: f64,
    stats_i: FlightStats,
    stats_j: FlightStats,
) -> Result<f64, StatsError> {
    if stats_i.std_db <= 0.0 || stats_j.std_db <= 0.0 {
        return Err(StatsError::DegenerateStd);
    }
    Ok((w_i - stats_i.mean_db) * (w_j - stats_j.mean_db) / (stats_i.std_db * stats_j.std_db))
}

#[derive(Debug, Clone, Copy, Default)]
struct BinAcc {
    sum_r: f64,
    sum_d: f64,
    count: u64,
}

fn merge_bins(into: &mut Vec<BinAcc>, from: &[BinAcc]) {
    if from.len() > into.len() {
        into.resize(from.len(), BinAcc::default());
    }
    for (dst, src) in into.iter_mut().zip(from) {
        dst.sum_r += src.sum_r;
        dst.sum_d += src.sum_d;
        dst.count += src.count;
    }
}

/// Intra-flight pair enumeration into distance bins. Pairs are (i, j) with
/// i < j; chunks of i are processed in parallel and merged in index order.
fn intra_flight_bins(flight: &ShadowingFlight, stats: FlightStats, bin_m: f64) -> Vec<BinAcc> {
    let n = flight.len();
    let starts: Vec<usize> = (0..n).step_by(PAIR_CHUNK).collect();
    let partials: Vec<Vec<BinAcc>> = starts
        .par_iter()
        .map(|&start| {
            let mut bins: Vec<BinAcc> = Vec::new();
            for i in start..(start + PAIR_CHUNK).min(n) {
                let (loc_i, w_i) = (&flight.locations[i], flight.w_db[i]);
                for j in (i + 1)..n {
                    let d = horizontal_distance(loc_i, &flight.locations[j]);
                    let r = (w_i - stats.mean_db) * (flight.w_db[j] - stats.mean_db)
                        / (stats.std_db * stats.std_db);
                    let bin = (d / bin_m) as usize;
                    if bin >= bins.len() {
                        bins.resize(bin + 1, BinAcc::default());
                    }
                    bins[bin].sum_r += r;
                    bins[bin].sum_d += d;
                    bins[bin].count += 1;
                }
            }
            bins
        })
        .collect();
    let mut merged = Vec::new();
    for p in &partials {
        merge_bins(&mut merged, p);
    }
    merged
}

/// Cross-flight pair enumeration into horizontal-distance bins.
fn cross_flight_bins(
    a: &ShadowingFlight,
    stats_a: FlightStats,
    b: &ShadowingFlight,
    stats_b: FlightStats,
    bin_m: f64,
) -> Vec<BinAcc> {
    let n = a.len();
    let starts: Vec<usize> = (0..n).step_by(PAIR_CHUNK).collect();
    let partials: Vec<Vec<BinAcc>> = starts
        .par_iter()
        .map(|&start| {
            let mut bins: Vec<BinAcc> = Vec::new();
            for i in start..(start + PAIR_CHUNK).min(n) {
                let (loc_i, w_i) = (&a.locations[i], a.w_db[i]);
                for j in 0..b.len() {
                    let d = horizontal_distance(loc_i, &b.locations[j]);
                    let r = (w_i - stats_a.mean_db) * (b.w_db[j] - stats_b.mean_db)
                        / (stats_a.std_db * stats_b.std_db);
                    let bin = (d / bin_m) as usize;
                    if bin >= bins.len() {
                        bins.resize(bin + 1, BinAcc::default());
                    }
                    bins[bin].sum_r += r;
                    bins[bin].sum_d += d;
                    bins[bin].count += 1;
                }
            }
            bins
        })
        .collect();
    let mut merged = Vec::new();
    for p in &partials {
        merge_bins(&mut merged, p);
    }
    merged
}

fn curve_from_height_bins(per_height: &[Vec<BinAcc>], bin_m: f64) -> CorrelationCurve {
    let n_bins = per_height.iter().map(Vec::len).max().unwrap_or(0);
    let mut centers = Vec::new();
    let mut values = Vec::new();
    let mut counts = Vec::new();
    for bin in 0..n_bins {
        let mut height_means = Vec::new();
        let mut sum_d = 0.0;
        let mut count = 0u64;
        for bins in per_height {
            if let Some(acc) = bins.get(bin) {
                if acc.count > 0 {
                    height_means.push(acc.sum_r / acc.count as f64);
                    sum_d += acc.sum_d;
                    count += acc.count;
                }
            }
        }
        if height_means.is_empty() {
            continue; // empty bin: dropped, visible as a gap in the counts
        }
        values.push(height_means.iter().sum::<f64>() / height_means.len() as f64);
        centers.push(if count > 0 { sum_d / count as f64 } else { (bin as f64 + 0.5) * bin_m });
        counts.push(count);
    }
    CorrelationCurve { bin_centers_m: centers, values, counts }
}

/// Horizontal-distance correlation, averaged in `bin_m` bins per flight
/// height and then across heights. Flights are expected to be trimmed of
/// take-off/landing segments already.
pub fn horizontal_correlation(
    flights: &[ShadowingFlight],
    bin_m: f64,
) -> Result<CorrelationCurve, StatsError> {
    let stats = flights.iter().map(|f| f.stats()).collect::<Result<Vec<_>, _>>()?;
    horizontal_correlation_with_stats(flights, &stats, bin_m)
}

/// As [`horizontal_correlation`] with caller-supplied normalization
/// constants (e.g. when the per-flight standard deviation is degenerate or
/// known a priori).
pub fn horizontal_correlation_with_stats(
    flights: &[ShadowingFlight],
    stats: &[FlightStats],
    bin_m: f64,
) -> Result<CorrelationCurve, StatsError> {
    if flights.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    assert_eq!(flights.len(), stats.len(), "one stats entry per flight");
    if stats.iter().any(|s| s.std_db <= 0.0) {
        return Err(StatsError::DegenerateStd);
    }
    let per_height: Vec<Vec<BinAcc>> = flights
        .iter()
        .zip(stats)
        .map(|(f, s)| intra_flight_bins(f, *s, bin_m))
        .collect();
    Ok(curve_from_height_bins(&per_height, bin_m))
}

/// Per-height-pair correlations from position-matched samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerticalCorrelation {
    pub heights_m: Vec<f64>,
    /// `values[i][j]` is the mean pair correlation between flights i and j;
    /// the diagonal is ~1 by construction.
    pub values: Vec<Vec<f64>>,
    pub matched_counts: Vec<Vec<u64>>,
}

impl VerticalCorrelation {
    /// Off-diagonal entries averaged per vertical offset, sorted by offset;
    /// the input points for the vertical-model fit.
    pub fn averages_by_offset(&self) -> Vec<(f64, f64)> {
        let mut acc: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
        let n = self.heights_m.len();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d_v = (self.heights_m[i] - self.heights_m[j]).abs();
                let key = (d_v * 1000.0).round() as i64;
                let e = acc.entry(key).or_insert((0.0, 0));
                e.0 += self.values[i][j];
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(key, (sum, n))| (key as f64 / 1000.0, sum / n as f64))
            .collect()
    }
}

/// Vertical-distance correlation between flights with nominally identical 2D
/// trajectories.
///
/// Each sample of one flight is matched to the horizontally nearest sample
/// of the other; matches farther than `dh_max_m` are excluded. Fails with
/// [`StatsError::NoOverlap`] when fewer than 10 matches survive for a pair.
pub fn vertical_correlation(
    flights: &[ShadowingFlight],
    dh_max_m: f64,
) -> Result<VerticalCorrelation, StatsError> {
    let stats = flights.iter().map(|f| f.stats()).collect::<Result<Vec<_>, _>>()?;
    if stats.iter().any(|s| s.std_db <= 0.0) {
        return Err(StatsError::DegenerateStd);
    }
    let n = flights.len();
    let cells: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let computed: Vec<Result<(f64, u64), StatsError>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (fa, fb) = (&flights[i], &flights[j]);
            let (sa, sb) = (stats[i], stats[j]);
            let mut sum = 0.0;
            let mut count = 0u64;
            for (loc_a, w_a) in fa.locations.iter().zip(&fa.w_db) {
                let mut best = f64::INFINITY;
                let mut best_w = 0.0;
                for (loc_b, w_b) in fb.locations.iter().zip(&fb.w_db) {
                    let d = horizontal_distance(loc_a, loc_b);
                    if d < best {
                        best = d;
                        best_w = *w_b;
                    }
                }
                if best <= dh_max_m {
                    sum += (w_a - sa.mean_db) * (best_w - sb.mean_db) / (sa.std_db * sb.std_db);
                    count += 1;
                }
            }
            if count < 10 {
                return Err(StatsError::NoOverlap(i, j, 10));
            }
            Ok((sum / count as f64, count))
        })
        .collect();

    let mut values = vec![vec![0.0; n]; n];
    let mut counts = vec![vec![0u64; n]; n];
    for (&(i, j), cell) in cells.iter().zip(computed) {
        let (v, c) = cell?;
        values[i][j] = v;
        counts[i][j] = c;
    }
    Ok(VerticalCorrelation {
        heights_m: flights.iter().map(|f| f.height_m).collect(),
        values,
        matched_counts: counts,
    })
}

/// Cross-flight correlation binned by horizontal distance, one curve per
/// vertical offset present among the flights (offset 0 uses intra-flight
/// pairs and reduces to the horizontal estimator on a single flight).
pub fn correlation_3d(
    flights: &[ShadowingFlight],
    bin_m: f64,
) -> Result<Vec<(f64, CorrelationCurve)>, StatsError> {
    let stats = flights.iter().map(|f| f.stats()).collect::<Result<Vec<_>, _>>()?;
    if stats.iter().any(|s| s.std_db <= 0.0) {
        return Err(StatsError::DegenerateStd);
    }
    let n = flights.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let partials: Vec<(i64, Vec<BinAcc>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d_v = (flights[i].height_m - flights[j].height_m).abs();
            let key = (d_v * 1000.0).round() as i64;
            let bins = if i == j {
                intra_flight_bins(&flights[i], stats[i], bin_m)
            } else {
                cross_flight_bins(&flights[i], stats[i], &flights[j], stats[j], bin_m)
            };
            (key, bins)
        })
        .collect();

    let mut grouped: std::collections::BTreeMap<i64, Vec<Vec<BinAcc>>> = Default::default();
    for (key, bins) in partials {
        grouped.entry(key).or_default().push(bins);
    }
    Ok(grouped
        .into_iter()
        .map(|(key, pair_bins)| {
            // Pair streams at the same offset merge before averaging, so
            // every pair weighs by its pair count.
            let mut merged = Vec::new();
            for bins in &pair_bins {
                merge_bins(&mut merged, bins);
            }
            (key as f64 / 1000.0, curve_from_height_bins(&[merged], bin_m))
        })
        .collect())
}
