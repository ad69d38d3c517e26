//! Semi-variogram evaluation, ordinary-Kriging system assembly and solve,
//! cross-validated RMSE, and radio-map grid generation.
//!
//! The solver assembles the (M+1)x(M+1) linear system whose unknowns are the
//! M weights plus the Lagrange multiplier enforcing the unit weight sum, and
//! solves it with a partially pivoted LU factorization. An optional nugget
//! (a small diagonal addition) regularizes the system when near-duplicate
//! neighbor locations occur; it defaults to 0, which keeps interpolation
//! exact at measured locations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{distance_3d, GeoLocation};
use crate::statistics::{CorrelationModel3D, ShadowingStats};

#[derive(Debug, Error)]
pub enum KrigingError {
    #[error("no neighbors within {r0_m} m of the target")]
    NoNeighbors { r0_m: f64 },
    #[error("kriging system is singular (near-duplicate neighbor locations); consider a nugget")]
    SingularSystem,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fallback prediction failed at lat {lat_deg}, lon {lon_deg}, alt {alt_m}")]
    FallbackFailed { lat_deg: f64, lon_deg: f64, alt_m: f64 },
}

/// Semi-variogram induced by the 3D correlation model:
/// `gamma(l_i, l_j) = sigma_w^2 (1 - R(d_v, d_h))`.
#[derive(Debug, Clone, Copy)]
pub struct Variogram {
    pub model: CorrelationModel3D,
    /// Diagonal regularization added to the kriging system, dB^2.
    pub nugget_db2: f64,
}

impl Variogram {
    pub fn new(model: CorrelationModel3D) -> Self {
        Self { model, nugget_db2: 0.0 }
    }

    pub fn with_nugget(model: CorrelationModel3D, nugget_db2: f64) -> Self {
        Self { model, nugget_db2 }
    }

    /// Semi-variogram between two locations; 0 at coincident points and
    /// approaching the sill `sigma_w^2` at large separation.
    pub fn semivariogram(&self, a: &GeoLocation, b: &GeoLocation) -> f64 {
        let d_h = crate::geo::horizontal_distance(a, b);
        let d_v = (a.alt_m - b.alt_m).abs();
        self.model.sigma_w2 * (1.0 - self.model.eval(d_v, d_h))
    }

    pub fn sill_db2(&self) -> f64 {
        self.model.sigma_w2
    }
}

/// One pool sample available to the interpolator. Ids must be unique; they
/// break distance ties deterministically and key the cross-validation
/// exclusion step.
#[derive(Debug, Clone, Copy)]
pub struct SamplePoint {
    pub id: u64,
    pub loc: GeoLocation,
    pub value_dbm: f64,
}

/// Solved weights and prediction for one target.
#[derive(Debug, Clone)]
pub struct KrigingSolution {
    pub weights: Vec<f64>,
    pub lagrange: f64,
    pub predicted_dbm: f64,
    pub neighbor_ids: Vec<u64>,
}

/// Pool samples within `r0_m` (3D distance) of the target, nearest first;
/// at most `m_max` are kept. Ties break by (distance, id).
pub fn select_neighbors<'a>(
    target: &GeoLocation,
    pool: &'a [SamplePoint],
    r0_m: f64,
    m_max: usize,
) -> Result<Vec<&'a SamplePoint>, KrigingError> {
    let mut within: Vec<(f64, &SamplePoint)> = pool
        .iter()
        .filter_map(|s| {
            let d = distance_3d(target, &s.loc);
            (d <= r0_m).then_some((d, s))
        })
        .collect();
    if within.is_empty() {
        return Err(KrigingError::NoNeighbors { r0_m });
    }
    within.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    within.truncate(m_max.max(1));
    Ok(within.into_iter().map(|(_, s)| s).collect())
}

/// Assembles and solves the ordinary-Kriging system for one target.
///
/// The matrix rows are the pairwise semi-variograms bordered by the
/// unit-sum constraint; the right-hand side holds the target-to-neighbor
/// semi-variograms and 1. The prediction is the weighted sum of neighbor
/// values, with weights summing to 1.
pub fn solve_kriging(
    v: &Variogram,
    target: &GeoLocation,
    neighbors: &[&SamplePoint],
) -> Result<KrigingSolution, KrigingError> {
    let m = neighbors.len();
    if m == 0 {
        return Err(KrigingError::NoNeighbors { r0_m: 0.0 });
    }
    let mut mat = DMatrix::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in (i + 1)..m {
            let g = v.semivariogram(&neighbors[i].loc, &neighbors[j].loc);
            mat[(i, j)] = g;
            mat[(j, i)] = g;
        }
        mat[(i, i)] = v.nugget_db2;
        mat[(i, m)] = 1.0;
        mat[(m, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    for i in 0..m {
        rhs[i] = v.semivariogram(target, &neighbors[i].loc);
    }
    rhs[m] = 1.0;

    let solution = mat.lu().solve(&rhs).ok_or(KrigingError::SingularSystem)?;
    if solution.iter().any(|x| !x.is_finite()) {
        return Err(KrigingError::SingularSystem);
    }
    let weights: Vec<f64> = solution.iter().take(m).copied().collect();
    let predicted_dbm = weights
        .iter()
        .zip(neighbors)
        .map(|(w, s)| w * s.value_dbm)
        .sum();
    Ok(KrigingSolution {
        weights,
        lagrange: solution[m],
        predicted_dbm,
        neighbor_ids: neighbors.iter().map(|s| s.id).collect(),
    })
}

/// Cross-validation parameters: `train_m` pool samples predict
/// `validate_n0` held-out targets per iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct XvalParams {
    pub train_m: usize,
    pub validate_n0: usize,
    pub r0_m: f64,
    pub m_max: usize,
    pub iterations: u32,
    pub seed: u64,
}

/// Median and quartiles of the per-iteration RMSE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseSummary {
    pub median_db: f64,
    pub q25_db: f64,
    pub q75_db: f64,
    pub iterations: u32,
    pub train_m: usize,
    pub validate_n0: usize,
    pub r0_m: f64,
    /// Validation targets skipped because no pool sample fell inside r0.
    pub skipped_no_neighbors: u64,
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Cross-validated RMSE of kriging predictions.
///
/// Each iteration draws `train_m` pool samples and `validate_n0` targets
/// (targets sharing an id with a drawn pool sample are excluded first, so a
/// dataset can validate against itself), predicts every target from the
/// drawn samples, and records the RMSE. The summary reports the median and
/// quartiles across iterations. Targets with no neighbor inside `r0_m` are
/// skipped and counted.
pub fn cross_validate(
    v: &Variogram,
    pool: &[SamplePoint],
    targets: &[SamplePoint],
    params: &XvalParams,
) -> Result<RmseSummary, KrigingError> {
    if params.iterations == 0 {
        return Err(KrigingError::InsufficientData("iterations must be >= 1".into()));
    }
    if pool.len() < params.train_m {
        return Err(KrigingError::InsufficientData(format!(
            "pool has {} samples, need train_m = {}",
            pool.len(),
            params.train_m
        )));
    }

    let per_iter: Vec<Result<(f64, u64), KrigingError>> = (0..params.iterations)
        .into_par_iter()
        .map(|iter| {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(
                params.seed ^ (iter as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let drawn = rand::seq::index::sample(&mut rng, pool.len(), params.train_m);
            let train: Vec<SamplePoint> = drawn.iter().map(|i| pool[i]).collect();
            let drawn_ids: std::collections::HashSet<u64> =
                train.iter().map(|s| s.id).collect();
            let candidates: Vec<&SamplePoint> =
                targets.iter().filter(|t| !drawn_ids.contains(&t.id)).collect();
            if candidates.len() < params.validate_n0 {
                return Err(KrigingError::InsufficientData(format!(
                    "{} validation candidates after exclusion, need {}",
                    candidates.len(),
                    params.validate_n0
                )));
            }
            let picked = rand::seq::index::sample(&mut rng, candidates.len(), params.validate_n0);

            let mut sq_sum = 0.0;
            let mut predicted = 0u64;
            let mut skipped = 0u64;
            for k in picked.iter() {
                let target = candidates[k];
                match select_neighbors(&target.loc, &train, params.r0_m, params.m_max) {
                    Ok(neighbors) => {
                        let sol = solve_kriging(v, &target.loc, &neighbors)?;
                        let err = sol.predicted_dbm - target.value_dbm;
                        sq_sum += err * err;
                        predicted += 1;
                    }
                    Err(KrigingError::NoNeighbors { .. }) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if predicted == 0 {
                return Err(KrigingError::InsufficientData(
                    "no validation target had neighbors inside r0".into(),
                ));
            }
            Ok(((sq_sum / predicted as f64).sqrt(), skipped))
        })
        .collect();

    let mut rmse = Vec::with_capacity(per_iter.len());
    let mut skipped_total = 0u64;
    for r in per_iter {
        let (value, skipped) = r?;
        rmse.push(value);
        skipped_total += skipped;
    }
    rmse.sort_by(|a, b| a.total_cmp(b));
    Ok(RmseSummary {
        median_db: quantile(&rmse, 0.5),
        q25_db: quantile(&rmse, 0.25),
        q75_db: quantile(&rmse, 0.75),
        iterations: params.iterations,
        train_m: params.train_m,
        validate_n0: params.validate_n0,
        r0_m: params.r0_m,
        skipped_no_neighbors: skipped_total,
    })
}

/// RMSE of the perfect-path-loss baseline: exactly the shadowing standard
/// deviation.
pub fn baseline_rmse(stats: &ShadowingStats) -> f64 {
    stats.std_db
}

/// Inclusive lat/lon/alt extents with per-axis steps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min_deg: f64,
    pub lat_max_deg: f64,
    pub lat_step_deg: f64,
    pub lon_min_deg: f64,
    pub lon_max_deg: f64,
    pub lon_step_deg: f64,
    pub alt_min_m: f64,
    pub alt_max_m: f64,
    pub alt_step_m: f64,
}

impl GridSpec {
    fn axis(min: f64, max: f64, step: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let n = ((max - min) / step + 1e-9).floor() as usize;
        for i in 0..=n {
            out.push(min + i as f64 * step);
        }
        out
    }

    pub fn nodes(&self) -> Result<Vec<GeoLocation>, KrigingError> {
        for (name, step) in [
            ("lat_step_deg", self.lat_step_deg),
            ("lon_step_deg", self.lon_step_deg),
            ("alt_step_m", self.alt_step_m),
        ] {
            if !(step > 0.0) {
                return Err(KrigingError::InsufficientData(format!("{name} must be > 0")));
            }
        }
        let mut nodes = Vec::new();
        for alt in Self::axis(self.alt_min_m, self.alt_max_m, self.alt_step_m) {
            for lat in Self::axis(self.lat_min_deg, self.lat_max_deg, self.lat_step_deg) {
                for lon in Self::axis(self.lon_min_deg, self.lon_max_deg, self.lon_step_deg) {
                    nodes.push(
                        GeoLocation::new(lat, lon, alt)
                            .map_err(|e| KrigingError::InsufficientData(e.to_string()))?,
                    );
                }
            }
        }
        Ok(nodes)
    }
}

/// One interpolated grid node.
#[derive(Debug, Clone, Copy)]
pub struct MapCell {
    pub loc: GeoLocation,
    pub predicted_dbm: f64,
    pub neighbor_count: usize,
    /// True when no neighbor fell inside r0 and the deterministic path-loss
    /// fallback supplied the value.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct RadioMap {
    pub cells: Vec<MapCell>,
}

/// Interpolates the full grid: per node, neighbor selection plus a kriging
/// solve; nodes without neighbors inside `r0_m` take the fallback prediction
/// and are flagged.
pub fn generate_radio_map<F>(
    v: &Variogram,
    pool: &[SamplePoint],
    grid: &GridSpec,
    m_max: usize,
    r0_m: f64,
    fallback: F,
) -> Result<RadioMap, KrigingError>
where
    F: Fn(&GeoLocation) -> Option<f64> + Sync,
{
    if pool.is_empty() {
        return Err(KrigingError::InsufficientData("empty pool".into()));
    }
    let nodes = grid.nodes()?;
    let cells: Vec<Result<MapCell, KrigingError>> = nodes
        .par_iter()
        .map(|node| match select_neighbors(node, pool, r0_m, m_max) {
            Ok(neighbors) => {
                let sol = solve_kriging(v, node, &neighbors)?;
                Ok(MapCell {
                    loc: *node,
                    predicted_dbm: sol.predicted_dbm,
                    neighbor_count: neighbors.len(),
                    fallback: false,
                })
            }
            Err(KrigingError::NoNeighbors { .. }) => {
                let value = fallback(node).ok_or(KrigingError::FallbackFailed {
                    lat_deg: node.lat_deg,
                    lon_deg: node.lon_deg,
                    alt_m: node.alt_m,
                })?;
                Ok(MapCell {
                    loc: *node,
                    predicted_dbm: value,
                    neighbor_count: 0,
                    fallback: true,
                })
            }
            Err(e) => Err(e),
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(RadioMap { cells })
}
