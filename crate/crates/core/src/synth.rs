//! Ground-truth generation: zigzag UAV trajectories, spatially correlated
//! shadowing fields drawn from the 3D correlation model, and full synthetic
//! RSRP datasets with the true path loss and shadowing retained per sample.
//!
//! Fields are Gaussian: the covariance `sigma_w^2 R(d_v, d_h)` over all
//! sample locations is factorized once (Cholesky, with escalating diagonal
//! jitter for near-singular cases) and each seed draws one standard-normal
//! vector through the factor. The same factorization can be reused across
//! seeds via [`ShadowingFieldSampler`].

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{horizontal_distance, GeoLocation, EARTH_RADIUS_M};
use crate::measurement::{Flight, Measurement, MeasurementSet};
use crate::propagation::{pathloss, PropagationConfig, PropagationError, PropagationModel};
use crate::statistics::CorrelationModel3D;

/// Initial covariance jitter, as a fraction of sigma_w^2; doubled until the
/// factorization succeeds or [`MAX_JITTER_FRACTION`] is exceeded.
const INITIAL_JITTER_FRACTION: f64 = 1e-10;
const MAX_JITTER_FRACTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error("covariance factorization failed even with jitter {max_jitter_db2} dB^2")]
    FactorizationFailed { max_jitter_db2: f64 },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

/// Zigzag trajectory parameters: north-south legs of length `depth_m`,
/// stepped east every `leg_spacing_m` across `width_m`, flown identically at
/// every height in `heights_m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
    /// East-west extent covered by the legs, meters.
    pub width_m: f64,
    /// South-north leg length, meters.
    pub depth_m: f64,
    pub leg_spacing_m: f64,
    pub sample_spacing_m: f64,
    pub heights_m: Vec<f64>,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.sample_spacing_m > 0.0) {
            return Err(SynthError::InvalidSpec("sample spacing must be > 0".into()));
        }
        if !(self.leg_spacing_m > 0.0) {
            return Err(SynthError::InvalidSpec("leg spacing must be > 0".into()));
        }
        if !(self.width_m >= 0.0) || !(self.depth_m > 0.0) {
            return Err(SynthError::InvalidSpec("box extents must be positive".into()));
        }
        if self.heights_m.is_empty() {
            return Err(SynthError::InvalidSpec("heights list is empty".into()));
        }
        if self.heights_m.iter().any(|h| !(*h > 0.0)) {
            return Err(SynthError::InvalidSpec("all heights must be > 0".into()));
        }
        Ok(())
    }

    /// Number of north-south legs across the box width.
    pub fn leg_count(&self) -> usize {
        (self.width_m / self.leg_spacing_m).floor() as usize + 1
    }
}

/// One generated flight path.
#[derive(Debug, Clone)]
pub struct FlightPath {
    pub height_m: f64,
    pub locations: Vec<GeoLocation>,
}

/// Local east/north meters around the trajectory origin to lat/lon degrees.
fn local_to_geo(spec: &TrajectorySpec, east_m: f64, north_m: f64, alt_m: f64) -> GeoLocation {
    let lat = spec.origin_lat_deg + north_m / EARTH_RADIUS_M * (180.0 / std::f64::consts::PI);
    let lon = spec.origin_lon_deg
        + east_m / (EARTH_RADIUS_M * spec.origin_lat_deg.to_radians().cos())
            * (180.0 / std::f64::consts::PI);
    GeoLocation { lat_deg: lat, lon_deg: lon, alt_m }
}

/// Generates the zigzag sample positions, identical in 2D for every height.
///
/// Samples are laid out at uniform arc-length steps along the polyline, so
/// consecutive samples are exactly one sample spacing apart along the path
/// (and in the plane, whenever leg lengths are multiples of the spacing).
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<FlightPath>, SynthError> {
    spec.validate()?;
    // Zigzag polyline in local meters.
    let mut vertices: Vec<(f64, f64)> = Vec::new();
    let legs = spec.leg_count();
    for leg in 0..legs {
        let x = leg as f64 * spec.leg_spacing_m;
        if leg % 2 == 0 {
            vertices.push((x, 0.0));
            vertices.push((x, spec.depth_m));
        } else {
            vertices.push((x, spec.depth_m));
            vertices.push((x, 0.0));
        }
    }

    let mut xy: Vec<(f64, f64)> = Vec::new();
    let step = spec.sample_spacing_m;
    let mut carried = 0.0; // arc length into the next sample at segment start
    for pair in vertices.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        let seg_len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        if seg_len == 0.0 {
            continue;
        }
        let (ux, uy) = ((x1 - x0) / seg_len, (y1 - y0) / seg_len);
        let mut s = if xy.is_empty() { 0.0 } else { step - carried };
        while s <= seg_len + 1e-9 {
            xy.push((x0 + ux * s, y0 + uy * s));
            s += step;
        }
        carried = (seg_len - (s - step)).max(0.0);
    }
    if xy.is_empty() {
        return Err(SynthError::InvalidSpec("trajectory produced no samples".into()));
    }

    Ok(spec
        .heights_m
        .iter()
        .map(|&h| FlightPath {
            height_m: h,
            locations: xy
                .iter()
                .map(|&(x, y)| local_to_geo(spec, x, y, h))
                .collect(),
        })
        .collect())
}

/// Cholesky factor of the field covariance over a fixed set of locations;
/// reusable across seeds.
pub struct ShadowingFieldSampler {
    factor: DMatrix<f64>,
    /// Diagonal jitter that was required, dB^2 (0 when the plain covariance
    /// factorized).
    pub jitter_db2: f64,
}

impl ShadowingFieldSampler {
    pub fn new(
        locations: &[GeoLocation],
        model: &CorrelationModel3D,
    ) -> Result<Self, SynthError> {
        let n = locations.len();
        if model.sigma_w2 <= 0.0 {
            // Degenerate field: every draw is identically zero.
            return Ok(Self { factor: DMatrix::zeros(n, n), jitter_db2: 0.0 });
        }
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            cov[(i, i)] = model.sigma_w2;
            for j in (i + 1)..n {
                let d_h = horizontal_distance(&locations[i], &locations[j]);
                let d_v = (locations[i].alt_m - locations[j].alt_m).abs();
                let c = model.sigma_w2 * model.eval(d_v, d_h);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }

        if let Some(chol) = cov.clone().cholesky() {
            return Ok(Self { factor: chol.unpack(), jitter_db2: 0.0 });
        }
        let mut jitter = INITIAL_JITTER_FRACTION * model.sigma_w2;
        let max_jitter = MAX_JITTER_FRACTION * model.sigma_w2;
        while jitter <= max_jitter {
            let mut jittered = cov.clone();
            for i in 0..n {
                jittered[(i, i)] += jitter;
            }
            if let Some(chol) = jittered.cholesky() {
                return Ok(Self { factor: chol.unpack(), jitter_db2: jitter });
            }
            jitter *= 2.0;
        }
        Err(SynthError::FactorizationFailed { max_jitter_db2: max_jitter })
    }

    /// One zero-mean field draw; deterministic for a given seed.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let n = self.factor.nrows();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = nalgebra::DVector::from_vec(z);
        (&self.factor * z).iter().copied().collect()
    }
}

/// One correlated zero-mean Gaussian field draw over the given locations.
pub fn sample_shadowing_field(
    locations: &[GeoLocation],
    model: &CorrelationModel3D,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    Ok(ShadowingFieldSampler::new(locations, model)?.sample(seed))
}

/// Everything needed to synthesize a dataset: propagation setup, field
/// model, trajectory, and the seed making the output reproducible.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub cfg: PropagationConfig,
    /// BS position; altitude is the tower height above the ground plane.
    pub bs: GeoLocation,
    pub model: CorrelationModel3D,
    pub trajectory: TrajectorySpec,
    pub pathloss_model: PropagationModel,
    /// Optional per-height shadowing mean offsets (height, offset dB);
    /// default empty keeps the zero-mean field.
    pub mean_offsets_db: Vec<(f64, f64)>,
    /// Seconds between consecutive samples in the emitted logs.
    pub sample_interval_s: f64,
    pub seed: u64,
}

/// One synthetic sample with its ground-truth decomposition.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSample {
    pub t_s: f64,
    pub loc: GeoLocation,
    pub rsrp_dbm: f64,
    pub true_pl_db: f64,
    pub true_w_db: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticFlight {
    pub height_m: f64,
    pub samples: Vec<SyntheticSample>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub flights: Vec<SyntheticFlight>,
    pub jitter_db2: f64,
}

impl SyntheticDataset {
    /// Drops the truth columns, yielding the same shape the harness loads
    /// from disk. Flights are marked calibrated (synthetic data needs no
    /// corrections).
    pub fn to_measurement_set(&self) -> MeasurementSet {
        MeasurementSet {
            flights: self
                .flights
                .iter()
                .map(|f| Flight {
                    id: format!("synth_h{:03}m", f.height_m.round() as i64),
                    height_label_m: f.height_m,
                    samples: f
                        .samples
                        .iter()
                        .map(|s| Measurement { t_s: s.t_s, loc: s.loc, rsrp_dbm: s.rsrp_dbm })
                        .collect(),
                    calibrated: true,
                })
                .collect(),
        }
    }
}

/// Generates the full dataset: `r = P_tx - PL + w` per sample, with the true
/// path loss and shadowing kept alongside for oracle comparisons.
pub fn synthesize_rsrp(scenario: &SyntheticScenario) -> Result<SyntheticDataset, SynthError> {
    let paths = generate_trajectory(&scenario.trajectory)?;
    let all_locations: Vec<GeoLocation> = paths
        .iter()
        .flat_map(|p| p.locations.iter().copied())
        .collect();
    let sampler = ShadowingFieldSampler::new(&all_locations, &scenario.model)?;
    let w = sampler.sample(scenario.seed);

    let mut flights = Vec::with_capacity(paths.len());
    let mut offset_idx = 0usize;
    for path in &paths {
        let mean_offset = scenario
            .mean_offsets_db
            .iter()
            .find(|(h, _)| *h == path.height_m)
            .map_or(0.0, |(_, o)| *o);
        let mut samples = Vec::with_capacity(path.locations.len());
        for (i, loc) in path.locations.iter().enumerate() {
            let pl = pathloss(&scenario.cfg, &scenario.bs, loc, scenario.pathloss_model)?;
            let w_i = w[offset_idx + i] + mean_offset;
            samples.push(SyntheticSample {
                t_s: i as f64 * scenario.sample_interval_s,
                loc: *loc,
                rsrp_dbm: scenario.cfg.tx_power_dbm - pl.loss_db + w_i,
                true_pl_db: pl.loss_db,
                true_w_db: w_i,
            });
        }
        offset_idx += path.locations.len();
        flights.push(SyntheticFlight { height_m: path.height_m, samples });
    }
    Ok(SyntheticDataset { flights, jitter_db2: sampler.jitter_db2 })
}
