//! Pipeline configuration document (TOML).
//!
//! Defaults mirror the measurement campaign setup (3.51 GHz carrier, 10 dBm
//! transmit power, 10 m tower, 98 dB receiver offset) and the reference
//! correlation-model parameters, so a replication run only needs file paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::antenna::{load_pattern_csv, AntennaPattern};
use crate::kriging::GridSpec;
use crate::measurement::{AltitudeDrift, CalibrationSpec};
use crate::pipeline::PipelineError;
use crate::propagation::{PropagationConfig, PropagationModel};
use crate::statistics::CorrelationModel3D;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub site: SiteSection,
    #[serde(default)]
    pub propagation: PropagationSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub shadowing: ShadowingSection,
    #[serde(default)]
    pub correlation: CorrelationSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub kriging: KrigingSection,
    #[serde(default)]
    pub xval: XvalSection,
    #[serde(default)]
    pub map: MapSection,
    #[serde(default)]
    pub synth: Option<SynthSection>,
    /// Directory the config file lives in; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSection {
    pub bs_lat_deg: f64,
    pub bs_lon_deg: f64,
    #[serde(default = "default_bs_height")]
    pub bs_height_m: f64,
}

fn default_bs_height() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationSection {
    pub carrier_hz: f64,
    pub tx_power_dbm: f64,
    pub epsilon0: f64,
    pub model: PropagationModel,
    /// `dipole`, `isotropic`, `isotropic:<linear gain>`, or `file:<csv>`.
    pub bs_pattern: String,
    pub uav_pattern: String,
}

impl Default for PropagationSection {
    fn default() -> Self {
        Self {
            carrier_hz: 3.51e9,
            tx_power_dbm: 10.0,
            epsilon0: 15.0,
            model: PropagationModel::TwoRay,
            bs_pattern: "dipole".into(),
            uav_pattern: "dipole".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub power_offset_db: f64,
    pub altitude_drift: AltitudeDrift,
    pub trim_takeoff_landing: bool,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            power_offset_db: 98.0,
            altitude_drift: AltitudeDrift::Linear,
            trim_takeoff_landing: true,
        }
    }
}

impl CalibrationSection {
    pub fn to_spec(&self) -> CalibrationSpec {
        CalibrationSpec {
            power_offset_db: self.power_offset_db,
            altitude_drift: self.altitude_drift,
            trim_takeoff_landing: self.trim_takeoff_landing,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub flights: Vec<FlightEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightEntry {
    pub path: String,
    pub height_m: f64,
    #[serde(default)]
    pub id: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowingSection {
    pub histogram_bins: usize,
}

impl Default for ShadowingSection {
    fn default() -> Self {
        Self { histogram_bins: 100 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSection {
    pub bin_m: f64,
    pub vertical_dh_max_m: f64,
    /// Mixture weight held fixed when fitting the 3D model.
    pub mixture_a: f64,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        Self { bin_m: 2.0, vertical_dh_max_m: 3.0, mixture_a: 0.3 }
    }
}

/// Correlation-model parameters used by the kriging stages whenever the
/// correlate stage has not produced fitted ones in the same run.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    pub d_cor_m: f64,
    pub sigma_w_db: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { a: 0.3, b1: 0.02815, b2: 0.2474, d_cor_m: 11.24, sigma_w_db: 6.9 }
    }
}

impl ModelSection {
    pub fn to_model(&self) -> CorrelationModel3D {
        CorrelationModel3D {
            a: self.a,
            b1: self.b1,
            b2: self.b2,
            d_cor_m: self.d_cor_m,
            sigma_w2: self.sigma_w_db * self.sigma_w_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KrigingMode {
    /// Interpolate raw received power directly.
    Raw,
    /// Interpolate the shadowing residual and add the deterministic
    /// prediction back.
    Residual,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrigingSection {
    pub r0_m: f64,
    pub m_max: usize,
    pub nugget_db2: f64,
    pub mode: KrigingMode,
    /// CSV of prediction targets (`lat_deg,lon_deg,alt_m`) for the krige
    /// stage.
    pub targets_path: Option<String>,
}

impl Default for KrigingSection {
    fn default() -> Self {
        Self {
            r0_m: 100.0,
            m_max: 50,
            nugget_db2: 0.0,
            mode: KrigingMode::Raw,
            targets_path: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XvalSection {
    pub train_m: usize,
    pub validate_n0: usize,
    pub iterations: u32,
    /// Flight heights forming the prediction pool; all flights when unset.
    pub pool_heights: Option<Vec<f64>>,
    /// Height of the validation flight; the lowest height when unset.
    pub target_height: Option<f64>,
}

impl Default for XvalSection {
    fn default() -> Self {
        Self {
            train_m: 100,
            validate_n0: 50,
            iterations: 1000,
            pool_heights: None,
            target_height: None,
        }
    }
}

/// Grid extents for the map stage; anything left unset derives from the
/// pool bounding box and the flight heights.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    pub lat_min_deg: Option<f64>,
    pub lat_max_deg: Option<f64>,
    pub lat_step_deg: Option<f64>,
    pub lon_min_deg: Option<f64>,
    pub lon_max_deg: Option<f64>,
    pub lon_step_deg: Option<f64>,
    pub alt_min_m: Option<f64>,
    pub alt_max_m: Option<f64>,
    pub alt_step_m: Option<f64>,
}

impl MapSection {
    /// Resolves the grid, filling unset extents from the pool bounds (lat/lon
    /// split into 24 steps) and unset altitude levels from the flight heights
    /// (20 m apart).
    pub fn resolve(
        &self,
        pool_bounds: Option<([f64; 2], [f64; 2], [f64; 2])>,
    ) -> Result<GridSpec, PipelineError> {
        let needs_bounds = [
            self.lat_min_deg,
            self.lat_max_deg,
            self.lon_min_deg,
            self.lon_max_deg,
            self.alt_min_m,
            self.alt_max_m,
        ]
        .iter()
        .any(Option::is_none);
        let bounds = if needs_bounds {
            Some(pool_bounds.ok_or_else(|| {
                PipelineError::Config(
                    "map grid extents unset and no pool samples to derive them".into(),
                )
            })?)
        } else {
            None
        };
        let b = |f: fn(&([f64; 2], [f64; 2], [f64; 2])) -> f64| f(bounds.as_ref().unwrap());
        let lat_min = self.lat_min_deg.unwrap_or_else(|| b(|x| x.0[0]));
        let lat_max = self.lat_max_deg.unwrap_or_else(|| b(|x| x.0[1]));
        let lon_min = self.lon_min_deg.unwrap_or_else(|| b(|x| x.1[0]));
        let lon_max = self.lon_max_deg.unwrap_or_else(|| b(|x| x.1[1]));
        let alt_min = self.alt_min_m.unwrap_or_else(|| b(|x| x.2[0]));
        let alt_max = self.alt_max_m.unwrap_or_else(|| b(|x| x.2[1]));
        Ok(GridSpec {
            lat_min_deg: lat_min,
            lat_max_deg: lat_max,
            lat_step_deg: self
                .lat_step_deg
                .unwrap_or_else(|| ((lat_max - lat_min) / 24.0).max(1e-9)),
            lon_min_deg: lon_min,
            lon_max_deg: lon_max,
            lon_step_deg: self
                .lon_step_deg
                .unwrap_or_else(|| ((lon_max - lon_min) / 24.0).max(1e-9)),
            alt_min_m: alt_min,
            alt_max_m: alt_max,
            alt_step_m: self.alt_step_m.unwrap_or(20.0),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
    #[serde(default = "default_box_m")]
    pub width_m: f64,
    #[serde(default = "default_box_m")]
    pub depth_m: f64,
    #[serde(default = "default_leg_spacing")]
    pub leg_spacing_m: f64,
    #[serde(default = "default_sample_spacing")]
    pub sample_spacing_m: f64,
    #[serde(default = "default_heights")]
    pub heights_m: Vec<f64>,
    #[serde(default = "default_sample_interval")]
    pub sample_interval_s: f64,
    #[serde(default)]
    pub mean_offsets: Vec<MeanOffset>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanOffset {
    pub height_m: f64,
    pub offset_db: f64,
}

fn default_box_m() -> f64 {
    160.0
}

fn default_leg_spacing() -> f64 {
    40.0
}

fn default_sample_spacing() -> f64 {
    2.0
}

fn default_heights() -> Vec<f64> {
    vec![30.0, 50.0, 70.0, 90.0, 110.0]
}

fn default_sample_interval() -> f64 {
    0.4
}

impl Config {
    /// Resolves a possibly relative path against the config directory.
    pub fn resolve_path(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Parses a pattern spec string, loading measured grids from disk.
    pub fn parse_pattern(&self, spec: &str) -> Result<AntennaPattern, PipelineError> {
        if spec == "dipole" {
            return Ok(AntennaPattern::Dipole);
        }
        if spec == "isotropic" {
            return Ok(AntennaPattern::Isotropic(1.0));
        }
        if let Some(gain) = spec.strip_prefix("isotropic:") {
            let gain: f64 = gain.parse().map_err(|e| {
                PipelineError::Config(format!("bad isotropic gain in pattern '{spec}': {e}"))
            })?;
            return Ok(AntennaPattern::Isotropic(gain));
        }
        if let Some(path) = spec.strip_prefix("file:") {
            let resolved = self.resolve_path(path);
            return load_pattern_csv(&resolved)
                .map(AntennaPattern::Measured)
                .map_err(|e| PipelineError::Config(format!("antenna pattern: {e}")));
        }
        Err(PipelineError::Config(format!(
            "unknown antenna pattern '{spec}' (expected dipole, isotropic[:gain], or file:<csv>)"
        )))
    }

    pub fn propagation_config(&self) -> Result<PropagationConfig, PipelineError> {
        PropagationConfig::new(
            self.propagation.carrier_hz,
            self.propagation.tx_power_dbm,
            self.propagation.epsilon0,
            self.parse_pattern(&self.propagation.bs_pattern)?,
            self.parse_pattern(&self.propagation.uav_pattern)?,
            self.site.bs_height_m,
        )
        .map_err(|e| PipelineError::Config(e.to_string()))
    }
}
