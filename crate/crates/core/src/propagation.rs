//! Forward model of received power: free-space and two-ray ground-reflection
//! path loss with antenna gains, plus shadowing extraction.
//!
//! The two-ray model sums the line-of-sight ray and one ground-reflected ray
//! coherently; the reflected ray is weighted by the vertical-polarization
//! reflection coefficient and delayed by the image-path excess length.
//! Results carry both the linear power ratio (received/transmit, < 1) and
//! its positive-dB loss form; received power in dBm is transmit power minus
//! the dB loss, plus shadowing.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::{combined_gain, AntennaError, AntennaPattern};
use crate::geo::{bearing_deg, link_geometry, GeoError, GeoLocation};
use crate::measurement::Measurement;

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Default relative ground permittivity (medium-dry ground).
pub const DEFAULT_EPSILON0: f64 = 15.0;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("reflection angle {0} rad outside (0, pi/2]")]
    InvalidAngle(f64),
    #[error("invalid propagation config: {0}")]
    InvalidConfig(String),
    #[error("uav altitude {0} m must be > 0")]
    InvalidUavAltitude(f64),
    #[error(transparent)]
    Geometry(#[from] GeoError),
    #[error(transparent)]
    Antenna(#[from] AntennaError),
}

/// Which deterministic path-loss model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationModel {
    TwoRay,
    FreeSpace,
}

/// Carrier, transmit power, ground permittivity, and the two antenna
/// patterns of a link.
#[derive(Debug, Clone)]
pub struct PropagationConfig {
    pub carrier_hz: f64,
    /// Derived: `SPEED_OF_LIGHT_M_S / carrier_hz`.
    pub wavelength_m: f64,
    pub tx_power_dbm: f64,
    /// Relative ground permittivity, > 1.
    pub epsilon0: f64,
    pub bs_pattern: AntennaPattern,
    pub uav_pattern: AntennaPattern,
    /// Tower height above the ground plane; the pipeline uses it as the BS
    /// location altitude.
    pub bs_height_m: f64,
}

impl PropagationConfig {
    pub fn new(
        carrier_hz: f64,
        tx_power_dbm: f64,
        epsilon0: f64,
        bs_pattern: AntennaPattern,
        uav_pattern: AntennaPattern,
        bs_height_m: f64,
    ) -> Result<Self, PropagationError> {
        if !(carrier_hz > 0.0) {
            return Err(PropagationError::InvalidConfig(format!(
                "carrier {carrier_hz} Hz must be > 0"
            )));
        }
        if !(epsilon0 > 1.0) {
            return Err(PropagationError::InvalidConfig(format!(
                "relative permittivity {epsilon0} must be > 1"
            )));
        }
        if !tx_power_dbm.is_finite() || !bs_height_m.is_finite() {
            return Err(PropagationError::InvalidConfig(
                "tx power and bs height must be finite".into(),
            ));
        }
        Ok(Self {
            carrier_hz,
            wavelength_m: SPEED_OF_LIGHT_M_S / carrier_hz,
            tx_power_dbm,
            epsilon0,
            bs_pattern,
            uav_pattern,
            bs_height_m,
        })
    }
}

/// Path loss as a linear power ratio and as positive dB loss.
///
/// The linear form is received/transmit power (a ratio < 1 for any real
/// link); `loss_db = -10 log10(gain_linear)` is the positive-dB convention
/// used in link budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossResult {
    pub gain_linear: f64,
    pub loss_db: f64,
}

impl PathLossResult {
    fn from_gain(gain_linear: f64) -> Self {
        Self {
            gain_linear,
            loss_db: -10.0 * gain_linear.log10(),
        }
    }
}

/// Ground reflection coefficient for a vertically polarized signal:
/// `(eps sin(t) - sqrt(eps - cos^2(t))) / (eps sin(t) + sqrt(eps - cos^2(t)))`.
///
/// Always in [-1, 1] for `theta_r` in (0, pi/2] and `epsilon0 > 1`; tends to
/// -1 at grazing incidence.
pub fn reflection_coefficient(theta_r: f64, epsilon0: f64) -> Result<f64, PropagationError> {
    if !theta_r.is_finite() || theta_r <= 0.0 || theta_r > std::f64::consts::FRAC_PI_2 {
        return Err(PropagationError::InvalidAngle(theta_r));
    }
    if !(epsilon0 > 1.0) {
        return Err(PropagationError::InvalidConfig(format!(
            "relative permittivity {epsilon0} must be > 1"
        )));
    }
    let sin_t = theta_r.sin();
    let root = (epsilon0 - theta_r.cos().powi(2)).sqrt();
    Ok((epsilon0 * sin_t - root) / (epsilon0 * sin_t + root))
}

fn check_uav(uav: &GeoLocation) -> Result<(), PropagationError> {
    if uav.alt_m <= 0.0 {
        return Err(PropagationError::InvalidUavAltitude(uav.alt_m));
    }
    Ok(())
}

/// Two-ray ground-reflection path loss with the reflection coefficient
/// supplied by the caller.
///
/// Useful for masking the ground ray (`gamma = 0` reduces exactly to the
/// free-space model) or for experimenting with ground properties. LoS gains
/// are sampled at the elevation angle; ground-ray gains at the downward
/// reflection angle (elevation `-theta_r`), both at the BS-to-UAV bearing.
pub fn pathloss_two_ray_with_gamma(
    cfg: &PropagationConfig,
    bs: &GeoLocation,
    uav: &GeoLocation,
    gamma: f64,
) -> Result<PathLossResult, PropagationError> {
    check_uav(uav)?;
    let geom = link_geometry(bs, uav)?;
    let azimuth = bearing_deg(bs, uav);

    let g_los = combined_gain(
        &cfg.bs_pattern,
        &cfg.uav_pattern,
        azimuth,
        geom.theta_l.to_degrees(),
    )?;
    let g_ground = combined_gain(
        &cfg.bs_pattern,
        &cfg.uav_pattern,
        azimuth,
        -geom.theta_r.to_degrees(),
    )?;

    let delta_tau = geom.phase_difference(cfg.wavelength_m);
    let los = Complex64::new(g_los.sqrt() / geom.d_3d, 0.0);
    let ground = Complex64::new(0.0, -delta_tau).exp()
        * (gamma * g_ground.sqrt() / geom.reflected_path_len);
    let scale = cfg.wavelength_m / (4.0 * std::f64::consts::PI);
    Ok(PathLossResult::from_gain(scale * scale * (los + ground).norm_sqr()))
}

/// Two-ray ground-reflection path loss, with the reflection coefficient
/// computed from the link's reflection angle and the configured ground
/// permittivity.
pub fn pathloss_two_ray(
    cfg: &PropagationConfig,
    bs: &GeoLocation,
    uav: &GeoLocation,
) -> Result<PathLossResult, PropagationError> {
    check_uav(uav)?;
    let geom = link_geometry(bs, uav)?;
    let gamma = reflection_coefficient(geom.theta_r, cfg.epsilon0)?;
    pathloss_two_ray_with_gamma(cfg, bs, uav, gamma)
}

/// Free-space path loss `(lambda / 4 pi)^2 G_bs G_uav / d_3d^2`.
pub fn pathloss_free_space(
    cfg: &PropagationConfig,
    bs: &GeoLocation,
    uav: &GeoLocation,
) -> Result<PathLossResult, PropagationError> {
    check_uav(uav)?;
    let geom = link_geometry(bs, uav)?;
    let azimuth = bearing_deg(bs, uav);
    let g_los = combined_gain(
        &cfg.bs_pattern,
        &cfg.uav_pattern,
        azimuth,
        geom.theta_l.to_degrees(),
    )?;
    let scale = cfg.wavelength_m / (4.0 * std::f64::consts::PI);
    Ok(PathLossResult::from_gain(scale * scale * g_los / (geom.d_3d * geom.d_3d)))
}

pub fn pathloss(
    cfg: &PropagationConfig,
    bs: &GeoLocation,
    uav: &GeoLocation,
    model: PropagationModel,
) -> Result<PathLossResult, PropagationError> {
    match model {
        PropagationModel::TwoRay => pathloss_two_ray(cfg, bs, uav),
        PropagationModel::FreeSpace => pathloss_free_space(cfg, bs, uav),
    }
}

/// Deterministic received power (zero shadowing): transmit power minus the
/// selected model's dB loss.
pub fn predict_rsrp(
    cfg: &PropagationConfig,
    bs: &GeoLocation,
    uav: &GeoLocation,
    model: PropagationModel,
) -> Result<f64, PropagationError> {
    Ok(cfg.tx_power_dbm - pathloss(cfg, bs, uav, model)?.loss_db)
}

/// Per-sample shadowing `w_i = rsrp_i - (P_tx - loss_db_i)`.
///
/// Length and order are preserved; samples whose geometry or gain lookup
/// fails carry the error instead of being dropped.
pub fn extract_shadowing(
    cfg: &PropagationConfig,
    bs: &GeoLocation,
    samples: &[Measurement],
    model: PropagationModel,
) -> Vec<Result<f64, PropagationError>> {
    samples
        .iter()
        .map(|s| predict_rsrp(cfg, bs, &s.loc, model).map(|pred| s.rsrp_dbm - pred))
        .collect()
}
