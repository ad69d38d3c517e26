//! Flight-log ingestion and calibration.
//!
//! The canonical measurement CSV schema is
//! `t_s,lat_deg,lon_deg,alt_m,rsrp_dbm` (UTF-8, LF line endings, `.` decimal
//! separator, one flight per file). Lines starting with `#` are artifact
//! stamps and are skipped. Calibration applies, in order: the receiver power
//! offset, the linear altitude de-drift (so the final altitude matches the
//! initial one), and the take-off/landing trim.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoLocation};

/// Samples whose altitude differs from the flight's modal altitude by more
/// than this are treated as take-off/landing and trimmed.
pub const TRIM_ALTITUDE_TOLERANCE_M: f64 = 3.0;

pub const MEASUREMENT_HEADER: &str = "t_s,lat_deg,lon_deg,alt_m,rsrp_dbm";
pub const MEASUREMENT_TRUTH_HEADER: &str = "t_s,lat_deg,lon_deg,alt_m,rsrp_dbm,true_pl_db,true_w_db";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {msg}")]
    Schema { path: String, line: u64, msg: String },
    #[error("{path} line {line}: time not strictly increasing")]
    NonMonotonicTime { path: String, line: u64 },
    #[error("flight {0} is already calibrated")]
    AlreadyCalibrated(String),
    #[error("flight {0} has no samples after calibration")]
    EmptyFlight(String),
}

/// One calibrated RSRP sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Seconds since flight start.
    pub t_s: f64,
    pub loc: GeoLocation,
    pub rsrp_dbm: f64,
}

/// All samples of one flight at a nominal height.
#[derive(Debug, Clone)]
pub struct Flight {
    pub id: String,
    pub height_label_m: f64,
    pub samples: Vec<Measurement>,
    /// Set once a [`CalibrationSpec`] has been applied; a second application
    /// is refused.
    pub calibrated: bool,
}

/// Time-ordered calibrated samples from one or more flights.
#[derive(Debug, Clone, Default)]
pub struct MeasurementSet {
    pub flights: Vec<Flight>,
}

impl MeasurementSet {
    pub fn sample_count(&self) -> usize {
        self.flights.iter().map(|f| f.samples.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AltitudeDrift {
    None,
    Linear,
}

/// Post-measurement corrections (receiver power offset, GPS altitude drift,
/// take-off/landing trim).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub power_offset_db: f64,
    pub altitude_drift: AltitudeDrift,
    pub trim_takeoff_landing: bool,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            power_offset_db: 98.0,
            altitude_drift: AltitudeDrift::Linear,
            trim_takeoff_landing: true,
        }
    }
}

impl CalibrationSpec {
    /// No-op calibration, for data that is already corrected (e.g. synthetic
    /// datasets).
    pub fn none() -> Self {
        Self {
            power_offset_db: 0.0,
            altitude_drift: AltitudeDrift::None,
            trim_takeoff_landing: false,
        }
    }
}

/// Reads raw rows from a canonical measurement CSV, without calibration.
pub fn read_flight_csv(path: &Path) -> Result<Vec<Measurement>, DataError> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(&path_str, e))?;

    let headers = reader
        .headers()
        .map_err(|e| csv_error(&path_str, e))?
        .clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    let expected: Vec<&str> = MEASUREMENT_HEADER.split(',').collect();
    // The extended truth variant is accepted; extra columns are ignored.
    if got.len() < expected.len() || got[..expected.len()] != expected[..] {
        return Err(DataError::Schema {
            path: path_str,
            line: 1,
            msg: format!("header {got:?}, expected it to start with {expected:?}"),
        });
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&path_str, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64, DataError> {
            record
                .get(i)
                .ok_or_else(|| DataError::Schema {
                    path: path_str.clone(),
                    line,
                    msg: format!("missing {name}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| DataError::Schema {
                    path: path_str.clone(),
                    line,
                    msg: format!("bad {name}: {e}"),
                })
        };
        let t_s = field(0, "t_s")?;
        let lat = field(1, "lat_deg")?;
        let lon = field(2, "lon_deg")?;
        let alt = field(3, "alt_m")?;
        let rsrp = field(4, "rsrp_dbm")?;
        let loc = GeoLocation::new(lat, lon, alt).map_err(|e: GeoError| DataError::Schema {
            path: path_str.clone(),
            line,
            msg: e.to_string(),
        })?;
        if let Some(prev) = samples.last() {
            let prev: &Measurement = prev;
            if t_s <= prev.t_s {
                return Err(DataError::NonMonotonicTime { path: path_str, line });
            }
        }
        samples.push(Measurement { t_s, loc, rsrp_dbm: rsrp });
    }
    Ok(samples)
}

fn csv_error(path: &str, e: csv::Error) -> DataError {
    let line = match e.position() {
        Some(p) => p.line(),
        None => 0,
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io { path: path.to_string(), source: io },
        other => DataError::Schema { path: path.to_string(), line, msg: format!("{other:?}") },
    }
}

/// Applies a calibration spec to a raw flight in place. Refused when the
/// flight is already calibrated.
pub fn calibrate(flight: &mut Flight, cal: &CalibrationSpec) -> Result<(), DataError> {
    if flight.calibrated {
        return Err(DataError::AlreadyCalibrated(flight.id.clone()));
    }
    for s in &mut flight.samples {
        s.rsrp_dbm += cal.power_offset_db;
    }
    if cal.altitude_drift == AltitudeDrift::Linear && flight.samples.len() >= 2 {
        let t0 = flight.samples.first().unwrap().t_s;
        let t1 = flight.samples.last().unwrap().t_s;
        let drift = flight.samples.last().unwrap().loc.alt_m
            - flight.samples.first().unwrap().loc.alt_m;
        if t1 > t0 {
            for s in &mut flight.samples {
                s.loc.alt_m -= drift * (s.t_s - t0) / (t1 - t0);
            }
        }
    }
    if cal.trim_takeoff_landing {
        let modal = modal_altitude(&flight.samples);
        flight
            .samples
            .retain(|s| (s.loc.alt_m - modal).abs() <= TRIM_ALTITUDE_TOLERANCE_M);
    }
    if flight.samples.is_empty() {
        return Err(DataError::EmptyFlight(flight.id.clone()));
    }
    flight.calibrated = true;
    Ok(())
}

/// Most frequent altitude after rounding to whole meters; ties break toward
/// the lower altitude for determinism.
fn modal_altitude(samples: &[Measurement]) -> f64 {
    let mut counts: std::collections::BTreeMap<i64, usize> = std::collections::BTreeMap::new();
    for s in samples {
        *counts.entry(s.loc.alt_m.round() as i64).or_insert(0) += 1;
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(alt, _)| *alt as f64)
        .unwrap_or(0.0)
}

/// Loads and calibrates one flight from a canonical CSV.
pub fn load_measurements(
    path: &Path,
    cal: &CalibrationSpec,
    id: &str,
    height_label_m: f64,
) -> Result<Flight, DataError> {
    let samples = read_flight_csv(path)?;
    let mut flight = Flight {
        id: id.to_string(),
        height_label_m,
        samples,
        calibrated: false,
    };
    calibrate(&mut flight, cal)?;
    let path_str = path.display().to_string();
    for s in &flight.samples {
        if !(-160.0..=0.0).contains(&s.rsrp_dbm) {
            return Err(DataError::Schema {
                path: path_str,
                line: 0,
                msg: format!(
                    "calibrated rsrp {} dBm at t={} s outside [-160, 0]",
                    s.rsrp_dbm, s.t_s
                ),
            });
        }
    }
    Ok(flight)
}

/// Writes samples in the canonical schema. `stamp` becomes a leading `#`
/// comment line when given. Values keep full `f64` round-trip precision.
pub fn write_flight_csv(
    path: &Path,
    samples: &[Measurement],
    stamp: Option<&str>,
) -> Result<(), DataError> {
    let path_str = path.display().to_string();
    let io_err = |source| DataError::Io { path: path_str.clone(), source };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let write = |out: &mut dyn Write, s: String| -> Result<(), DataError> {
        out.write_all(s.as_bytes())
            .map_err(|e| DataError::Io { path: path_str.clone(), source: e })
    };
    if let Some(stamp) = stamp {
        write(&mut out, format!("# {stamp}\n"))?;
    }
    write(&mut out, format!("{MEASUREMENT_HEADER}\n"))?;
    for s in samples {
        write(
            &mut out,
            format!(
                "{},{},{},{},{}\n",
                s.t_s, s.loc.lat_deg, s.loc.lon_deg, s.loc.alt_m, s.rsrp_dbm
            ),
        )?;
    }
    Ok(())
}
