//! Antenna gain evaluation for the BS and UAV ends of a link.
//!
//! Three pattern sources are supported: a measured 3D grid (bilinearly
//! interpolated with azimuth wraparound), the analytic half-wave dipole
//! formula, and a constant isotropic gain. Gains are linear power ratios
//! throughout; use [`linear_to_dbi`] / [`dbi_to_linear`] at the edges.

use std::path::Path;

use thiserror::Error;

/// Linear gains below this clamp to it when converting to dBi.
const MIN_GAIN_FOR_DB: f64 = 1e-12;

/// sin(theta) below this counts as the degenerate dipole axis direction.
const DIPOLE_AXIS_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AntennaError {
    #[error("elevation {0} deg outside [-90, 90]")]
    ElevationOutOfRange(f64),
    #[error("invalid pattern grid: {0}")]
    InvalidGrid(String),
    #[error("pattern file {path}: {msg}")]
    PatternFile { path: String, msg: String },
    #[error("pattern file {path}: {source}")]
    PatternIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A measured gain grid over azimuth [0, 360) x elevation [-90, 90].
///
/// Both axes are strictly increasing; gains are linear, finite, and >= 0.
/// Queries interpolate bilinearly, wrapping azimuth across the 0/360 seam.
#[derive(Debug, Clone)]
pub struct PatternGrid {
    azimuth_deg: Vec<f64>,
    elevation_deg: Vec<f64>,
    /// Row-major: `gain_linear[az_idx * n_el + el_idx]`.
    gain_linear: Vec<f64>,
}

impl PatternGrid {
    pub fn new(
        azimuth_deg: Vec<f64>,
        elevation_deg: Vec<f64>,
        gain_linear: Vec<f64>,
    ) -> Result<Self, AntennaError> {
        let bad = |msg: String| Err(AntennaError::InvalidGrid(msg));
        if azimuth_deg.is_empty() || elevation_deg.is_empty() {
            return bad("empty axis".into());
        }
        if gain_linear.len() != azimuth_deg.len() * elevation_deg.len() {
            return bad(format!(
                "gain matrix has {} entries, expected {} x {}",
                gain_linear.len(),
                azimuth_deg.len(),
                elevation_deg.len()
            ));
        }
        if !azimuth_deg.windows(2).all(|w| w[0] < w[1]) {
            return bad("azimuth axis not strictly increasing".into());
        }
        if !elevation_deg.windows(2).all(|w| w[0] < w[1]) {
            return bad("elevation axis not strictly increasing".into());
        }
        let az_first = azimuth_deg[0];
        let az_last = *azimuth_deg.last().unwrap();
        if az_first < 0.0 || az_last >= 360.0 {
            return bad(format!("azimuth axis [{az_first}, {az_last}] not within [0, 360)"));
        }
        let el_first = elevation_deg[0];
        let el_last = *elevation_deg.last().unwrap();
        if el_first < -90.0 || el_last > 90.0 {
            return bad(format!("elevation axis [{el_first}, {el_last}] not within [-90, 90]"));
        }
        if gain_linear.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return bad("gains must be finite and >= 0".into());
        }
        Ok(Self { azimuth_deg, elevation_deg, gain_linear })
    }

    pub fn azimuth_axis(&self) -> &[f64] {
        &self.azimuth_deg
    }

    pub fn elevation_axis(&self) -> &[f64] {
        &self.elevation_deg
    }

    fn node(&self, az_idx: usize, el_idx: usize) -> f64 {
        self.gain_linear[az_idx * self.elevation_deg.len() + el_idx]
    }

    /// Bilinear interpolation with azimuth wraparound. Elevation is clamped
    /// to the grid span (the axis covers the usable range by construction).
    fn interpolate(&self, azimuth_deg: f64, elevation_deg: f64) -> f64 {
        let az = azimuth_deg.rem_euclid(360.0);
        let n_az = self.azimuth_deg.len();

        // Bracketing azimuth cell, wrapping the last-to-first seam.
        let (ia, ib, az_t) = if az < self.azimuth_deg[0] || az >= *self.azimuth_deg.last().unwrap()
        {
            let lo = *self.azimuth_deg.last().unwrap();
            let hi = self.azimuth_deg[0] + 360.0;
            let pos = if az < self.azimuth_deg[0] { az + 360.0 } else { az };
            let span = hi - lo;
            let t = if span > 0.0 { (pos - lo) / span } else { 0.0 };
            (n_az - 1, 0, t)
        } else {
            let hi = self.azimuth_deg.partition_point(|a| *a <= az).min(n_az - 1);
            let lo = hi - 1;
            let t = (az - self.azimuth_deg[lo]) / (self.azimuth_deg[hi] - self.azimuth_deg[lo]);
            (lo, hi, t)
        };

        let n_el = self.elevation_deg.len();
        let el = elevation_deg.clamp(self.elevation_deg[0], *self.elevation_deg.last().unwrap());
        let (ja, jb, el_t) = if n_el == 1 {
            (0, 0, 0.0)
        } else {
            let hi = self
                .elevation_deg
                .partition_point(|e| *e <= el)
                .clamp(1, n_el - 1);
            let lo = hi - 1;
            let t = (el - self.elevation_deg[lo]) / (self.elevation_deg[hi] - self.elevation_deg[lo]);
            (lo, hi, t)
        };

        let g00 = self.node(ia, ja);
        let g01 = self.node(ia, jb);
        let g10 = self.node(ib, ja);
        let g11 = self.node(ib, jb);
        let a = g00 + (g01 - g00) * el_t;
        let b = g10 + (g11 - g10) * el_t;
        a + (b - a) * az_t
    }
}

/// Gain source for one end of the link.
#[derive(Debug, Clone)]
pub enum AntennaPattern {
    /// Anechoic-chamber grid, queried by bilinear interpolation.
    Measured(PatternGrid),
    /// Analytic half-wave dipole on a vertical axis.
    Dipole,
    /// Constant linear gain in every direction.
    Isotropic(f64),
}

impl AntennaPattern {
    /// Linear gain toward (azimuth, elevation). Azimuth is wrapped mod 360;
    /// elevation must lie in [-90, 90].
    ///
    /// The dipole branch evaluates `cos((pi/2) cos(theta)) / sin(theta)` with
    /// theta the polar angle from the vertical dipole axis, i.e.
    /// `theta = 90 deg - elevation`. On the axis itself (sin(theta) below
    /// 1e-9) the limit value 0 is returned.
    pub fn gain(&self, azimuth_deg: f64, elevation_deg: f64) -> Result<f64, AntennaError> {
        if !elevation_deg.is_finite() || !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(AntennaError::ElevationOutOfRange(elevation_deg));
        }
        match self {
            AntennaPattern::Measured(grid) => Ok(grid.interpolate(azimuth_deg, elevation_deg)),
            AntennaPattern::Dipole => {
                let el = elevation_deg.to_radians();
                // theta = pi/2 - el, so sin(theta) = cos(el), cos(theta) = sin(el).
                let sin_theta = el.cos();
                if sin_theta < DIPOLE_AXIS_EPS {
                    return Ok(0.0);
                }
                Ok((std::f64::consts::FRAC_PI_2 * el.sin()).cos() / sin_theta)
            }
            AntennaPattern::Isotropic(gain) => {
                if !gain.is_finite() || *gain < 0.0 {
                    return Err(AntennaError::InvalidGrid(format!(
                        "isotropic gain {gain} must be finite and >= 0"
                    )));
                }
                Ok(*gain)
            }
        }
    }
}

/// Product of BS and UAV gains at the same direction, as it appears inside
/// the path-loss numerator.
pub fn combined_gain(
    bs: &AntennaPattern,
    uav: &AntennaPattern,
    azimuth_deg: f64,
    elevation_deg: f64,
) -> Result<f64, AntennaError> {
    Ok(bs.gain(azimuth_deg, elevation_deg)? * uav.gain(azimuth_deg, elevation_deg)?)
}

/// Linear power ratio to dBi, clamping below 1e-12 to avoid -inf.
pub fn linear_to_dbi(gain: f64) -> f64 {
    10.0 * gain.max(MIN_GAIN_FOR_DB).log10()
}

pub fn dbi_to_linear(dbi: f64) -> f64 {
    10f64.powf(dbi / 10.0)
}

/// Loads a pattern grid from CSV with header `azimuth_deg,elevation_deg,gain_dbi`.
///
/// Rows may be in any order; the loader converts dBi to linear gain and
/// requires full rectangular coverage of the azimuth x elevation axes.
pub fn load_pattern_csv(path: &Path) -> Result<PatternGrid, AntennaError> {
    let path_str = path.display().to_string();
    let file_err = |msg: String| AntennaError::PatternFile { path: path_str.clone(), msg };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => AntennaError::PatternIo { path: path_str.clone(), source: io },
            other => file_err(format!("{other:?}")),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| file_err(format!("cannot read header: {e}")))?
        .clone();
    let expected = ["azimuth_deg", "elevation_deg", "gain_dbi"];
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(file_err(format!("header {got:?}, expected {expected:?}")));
    }

    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| file_err(format!("row {}: {e}", idx + 2)))?;
        let parse = |field: usize, name: &str| -> Result<f64, AntennaError> {
            record
                .get(field)
                .ok_or_else(|| file_err(format!("row {}: missing {name}", idx + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| file_err(format!("row {}: bad {name}: {e}", idx + 2)))
        };
        rows.push((parse(0, "azimuth_deg")?, parse(1, "elevation_deg")?, parse(2, "gain_dbi")?));
    }
    if rows.is_empty() {
        return Err(file_err("no data rows".into()));
    }

    let mut az_axis: Vec<f64> = rows.iter().map(|r| r.0).collect();
    az_axis.sort_by(|a, b| a.total_cmp(b));
    az_axis.dedup();
    let mut el_axis: Vec<f64> = rows.iter().map(|r| r.1).collect();
    el_axis.sort_by(|a, b| a.total_cmp(b));
    el_axis.dedup();

    let n_el = el_axis.len();
    let mut gains = vec![f64::NAN; az_axis.len() * n_el];
    for (az, el, dbi) in &rows {
        let i = az_axis.binary_search_by(|x| x.total_cmp(az)).unwrap();
        let j = el_axis.binary_search_by(|x| x.total_cmp(el)).unwrap();
        if !gains[i * n_el + j].is_nan() {
            return Err(file_err(format!("duplicate sample at az {az}, el {el}")));
        }
        gains[i * n_el + j] = dbi_to_linear(*dbi);
    }
    if let Some(pos) = gains.iter().position(|g| g.is_nan()) {
        let (i, j) = (pos / n_el, pos % n_el);
        return Err(file_err(format!(
            "incomplete rectangular coverage: missing az {}, el {}",
            az_axis[i], el_axis[j]
        )));
    }
    PatternGrid::new(az_axis, el_axis, gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_grid() -> PatternGrid {
        // 4 azimuths, 3 elevations; gains chosen distinct per node.
        let az = vec![0.0, 90.0, 180.0, 270.0];
        let el = vec![-90.0, 0.0, 90.0];
        let mut g = Vec::new();
        for i in 0..4 {
            for j in 0..3 {
                g.push(1.0 + i as f64 * 0.25 + j as f64 * 0.1);
            }
        }
        PatternGrid::new(az, el, g).unwrap()
    }

    #[test]
    fn dipole_boresight_is_unity() {
        let g = AntennaPattern::Dipole.gain(0.0, 0.0).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dipole_at_45_degrees() {
        // theta = 45 deg from the axis <=> elevation 45 deg.
        let g = AntennaPattern::Dipole.gain(123.0, 45.0).unwrap();
        assert!((g - 0.627_933_223_297_817_5).abs() < 1e-12, "got {g}");
    }

    #[test]
    fn dipole_axis_limit_is_zero() {
        assert_eq!(AntennaPattern::Dipole.gain(0.0, 90.0).unwrap(), 0.0);
        assert_eq!(AntennaPattern::Dipole.gain(0.0, -90.0).unwrap(), 0.0);
    }

    #[test]
    fn dipole_symmetric_and_monotone() {
        let d = AntennaPattern::Dipole;
        for el in [5.0, 20.0, 45.0, 70.0] {
            let up = d.gain(0.0, el).unwrap();
            let down = d.gain(0.0, -el).unwrap();
            assert!((up - down).abs() < 1e-12);
        }
        let mut prev = d.gain(0.0, 0.0).unwrap();
        for el in 1..=89 {
            let g = d.gain(0.0, el as f64).unwrap();
            assert!(g < prev, "dipole gain not decreasing at el {el}");
            prev = g;
        }
    }

    #[test]
    fn isotropic_is_constant() {
        let p = AntennaPattern::Isotropic(1.0);
        assert_eq!(p.gain(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(p.gain(17.0, -63.0).unwrap(), 1.0);
        assert_eq!(p.gain(359.0, 90.0).unwrap(), 1.0);
    }

    #[test]
    fn combined_gain_is_product() {
        let a = AntennaPattern::Isotropic(2.0);
        let b = AntennaPattern::Isotropic(3.0);
        assert_eq!(combined_gain(&a, &b, 10.0, 10.0).unwrap(), 6.0);
        let one = AntennaPattern::Isotropic(1.0);
        assert_eq!(combined_gain(&one, &one, 0.0, 0.0).unwrap(), 1.0);
        let d = AntennaPattern::Dipole;
        assert!((combined_gain(&d, &d, 0.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measured_grid_node_query_is_exact() {
        let grid = small_grid();
        let expected = grid.node(1, 2);
        let p = AntennaPattern::Measured(grid);
        assert_eq!(p.gain(90.0, 90.0).unwrap(), expected);
    }

    #[test]
    fn azimuth_seam_is_continuous() {
        let p = AntennaPattern::Measured(small_grid());
        let a = p.gain(1e-9, 10.0).unwrap();
        let b = p.gain(360.0 - 1e-9, 10.0).unwrap();
        assert!((a - b).abs() < 1e-9, "seam mismatch: {a} vs {b}");
    }

    #[test]
    fn elevation_out_of_range_is_an_error() {
        let p = AntennaPattern::Isotropic(1.0);
        assert!(matches!(p.gain(0.0, 90.1), Err(AntennaError::ElevationOutOfRange(_))));
        assert!(matches!(p.gain(0.0, -91.0), Err(AntennaError::ElevationOutOfRange(_))));
    }

    #[test]
    fn grid_validation_rejects_bad_input() {
        assert!(PatternGrid::new(vec![0.0, 0.0], vec![0.0], vec![1.0, 1.0]).is_err());
        assert!(PatternGrid::new(vec![0.0, 360.0], vec![0.0], vec![1.0, 1.0]).is_err());
        assert!(PatternGrid::new(vec![0.0], vec![-91.0], vec![1.0]).is_err());
        assert!(PatternGrid::new(vec![0.0], vec![0.0], vec![-1.0]).is_err());
        assert!(PatternGrid::new(vec![0.0], vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn pattern_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pat.csv");
        let mut body = String::from("azimuth_deg,elevation_deg,gain_dbi\n");
        // Rows deliberately out of order.
        for (az, el, dbi) in [
            (90.0, 0.0, 3.0),
            (0.0, 0.0, 0.0),
            (0.0, 45.0, -3.0),
            (90.0, 45.0, 1.5),
        ] {
            body.push_str(&format!("{az},{el},{dbi}\n"));
        }
        std::fs::write(&path, body).unwrap();
        let grid = load_pattern_csv(&path).unwrap();
        let p = AntennaPattern::Measured(grid);
        assert!((p.gain(0.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((p.gain(90.0, 0.0).unwrap() - dbi_to_linear(3.0)).abs() < 1e-12);
    }

    #[test]
    fn pattern_csv_rejects_incomplete_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pat.csv");
        std::fs::write(
            &path,
            "azimuth_deg,elevation_deg,gain_dbi\n0,0,0\n90,0,1\n0,45,2\n",
        )
        .unwrap();
        let err = load_pattern_csv(&path).unwrap_err();
        assert!(err.to_string().contains("incomplete"), "{err}");
    }

    #[test]
    fn db_conversion_clamps_small_gains() {
        assert_eq!(linear_to_dbi(0.0), -120.0);
        assert!((linear_to_dbi(1.0)).abs() < 1e-12);
        assert!((dbi_to_linear(linear_to_dbi(2.5)) - 2.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bilinear_bounded_by_surrounding_nodes(az in 0.0f64..360.0, el in -90.0f64..=90.0) {
            let grid = small_grid();
            let lo = grid.gain_linear.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = grid.gain_linear.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let g = AntennaPattern::Measured(grid).gain(az, el).unwrap();
            prop_assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
        }

        #[test]
        fn azimuth_wrap_is_consistent(az in -720.0f64..720.0, el in -90.0f64..=90.0) {
            let p = AntennaPattern::Measured(small_grid());
            let a = p.gain(az, el).unwrap();
            let b = p.gain(az + 360.0, el).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
