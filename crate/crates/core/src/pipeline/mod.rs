//! Stage orchestration: runs the requested pipeline stages in dependency
//! order and writes reproducible artifacts.
//!
//! Every artifact is stamped with the tool version, a SHA-256 of the config
//! document, and the run seed; JSON reports additionally carry digests of
//! the input files. A failing stage removes its partial artifacts. All
//! randomness derives from the single top-level seed.

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::GeoLocation;
use crate::kriging::{
    cross_validate, generate_radio_map, solve_kriging, select_neighbors, KrigingError,
    SamplePoint, Variogram, XvalParams,
};
use crate::measurement::{load_measurements, DataError, MeasurementSet};
use crate::propagation::{
    extract_shadowing, predict_rsrp, PropagationConfig, PropagationModel,
};
use crate::statistics::{
    correlation_3d, fit_biexponential, fit_biexponential_fixed_a, fit_exponential_vertical,
    fit_gaussian, fit_skew_normal, horizontal_correlation, vertical_correlation,
    CorrelationCurve, CorrelationModel3D, ShadowingFlight, StatsError,
};
use crate::synth::{synthesize_rsrp, SyntheticScenario, TrajectorySpec};

pub use config::{Config, KrigingMode};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
        /// True for numerical failures (singular systems, diverged fits),
        /// false for data problems.
        numerical: bool,
    },
    #[error("{0}")]
    Io(String),
}

impl PipelineError {
    /// Stable CLI exit code: 3 for data errors, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Stage { numerical: true, .. } => 4,
            _ => 3,
        }
    }
}

/// Pipeline stages in canonical execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Fit,
    Shadowing,
    Correlate,
    Variogram,
    Krige,
    Xval,
    Map,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Fit => "fit",
            Stage::Shadowing => "shadowing",
            Stage::Correlate => "correlate",
            Stage::Variogram => "variogram",
            Stage::Krige => "krige",
            Stage::Xval => "xval",
            Stage::Map => "map",
        }
    }
}

/// Parses a config document; `path` anchors relative data paths.
pub fn load_config(path: &Path) -> Result<(Config, Vec<u8>), PipelineError> {
    let raw = std::fs::read(path)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw)
        .map_err(|e| PipelineError::Config(format!("{}: not UTF-8: {e}", path.display())))?;
    let mut cfg: Config = toml::from_str(text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    cfg.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, raw))
}

/// Builds the global rayon pool with the requested thread count. A no-op
/// when the pool already exists.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct ReportMeta {
    tool_version: String,
    config_sha256: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
}

struct Ctx<'a> {
    cfg: &'a Config,
    out: PathBuf,
    seed: u64,
    config_hash: String,
    prop: PropagationConfig,
    bs: GeoLocation,
    input_digests: BTreeMap<String, String>,
    data: Option<MeasurementSet>,
    shadowing: Option<Vec<ShadowingFlight>>,
    shadowing_errors: Vec<usize>,
    height_stats: Option<Vec<HeightStats>>,
    fitted_model: Option<CorrelationModel3D>,
    artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct HeightStats {
    flight_id: String,
    height_m: f64,
    n_samples: usize,
    n_errors: usize,
    mean_db: f64,
    std_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nmse_gaussian: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nmse_skewed: Option<f64>,
}

type StageResult<T> = Result<T, (String, bool)>;

fn data_err<E: std::fmt::Display>(e: E) -> (String, bool) {
    (e.to_string(), false)
}

fn stats_err(e: StatsError) -> (String, bool) {
    let numerical = matches!(e, StatsError::FitDiverged(_) | StatsError::DegenerateStd);
    (e.to_string(), numerical)
}

fn kriging_err(e: KrigingError) -> (String, bool) {
    let numerical = matches!(e, KrigingError::SingularSystem | KrigingError::FallbackFailed { .. });
    (e.to_string(), numerical)
}

impl<'a> Ctx<'a> {
    fn stamp(&self) -> String {
        format!(
            "tool=radiomap-{TOOL_VERSION} config={} seed={}",
            &self.config_hash[..12],
            self.seed
        )
    }

    fn meta(&self) -> ReportMeta {
        ReportMeta {
            tool_version: TOOL_VERSION.to_string(),
            config_sha256: self.config_hash.clone(),
            seed: self.seed,
            inputs: self.input_digests.clone(),
        }
    }

    fn digest_input(&mut self, label: &str, path: &Path) -> StageResult<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        self.input_digests
            .insert(label.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Loads flights from disk, or synthesizes them in memory when the
    /// config has a synth section and no data files.
    fn ensure_data(&mut self) -> StageResult<()> {
        if self.data.is_some() {
            return Ok(());
        }
        if self.cfg.data.flights.is_empty() {
            if self.cfg.synth.is_some() {
                let dataset = synthesize_rsrp(&self.scenario()?).map_err(data_err)?;
                self.data = Some(dataset.to_measurement_set());
                return Ok(());
            }
            return Err(data_err("no data.flights configured and no synth section"));
        }
        let spec = self.cfg.calibration.to_spec();
        let mut flights = Vec::new();
        for (idx, entry) in self.cfg.data.flights.iter().enumerate() {
            let path = self.cfg.resolve_path(&entry.path);
            self.digest_input(&entry.path, &path)?;
            let id = entry
                .id
                .clone()
                .unwrap_or_else(|| format!("flight{:02}_h{:03}m", idx, entry.height_m.round()));
            let flight =
                load_measurements(&path, &spec, &id, entry.height_m).map_err(data_err)?;
            flights.push(flight);
        }
        self.data = Some(MeasurementSet { flights });
        Ok(())
    }

    fn scenario(&self) -> StageResult<SyntheticScenario> {
        let synth = self
            .cfg
            .synth
            .as_ref()
            .ok_or_else(|| data_err("config has no [synth] section"))?;
        Ok(SyntheticScenario {
            cfg: self.prop.clone(),
            bs: self.bs,
            model: self.cfg.model.to_model(),
            trajectory: TrajectorySpec {
                origin_lat_deg: synth.origin_lat_deg,
                origin_lon_deg: synth.origin_lon_deg,
                width_m: synth.width_m,
                depth_m: synth.depth_m,
                leg_spacing_m: synth.leg_spacing_m,
                sample_spacing_m: synth.sample_spacing_m,
                heights_m: synth.heights_m.clone(),
            },
            pathloss_model: self.cfg.propagation.model,
            mean_offsets_db: synth
                .mean_offsets
                .iter()
                .map(|m| (m.height_m, m.offset_db))
                .collect(),
            sample_interval_s: synth.sample_interval_s,
            seed: self.seed,
        })
    }

    /// Extracts shadowing per flight and fits the per-height statistics.
    fn ensure_shadowing(&mut self) -> StageResult<()> {
        if self.shadowing.is_some() {
            return Ok(());
        }
        self.ensure_data()?;
        let data = self.data.as_ref().unwrap();
        let model = self.cfg.propagation.model;
        let mut flights = Vec::new();
        let mut error_counts = Vec::new();
        let mut stats = Vec::new();
        for flight in &data.flights {
            let extracted = extract_shadowing(&self.prop, &self.bs, &flight.samples, model);
            let mut locations = Vec::new();
            let mut w = Vec::new();
            let mut errors = 0usize;
            for (sample, res) in flight.samples.iter().zip(extracted) {
                match res {
                    Ok(value) => {
                        locations.push(sample.loc);
                        w.push(value);
                    }
                    Err(_) => errors += 1,
                }
            }
            let (mean, std) = fit_gaussian(&w).map_err(stats_err)?;
            let skew = fit_skew_normal(&w, self.cfg.shadowing.histogram_bins).ok();
            stats.push(HeightStats {
                flight_id: flight.id.clone(),
                height_m: flight.height_label_m,
                n_samples: w.len(),
                n_errors: errors,
                mean_db: mean,
                std_db: std,
                alpha: skew.map(|s| s.alpha),
                nmse_gaussian: skew.map(|s| s.nmse_gaussian),
                nmse_skewed: skew.map(|s| s.nmse_skewed),
            });
            error_counts.push(errors);
            flights.push(ShadowingFlight::new(flight.height_label_m, locations, w));
        }
        self.shadowing = Some(flights);
        self.shadowing_errors = error_counts;
        self.height_stats = Some(stats);
        Ok(())
    }

    /// The correlation model for the kriging stages: fitted by the correlate
    /// stage when it ran in this invocation, else the config [model] values.
    fn active_model(&self) -> CorrelationModel3D {
        self.fitted_model.unwrap_or_else(|| self.cfg.model.to_model())
    }

    /// Kriging pool from the flights, values per the configured mode.
    /// Ids number samples consecutively in flight order.
    fn build_pool(&mut self, heights: Option<&[f64]>) -> StageResult<Vec<SamplePoint>> {
        self.ensure_data()?;
        if self.cfg.kriging.mode == KrigingMode::Residual {
            self.ensure_shadowing()?;
        }
        let data = self.data.as_ref().unwrap();
        let mut pool = Vec::new();
        let mut next_id = 0u64;
        for (f_idx, flight) in data.flights.iter().enumerate() {
            let selected =
                heights.map_or(true, |hs| hs.iter().any(|h| *h == flight.height_label_m));
            match self.cfg.kriging.mode {
                KrigingMode::Raw => {
                    for s in &flight.samples {
                        if selected {
                            pool.push(SamplePoint {
                                id: next_id,
                                loc: s.loc,
                                value_dbm: s.rsrp_dbm,
                            });
                        }
                        next_id += 1;
                    }
                }
                KrigingMode::Residual => {
                    let sf = &self.shadowing.as_ref().unwrap()[f_idx];
                    for (loc, w) in sf.locations.iter().zip(&sf.w_db) {
                        if selected {
                            pool.push(SamplePoint { id: next_id, loc: *loc, value_dbm: *w });
                        }
                        next_id += 1;
                    }
                }
            }
        }
        Ok(pool)
    }

    fn write_text(&mut self, name: &str, body: &str) -> StageResult<PathBuf> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(data_err)?;
        }
        let mut file = std::fs::File::create(&path).map_err(data_err)?;
        file.write_all(body.as_bytes()).map_err(data_err)?;
        self.artifacts.push(path.clone());
        Ok(path)
    }

    fn write_report<T: Serialize>(&mut self, name: &str, report: &T) -> StageResult<PathBuf> {
        let body = serde_json::to_string_pretty(report).map_err(data_err)?;
        self.write_text(name, &(body + "\n"))
    }

    fn curve_csv(&self, curve: &CorrelationCurve) -> String {
        let mut body = format!("# {}\ndistance_m,correlation,count\n", self.stamp());
        for ((d, r), c) in curve
            .bin_centers_m
            .iter()
            .zip(&curve.values)
            .zip(&curve.counts)
        {
            body.push_str(&format!("{d},{r},{c}\n"));
        }
        body
    }
}

/// Runs the requested stages (deduplicated, canonical order) against a
/// parsed config. Returns the artifact paths written.
pub fn run_pipeline(
    cfg: &Config,
    raw_config: &[u8],
    stages: &[Stage],
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", out_dir.display())))?;
    let bs = GeoLocation::new(cfg.site.bs_lat_deg, cfg.site.bs_lon_deg, cfg.site.bs_height_m)
        .map_err(|e| PipelineError::Config(format!("site: {e}")))?;
    let mut ctx = Ctx {
        cfg,
        out: out_dir.to_path_buf(),
        seed: seed_override.unwrap_or(cfg.seed),
        config_hash: sha256_hex(raw_config),
        prop: cfg.propagation_config()?,
        bs,
        input_digests: BTreeMap::new(),
        data: None,
        shadowing: None,
        shadowing_errors: Vec::new(),
        height_stats: None,
        fitted_model: None,
        artifacts: Vec::new(),
    };

    let mut requested: Vec<Stage> = stages.to_vec();
    requested.sort();
    requested.dedup();

    for stage in requested {
        let before = ctx.artifacts.len();
        let result = match stage {
            Stage::Synth => synth_stage(&mut ctx),
            Stage::Fit => fit_stage(&mut ctx),
            Stage::Shadowing => shadowing_stage(&mut ctx),
            Stage::Correlate => correlate_stage(&mut ctx),
            Stage::Variogram => variogram_stage(&mut ctx),
            Stage::Krige => krige_stage(&mut ctx),
            Stage::Xval => xval_stage(&mut ctx),
            Stage::Map => map_stage(&mut ctx),
        };
        if let Err((message, numerical)) = result {
            // Remove partial artifacts of the failed stage.
            for path in ctx.artifacts.drain(before..) {
                let _ = std::fs::remove_file(path);
            }
            return Err(PipelineError::Stage { stage: stage.name(), message, numerical });
        }
    }
    Ok(ctx.artifacts)
}

fn format_flight_filename(prefix: &str, height_m: f64) -> String {
    format!("{prefix}_h{:03}m", height_m.round() as i64)
}

fn synth_stage(ctx: &mut Ctx) -> StageResult<()> {
    let scenario = ctx.scenario()?;
    let dataset = synthesize_rsrp(&scenario).map_err(|e| match e {
        crate::synth::SynthError::FactorizationFailed { .. } => (e.to_string(), true),
        other => data_err(other),
    })?;
    let stamp = ctx.stamp();
    let mut heights = Vec::new();
    let mut n_samples = 0usize;
    for flight in &dataset.flights {
        let base = format_flight_filename("data/synth", flight.height_m);
        let mut plain = format!("# {stamp}\nt_s,lat_deg,lon_deg,alt_m,rsrp_dbm\n");
        let mut truth = format!(
            "# {stamp}\nt_s,lat_deg,lon_deg,alt_m,rsrp_dbm,true_pl_db,true_w_db\n"
        );
        for s in &flight.samples {
            plain.push_str(&format!(
                "{},{},{},{},{}\n",
                s.t_s, s.loc.lat_deg, s.loc.lon_deg, s.loc.alt_m, s.rsrp_dbm
            ));
            truth.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.t_s, s.loc.lat_deg, s.loc.lon_deg, s.loc.alt_m, s.rsrp_dbm, s.true_pl_db,
                s.true_w_db
            ));
        }
        ctx.write_text(&format!("{base}.csv"), &plain)?;
        ctx.write_text(&format!("{base}_truth.csv"), &truth)?;
        heights.push(flight.height_m);
        n_samples += flight.samples.len();
    }

    #[derive(Serialize)]
    struct SynthReport {
        meta: ReportMeta,
        heights_m: Vec<f64>,
        samples_total: usize,
        covariance_jitter_db2: f64,
   }
    let report = SynthReport {
        meta: ctx.meta(),
        heights_m: heights,
        samples_total: n_samples,
        covariance_jitter_db2: dataset.jitter_db2,
    };
    ctx.write_report("synth_report.json", &report)?;
    ctx.data = Some(dataset.to_measurement_set());
    Ok(())
}

fn fit_stage(ctx: &mut Ctx) -> StageResult<()> {
    ctx.ensure_data()?;
    let data = ctx.data.clone().unwrap();
    let stamp = ctx.stamp();

    #[derive(Serialize)]
    struct ModelFit {
        n: usize,
        n_errors: usize,
        mean_residual_db: f64,
        std_residual_db: f64,
        rmse_db: f64,
    }
    #[derive(Serialize)]
    struct FlightFit {
        flight_id: String,
        height_m: f64,
        two_ray: ModelFit,
        free_space: ModelFit,
    }

    let mut rows = format!(
        "# {stamp}\nflight_id,t_s,lat_deg,lon_deg,alt_m,rsrp_dbm,pred_two_ray_dbm,pred_free_space_dbm\n"
    );
    let mut fits = Vec::new();
    for flight in &data.flights {
        let mut residuals = [Vec::new(), Vec::new()];
        let mut errors = [0usize, 0usize];
        for s in &flight.samples {
            let tr = predict_rsrp(&ctx.prop, &ctx.bs, &s.loc, PropagationModel::TwoRay);
            let fs = predict_rsrp(&ctx.prop, &ctx.bs, &s.loc, PropagationModel::FreeSpace);
            let fmt = |r: &Result<f64, _>| match r {
                Ok(v) => v.to_string(),
                Err(_) => String::new(),
            };
            rows.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                flight.id,
                s.t_s,
                s.loc.lat_deg,
                s.loc.lon_deg,
                s.loc.alt_m,
                s.rsrp_dbm,
                fmt(&tr),
                fmt(&fs)
            ));
            for (k, pred) in [tr, fs].into_iter().enumerate() {
                match pred {
                    Ok(p) => residuals[k].push(s.rsrp_dbm - p),
                    Err(_) => errors[k] += 1,
                }
            }
        }
        let summarize = |res: &[f64], n_errors: usize| -> StageResult<ModelFit> {
            let (mean, std) = fit_gaussian(res).map_err(stats_err)?;
            let rmse =
                (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
            Ok(ModelFit {
                n: res.len(),
                n_errors,
                mean_residual_db: mean,
                std_residual_db: std,
                rmse_db: rmse,
            })
        };
        fits.push(FlightFit {
            flight_id: flight.id.clone(),
            height_m: flight.height_label_m,
            two_ray: summarize(&residuals[0], errors[0])?,
            free_space: summarize(&residuals[1], errors[1])?,
        });
    }
    ctx.write_text("fit_residuals.csv", &rows)?;

    #[derive(Serialize)]
    struct FitReport {
        meta: ReportMeta,
        flights: Vec<FlightFit>,
    }
    let report = FitReport { meta: ctx.meta(), flights: fits };
    ctx.write_report("fit_report.json", &report)?;
    Ok(())
}

fn shadowing_stage(ctx: &mut Ctx) -> StageResult<()> {
    ctx.ensure_shadowing()?;
    let stamp = ctx.stamp();
    let flights = ctx.shadowing.clone().unwrap();
    let data = ctx.data.clone().unwrap();

    let mut rows = format!("# {stamp}\nflight_id,height_m,lat_deg,lon_deg,alt_m,w_db\n");
    for (flight, sf) in data.flights.iter().zip(&flights) {
        for (loc, w) in sf.locations.iter().zip(&sf.w_db) {
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                flight.id, flight.height_label_m, loc.lat_deg, loc.lon_deg, loc.alt_m, w
            ));
        }
    }
    ctx.write_text("shadowing.csv", &rows)?;

    #[derive(Serialize)]
    struct ShadowingReport {
        meta: ReportMeta,
        pathloss_model: PropagationModel,
        heights: Vec<HeightStats>,
    }
    let report = ShadowingReport {
        meta: ctx.meta(),
        pathloss_model: ctx.cfg.propagation.model,
        heights: ctx.height_stats.clone().unwrap(),
    };
    ctx.write_report("shadowing_report.json", &report)?;
    Ok(())
}

fn correlate_stage(ctx: &mut Ctx) -> StageResult<()> {
    ctx.ensure_shadowing()?;
    let flights = ctx.shadowing.clone().unwrap();
    let bin_m = ctx.cfg.correlation.bin_m;

    let horizontal = horizontal_correlation(&flights, bin_m).map_err(stats_err)?;
    ctx.write_text("correlation_horizontal.csv", &ctx.curve_csv(&horizontal))?;

    // Vertical matrix and the per-offset averages feeding the d_cor fit.
    let (d_cor_m, vertical_json) = if flights.len() >= 2 {
        let vertical = vertical_correlation(&flights, ctx.cfg.correlation.vertical_dh_max_m)
            .map_err(stats_err)?;
        let mut matrix_csv = format!("# {}\nheight_m", ctx.stamp());
        for h in &vertical.heights_m {
            matrix_csv.push_str(&format!(",{h}"));
        }
        matrix_csv.push('\n');
        for (i, h) in vertical.heights_m.iter().enumerate() {
            matrix_csv.push_str(&h.to_string());
            for value in &vertical.values[i] {
                matrix_csv.push_str(&format!(",{value}"));
            }
            matrix_csv.push('\n');
        }
        ctx.write_text("correlation_vertical.csv", &matrix_csv)?;
        let averages = vertical.averages_by_offset();
        let d_cor = fit_exponential_vertical(&averages).map_err(stats_err)?;
        (d_cor, Some(vertical))
    } else {
        (ctx.cfg.model.d_cor_m, None)
    };

    // Horizontal decay rates with the mixture weight fixed, plus the free
    // three-parameter fit for reference.
    let a = ctx.cfg.correlation.mixture_a;
    let (b1, b2) = fit_biexponential_fixed_a(&horizontal, a, 1.0).map_err(stats_err)?;
    let free_fit = fit_biexponential(&horizontal).map_err(stats_err)?;

    // Cross-height curves and per-offset decay rates.
    let curves = correlation_3d(&flights, bin_m).map_err(stats_err)?;
    #[derive(Serialize)]
    struct OffsetFit {
        d_v_m: f64,
        b1: f64,
        b2: f64,
        bins: usize,
    }
    let mut offset_fits = Vec::new();
    for (d_v, curve) in &curves {
        ctx.write_text(
            &format!("correlation_3d_dv{:03}m.csv", d_v.round() as i64),
            &ctx.curve_csv(curve),
        )?;
        if *d_v > 0.0 && curve.len() >= 5 {
            let scale = (-(d_v / d_cor_m) * std::f64::consts::LN_2).exp();
            if let Ok((ob1, ob2)) = fit_biexponential_fixed_a(curve, a, scale) {
                offset_fits.push(OffsetFit { d_v_m: *d_v, b1: ob1, b2: ob2, bins: curve.len() });
            }
        }
    }

    let stats = ctx.height_stats.clone().unwrap();
    let sigma_w2 =
        stats.iter().map(|s| s.std_db * s.std_db).sum::<f64>() / stats.len() as f64;
    let model = CorrelationModel3D { a, b1, b2, d_cor_m, sigma_w2 };
    ctx.fitted_model = Some(model);

    #[derive(Serialize)]
    struct FreeFit {
        a: f64,
        b1: f64,
        b2: f64,
    }
    #[derive(Serialize)]
    struct CorrelationReport {
        meta: ReportMeta,
        a: f64,
        b1: f64,
        b2: f64,
        d_cor_m: f64,
        sigma_w2: f64,
        free_fit: FreeFit,
        per_offset_fits: Vec<OffsetFit>,
        #[serde(skip_serializing_if = "Option::is_none")]
        vertical_matrix: Option<crate::statistics::VerticalCorrelation>,
    }
    let report = CorrelationReport {
        meta: ctx.meta(),
        a: model.a,
        b1: model.b1,
        b2: model.b2,
        d_cor_m: model.d_cor_m,
        sigma_w2: model.sigma_w2,
        free_fit: FreeFit { a: free_fit.0, b1: free_fit.1, b2: free_fit.2 },
        per_offset_fits: offset_fits,
        vertical_matrix: vertical_json,
    };
    ctx.write_report("correlation_model.json", &report)?;
    Ok(())
}

fn variogram_stage(ctx: &mut Ctx) -> StageResult<()> {
    // Uses the fitted model when correlate ran in this invocation; the
    // config [model] values otherwise.
    let model = ctx.active_model();
    let stamp = ctx.stamp();

    let mut horizontal = format!("# {stamp}\ndistance_m,gamma_db2\n");
    let mut d = 0.0;
    while d <= 500.0 {
        let gamma = model.sigma_w2 * (1.0 - model.eval(0.0, d));
        horizontal.push_str(&format!("{d},{gamma}\n"));
        d += 1.0;
    }
    ctx.write_text("variogram_horizontal.csv", &horizontal)?;

    let mut vertical = format!("# {stamp}\ndistance_m,gamma_db2\n");
    let mut d = 0.0;
    while d <= 120.0 {
        let gamma = model.sigma_w2 * (1.0 - model.eval(d, 0.0));
        vertical.push_str(&format!("{d},{gamma}\n"));
        d += 1.0;
    }
    ctx.write_text("variogram_vertical.csv", &vertical)?;

    #[derive(Serialize)]
    struct VariogramReport {
        meta: ReportMeta,
        model: CorrelationModel3D,
        sill_db2: f64,
    }
    let report = VariogramReport { meta: ctx.meta(), model, sill_db2: model.sigma_w2 };
    ctx.write_report("variogram_report.json", &report)?;
    Ok(())
}

/// Reads the krige-stage target list: CSV with header `lat_deg,lon_deg,alt_m`.
fn read_targets(path: &Path) -> Result<Vec<GeoLocation>, DataError> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| DataError::Schema { path: path_str.clone(), line: 1, msg: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Schema { path: path_str.clone(), line: 1, msg: e.to_string() })?
        .clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != ["lat_deg", "lon_deg", "alt_m"] {
        return Err(DataError::Schema {
            path: path_str,
            line: 1,
            msg: format!("header {got:?}, expected [lat_deg, lon_deg, alt_m]"),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record
            .map_err(|e| DataError::Schema { path: path_str.clone(), line: 0, msg: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |i: usize| -> Result<f64, DataError> {
            record
                .get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| DataError::Schema {
                    path: path_str.clone(),
                    line,
                    msg: format!("column {i}: {e}"),
                })
        };
        out.push(
            GeoLocation::new(parse(0)?, parse(1)?, parse(2)?).map_err(|e| DataError::Schema {
                path: path_str.clone(),
                line,
                msg: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

fn krige_stage(ctx: &mut Ctx) -> StageResult<()> {
    let targets_path = ctx
        .cfg
        .kriging
        .targets_path
        .clone()
        .ok_or_else(|| data_err("kriging.targets_path not set"))?;
    let resolved = ctx.cfg.resolve_path(&targets_path);
    ctx.digest_input(&targets_path, &resolved)?;
    let targets = read_targets(&resolved).map_err(data_err)?;
    let pool = ctx.build_pool(None)?;
    let variogram = Variogram::with_nugget(ctx.active_model(), ctx.cfg.kriging.nugget_db2);
    let mode = ctx.cfg.kriging.mode;
    let krig = &ctx.cfg.kriging;

    let mut rows = format!(
        "# {}\nlat_deg,lon_deg,alt_m,predicted_dbm,neighbor_count,fallback_flag\n",
        ctx.stamp()
    );
    for target in &targets {
        let deterministic = predict_rsrp(&ctx.prop, &ctx.bs, target, ctx.cfg.propagation.model);
        let (value, neighbors, fallback) =
            match select_neighbors(target, &pool, krig.r0_m, krig.m_max) {
                Ok(neighbors) => {
                    let sol =
                        solve_kriging(&variogram, target, &neighbors).map_err(kriging_err)?;
                    let value = match mode {
                        KrigingMode::Raw => sol.predicted_dbm,
                        KrigingMode::Residual => {
                            deterministic.as_ref().map_err(|e| (e.to_string(), false))?
                                + sol.predicted_dbm
                        }
                    };
                    (value, neighbors.len(), false)
                }
                Err(KrigingError::NoNeighbors { .. }) => {
                    let value = deterministic.map_err(|e| (e.to_string(), false))?;
                    (value, 0, true)
                }
                Err(e) => return Err(kriging_err(e)),
            };
        rows.push_str(&format!(
            "{},{},{},{},{},{}\n",
            target.lat_deg, target.lon_deg, target.alt_m, value, neighbors, fallback as u8
        ));
    }
    ctx.write_text("predictions.csv", &rows)?;
    Ok(())
}

fn xval_stage(ctx: &mut Ctx) -> StageResult<()> {
    ctx.ensure_data()?;
    ctx.ensure_shadowing()?;
    let data = ctx.data.as_ref().unwrap();
    let heights: Vec<f64> = data.flights.iter().map(|f| f.height_label_m).collect();
    let target_height = ctx.cfg.xval.target_height.unwrap_or_else(|| {
        heights.iter().cloned().fold(f64::INFINITY, f64::min)
    });
    let pool_heights: Vec<f64> = ctx
        .cfg
        .xval
        .pool_heights
        .clone()
        .unwrap_or_else(|| heights.clone());

    let pool = ctx.build_pool(Some(&pool_heights))?;
    let targets = ctx.build_pool(Some(&[target_height]))?;
    let variogram = Variogram::with_nugget(ctx.active_model(), ctx.cfg.kriging.nugget_db2);
    let params = XvalParams {
        train_m: ctx.cfg.xval.train_m,
        validate_n0: ctx.cfg.xval.validate_n0,
        r0_m: ctx.cfg.kriging.r0_m,
        m_max: ctx.cfg.kriging.m_max,
        iterations: ctx.cfg.xval.iterations,
        seed: ctx.seed,
    };
    let summary = cross_validate(&variogram, &pool, &targets, &params).map_err(kriging_err)?;

    let baseline = ctx
        .height_stats
        .as_ref()
        .unwrap()
        .iter()
        .find(|s| s.height_m == target_height)
        .map(|s| s.std_db);

    #[derive(Serialize)]
    struct XvalReport {
        meta: ReportMeta,
        mode: KrigingMode,
        pool_heights: Vec<f64>,
        target_height: f64,
        summary: crate::kriging::RmseSummary,
        /// Perfect-path-loss baseline: shadowing std of the target height.
        #[serde(skip_serializing_if = "Option::is_none")]
        baseline_rmse_db: Option<f64>,
    }
    let report = XvalReport {
        meta: ctx.meta(),
        mode: ctx.cfg.kriging.mode,
        pool_heights,
        target_height,
        summary,
        baseline_rmse_db: baseline,
    };
    ctx.write_report("xval_report.json", &report)?;
    Ok(())
}

fn map_stage(ctx: &mut Ctx) -> StageResult<()> {
    let pool = ctx.build_pool(None)?;
    if pool.is_empty() {
        return Err(data_err("no pool samples for map generation"));
    }
    let bounds = {
        let fold = |init: [f64; 2], v: f64| [init[0].min(v), init[1].max(v)];
        let mut lat = [f64::INFINITY, f64::NEG_INFINITY];
        let mut lon = [f64::INFINITY, f64::NEG_INFINITY];
        let mut alt = [f64::INFINITY, f64::NEG_INFINITY];
        for s in &pool {
            lat = fold(lat, s.loc.lat_deg);
            lon = fold(lon, s.loc.lon_deg);
            alt = fold(alt, s.loc.alt_m);
        }
        Some((lat, lon, alt))
    };
    let grid = ctx.cfg.map.resolve(bounds).map_err(|e| data_err(e))?;
    let variogram = Variogram::with_nugget(ctx.active_model(), ctx.cfg.kriging.nugget_db2);
    let mode = ctx.cfg.kriging.mode;
    let prop = ctx.prop.clone();
    let bs = ctx.bs;
    let pl_model = ctx.cfg.propagation.model;
    let fallback = |node: &GeoLocation| -> Option<f64> {
        match mode {
            KrigingMode::Raw => predict_rsrp(&prop, &bs, node, pl_model).ok(),
            // Residual mode kriges w; the deterministic part is added below.
            KrigingMode::Residual => Some(0.0),
        }
    };
    let map = generate_radio_map(
        &variogram,
        &pool,
        &grid,
        ctx.cfg.kriging.m_max,
        ctx.cfg.kriging.r0_m,
        fallback,
    )
    .map_err(kriging_err)?;

    let mut rows = format!(
        "# {}\nlat_deg,lon_deg,alt_m,predicted_dbm,neighbor_count,fallback_flag\n",
        ctx.stamp()
    );
    let mut n_fallback = 0usize;
    for cell in &map.cells {
        let value = match mode {
            KrigingMode::Raw => cell.predicted_dbm,
            KrigingMode::Residual => {
                let deterministic = predict_rsrp(&prop, &bs, &cell.loc, pl_model)
                    .map_err(|e| (e.to_string(), false))?;
                deterministic + cell.predicted_dbm
            }
        };
        n_fallback += cell.fallback as usize;
        rows.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.loc.lat_deg,
            cell.loc.lon_deg,
            cell.loc.alt_m,
            value,
            cell.neighbor_count,
            cell.fallback as u8
        ));
    }
    ctx.write_text("radio_map.csv", &rows)?;

    #[derive(Serialize)]
    struct MapReport {
        meta: ReportMeta,
        mode: KrigingMode,
        grid: crate::kriging::GridSpec,
        cells: usize,
        fallback_cells: usize,
        r0_m: f64,
        m_max: usize,
    }
    let report = MapReport {
        meta: ctx.meta(),
        mode,
        grid,
        cells: map.cells.len(),
        fallback_cells: n_fallback,
        r0_m: ctx.cfg.kriging.r0_m,
        m_max: ctx.cfg.kriging.m_max,
    };
    ctx.write_report("map_report.json", &report)?;
    Ok(())
}
