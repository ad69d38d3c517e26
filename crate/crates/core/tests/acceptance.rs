//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime. Criteria 8 and 9 need the converted measurement dataset and
//! skip (with a SKIP line) unless `RADIOMAP_DATASET_CONFIG` points at a
//! pipeline config for it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Distribution;

use radiomap::antenna::AntennaPattern;
use radiomap::geo::{link_geometry, GeoLocation, EARTH_RADIUS_M};
use radiomap::kriging::{
    baseline_rmse, cross_validate, select_neighbors, solve_kriging, SamplePoint, Variogram,
    XvalParams,
};
use radiomap::propagation::{
    pathloss_free_space, pathloss_two_ray, reflection_coefficient, PropagationConfig,
};
use radiomap::statistics::{
    fit_exponential_vertical, fit_gaussian, fit_skew_normal, horizontal_correlation,
    vertical_correlation, CorrelationModel3D, ShadowingFlight, ShadowingStats,
};
use radiomap::synth::{generate_trajectory, ShadowingFieldSampler, TrajectorySpec};

const DEG_PER_M: f64 = 1.0 / (EARTH_RADIUS_M * std::f64::consts::PI / 180.0);

fn paper_model() -> CorrelationModel3D {
    CorrelationModel3D {
        a: 0.3,
        b1: 0.02815,
        b2: 0.2474,
        d_cor_m: 11.24,
        sigma_w2: 6.9 * 6.9,
    }
}

fn loc_at(east_m: f64, north_m: f64, alt_m: f64) -> GeoLocation {
    GeoLocation::new(north_m * DEG_PER_M, east_m * DEG_PER_M, alt_m).unwrap()
}

/// Dense Gauss-Jordan elimination with partial pivoting; the independent
/// oracle for the kriging solver.
fn gauss_jordan_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-13 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        for k in 0..n {
            a[col][k] /= p;
        }
        b[col] /= p;
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in 0..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
    }
    Some(b)
}

#[test]
fn criterion_01_kriging_solver_exactness() {
    let start = Instant::now();
    let v = Variogram::new(paper_model());
    let mut rng = ChaCha20Rng::seed_from_u64(101);

    for instance in 0..1000 {
        let m = rng.gen_range(1..=10usize);
        let pool: Vec<SamplePoint> = (0..m)
            .map(|i| SamplePoint {
                id: i as u64,
                loc: loc_at(
                    rng.gen_range(0.0..200.0),
                    rng.gen_range(0.0..200.0),
                    rng.gen_range(20.0..120.0),
                ),
                value_dbm: rng.gen_range(-100.0..-50.0),
            })
            .collect();
        let target = loc_at(
            rng.gen_range(0.0..200.0),
            rng.gen_range(0.0..200.0),
            rng.gen_range(20.0..120.0),
        );
        let neighbors: Vec<&SamplePoint> = pool.iter().collect();
        let sol = solve_kriging(&v, &target, &neighbors).unwrap();

        // Independent dense solve of the bordered system.
        let mut mat = vec![vec![0.0; m + 1]; m + 1];
        let mut rhs = vec![0.0; m + 1];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    mat[i][j] = v.semivariogram(&pool[i].loc, &pool[j].loc);
                }
            }
            mat[i][m] = 1.0;
            mat[m][i] = 1.0;
            rhs[i] = v.semivariogram(&target, &pool[i].loc);
        }
        rhs[m] = 1.0;
        let oracle = gauss_jordan_solve(mat, rhs).expect("oracle solvable");

        for (k, (got, want)) in sol.weights.iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs() < 1e-8,
                "instance {instance}, weight {k}: {got} vs oracle {want}"
            );
        }
        let sum: f64 = sol.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "instance {instance}: weight sum {sum}");

        // Exact interpolation at a pool location.
        let sol_at_pool = solve_kriging(&v, &pool[0].loc, &neighbors).unwrap();
        assert!(
            (sol_at_pool.predicted_dbm - pool[0].value_dbm).abs() < 1e-8,
            "instance {instance}: {} vs stored {}",
            sol_at_pool.predicted_dbm,
            pool[0].value_dbm
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "runtime {elapsed:?} exceeds 10 s");
    println!("criterion 1 (kriging solver exactness): PASS ({elapsed:.2?})");
}

#[test]
fn criterion_02_semivariogram_identity() {
    let start = Instant::now();
    let v = Variogram::new(paper_model());
    let sill = v.sill_db2();

    let p = loc_at(40.0, 60.0, 50.0);
    assert_eq!(v.semivariogram(&p, &p), 0.0, "gamma at coincident points");

    // Far separation approaches the sill within 1%.
    let a = loc_at(0.0, 0.0, 30.0);
    let b = loc_at(2000.0, 0.0, 230.0); // d_h = 2000 m, d_v = 200 m
    let far = v.semivariogram(&a, &b);
    assert!(
        (far - sill).abs() / sill < 0.01,
        "gamma {far} vs sill {sill} beyond the decorrelation scale"
    );

    // Separability of the product-form model to 1e-12.
    let model = paper_model();
    for (d_v, d_h) in [(0.0, 0.0), (5.0, 3.0), (20.0, 4.5), (60.0, 100.0), (200.0, 2000.0)] {
        let joint = model.eval(d_v, d_h);
        let product = model.eval(d_v, 0.0) * model.eval(0.0, d_h);
        assert!(
            (joint - product).abs() < 1e-12,
            "separability at ({d_v}, {d_h}): {joint} vs {product}"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "runtime {elapsed:?} exceeds 1 s");
    println!("criterion 2 (semi-variogram identity): PASS ({elapsed:.2?})");
}

#[test]
fn criterion_03_two_ray_model_behavior() {
    let start = Instant::now();
    let cfg = PropagationConfig::new(
        3.51e9,
        10.0,
        15.0,
        AntennaPattern::Isotropic(1.0),
        AntennaPattern::Isotropic(1.0),
        10.0,
    )
    .unwrap();
    let bs = GeoLocation::new(0.0, 0.0, 10.0).unwrap();

    // Sweep d_h in [50, 1000] m at h_uav = 70 m.
    let mut d = 50.0;
    let mut curve: Vec<(f64, f64, f64, f64)> = Vec::new(); // (d, two_ray, free_space, envelope)
    while d <= 1000.0 + 1e-9 {
        let uav = loc_at(0.0, d, 70.0);
        let tr = pathloss_two_ray(&cfg, &bs, &uav).unwrap().loss_db;
        let fs = pathloss_free_space(&cfg, &bs, &uav).unwrap().loss_db;
        let geom = link_geometry(&bs, &uav).unwrap();
        let gamma = reflection_coefficient(geom.theta_r, 15.0).unwrap();
        let scale = cfg.wavelength_m / (4.0 * std::f64::consts::PI);
        let env_gain = scale * scale
            * (1.0 / geom.d_3d + gamma.abs() / geom.reflected_path_len).powi(2);
        curve.push((d, tr, fs, -10.0 * env_gain.log10()));
        d += 0.25;
    }

    // At least one fade at least 3 dB below the free-space curve.
    let mut fades = Vec::new();
    for i in 1..curve.len() - 1 {
        let (d, tr, fs, _) = curve[i];
        if tr > curve[i - 1].1 && tr > curve[i + 1].1 && tr - fs >= 3.0 {
            fades.push((d, tr - fs));
        }
    }
    assert!(!fades.is_empty(), "no fade at least 3 dB below free space");
    let deepest = fades.iter().map(|(_, depth)| *depth).fold(0.0, f64::max);
    let last_fade_d = fades.last().unwrap().0;

    // Beyond the last fade the curve converges onto the constructive
    // envelope, which itself is free-space plus a locally constant offset:
    // every constructive peak (local loss minimum) past 200 m sits within
    // 1 dB of the envelope, the curve comes back within 1 dB of it after the
    // last fade, and the envelope offset is constant there.
    for i in 1..curve.len() - 1 {
        let (d, tr, _, env) = curve[i];
        if d > 200.0 && tr < curve[i - 1].1 && tr < curve[i + 1].1 {
            assert!(
                (tr - env).abs() <= 1.0,
                "constructive peak at {d} m is {} dB off the envelope",
                tr - env
            );
        }
    }
    let tail: Vec<&(f64, f64, f64, f64)> =
        curve.iter().filter(|(d, ..)| *d > last_fade_d + 1.0).collect();
    assert!(!tail.is_empty());
    let closest = tail
        .iter()
        .map(|(_, tr, _, env)| (tr - env).abs())
        .fold(f64::INFINITY, f64::min);
    assert!(
        closest <= 1.0,
        "curve never returns within 1 dB of the envelope after the last fade ({closest} dB)"
    );
    let offsets: Vec<f64> = tail.iter().map(|(_, _, fs, env)| env - fs).collect();
    let spread = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - offsets.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.2, "envelope offset varies {spread} dB beyond the last fade");

    // Reflection coefficient bounds on a 1e4-point sweep plus the grazing limit.
    let mut rng = ChaCha20Rng::seed_from_u64(303);
    for _ in 0..10_000 {
        let theta = rng.gen_range(1e-9..std::f64::consts::FRAC_PI_2);
        let eps = rng.gen_range(1.0 + 1e-6..81.0);
        let g = reflection_coefficient(theta, eps).unwrap();
        assert!(g.abs() <= 1.0 + 1e-12, "|Gamma| = {} at ({theta}, {eps})", g.abs());
    }
    let grazing = reflection_coefficient(1e-5, 15.0).unwrap();
    assert!((grazing + 1.0).abs() < 1e-3, "Gamma at grazing: {grazing}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "runtime {elapsed:?} exceeds 5 s");
    println!(
        "criterion 3 (two-ray model behavior, deepest fade {deepest:.2} dB): PASS ({elapsed:.2?})"
    );
}

#[test]
fn criterion_04_correlation_model_fixtures() {
    let start = Instant::now();
    let model = paper_model();

    // Horizontal crossing of 0.5 at 4.5 +- 0.5 m (bisection).
    let f = |d: f64| model.eval(0.0, d) - 0.5;
    let (mut lo, mut hi) = (0.1, 50.0);
    assert!(f(lo) > 0.0 && f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let crossing = 0.5 * (lo + hi);
    assert!(
        (crossing - 4.5).abs() <= 0.5,
        "R(0, d) crosses 0.5 at {crossing} m, expected 4.5 +- 0.5"
    );

    // Vertical half-correlation distance is exact by construction.
    let at_dcor = model.eval(11.24, 0.0);
    assert!(
        (at_dcor - 0.5).abs() < 1e-12,
        "R(d_cor, 0) = {at_dcor}, expected 0.5 within 1e-12"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "runtime {elapsed:?} exceeds 1 s");
    println!(
        "criterion 4 (correlation-model fixtures, crossing at {crossing:.2} m): PASS ({elapsed:.2?})"
    );
}

fn five_flight_spec() -> TrajectorySpec {
    TrajectorySpec {
        origin_lat_deg: 35.72,
        origin_lon_deg: -78.70,
        width_m: 160.0,
        depth_m: 160.0,
        leg_spacing_m: 40.0,
        sample_spacing_m: 2.0,
        heights_m: vec![30.0, 50.0, 70.0, 90.0, 110.0],
    }
}

#[test]
fn criterion_05_estimator_recovery_on_synthetic_fields() {
    let start = Instant::now();
    let model = paper_model();
    let paths = generate_trajectory(&five_flight_spec()).unwrap();
    let all_locations: Vec<GeoLocation> = paths
        .iter()
        .flat_map(|p| p.locations.iter().copied())
        .collect();
    let sampler = ShadowingFieldSampler::new(&all_locations, &model).unwrap();

    let n_seeds = 20;
    let mut d_cor_fits = Vec::new();
    let mut per_seed_curves = Vec::new();
    for seed in 0..n_seeds {
        let w = sampler.sample(seed as u64);
        let mut flights = Vec::new();
        let mut offset = 0;
        for path in &paths {
            let n = path.locations.len();
            flights.push(ShadowingFlight::new(
                path.height_m,
                path.locations.clone(),
                w[offset..offset + n].to_vec(),
            ));
            offset += n;
        }

        let horizontal = horizontal_correlation(&flights, 2.0).unwrap();
        per_seed_curves.push(horizontal);

        let vertical = vertical_correlation(&flights, 3.0).unwrap();
        let d_cor = fit_exponential_vertical(&vertical.averages_by_offset()).unwrap();
        d_cor_fits.push(d_cor);
    }

    d_cor_fits.sort_by(|a, b| a.total_cmp(b));
    let median_d_cor = d_cor_fits[n_seeds / 2];
    assert!(
        (median_d_cor - 11.24).abs() / 11.24 <= 0.15,
        "median fitted d_cor {median_d_cor} m vs injected 11.24 m (15% tolerance); fits {d_cor_fits:?}"
    );

    // Per-bin median of the horizontal curve vs the injected model, for bins
    // with at least 200 pairs (bin geometry is seed-independent).
    let reference = &per_seed_curves[0];
    let mut checked = 0;
    for (bin, count) in reference.counts.iter().enumerate() {
        if *count < 200 {
            continue;
        }
        let mut values: Vec<f64> = per_seed_curves.iter().map(|c| c.values[bin]).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        let median = values[values.len() / 2];
        let center = reference.bin_centers_m[bin];
        let expected = model.eval(0.0, center);
        assert!(
            (median - expected).abs() <= 0.1,
            "bin at {center:.1} m ({count} pairs): median correlation {median:.3} vs model {expected:.3}"
        );
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} well-populated bins checked");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 180.0, "runtime {elapsed:?} exceeds 3 min");
    println!(
        "criterion 5 (estimator recovery: median d_cor {median_d_cor:.2} m, {checked} bins within 0.1): PASS ({elapsed:.2?})"
    );
}

/// Builds the criterion-6 scenario: flights at 30/50/90 m over an identical
/// 2D track, free-space trend from a far BS, one correlated field draw.
fn xval_scenario(seed: u64) -> (Vec<SamplePoint>, Vec<SamplePoint>, Vec<SamplePoint>, Vec<SamplePoint>, ShadowingStats) {
    let spec = TrajectorySpec {
        heights_m: vec![30.0, 50.0, 90.0],
        ..five_flight_spec()
    };
    let model = paper_model();
    let paths = generate_trajectory(&spec).unwrap();
    let all_locations: Vec<GeoLocation> = paths
        .iter()
        .flat_map(|p| p.locations.iter().copied())
        .collect();
    let sampler = ShadowingFieldSampler::new(&all_locations, &model).unwrap();
    let w = sampler.sample(seed);

    // Far BS keeps the deterministic free-space trend nearly flat over the
    // site, isolating the shadowing-correlation effect under test.
    let cfg = PropagationConfig::new(
        3.51e9,
        10.0,
        15.0,
        AntennaPattern::Isotropic(1.0),
        AntennaPattern::Isotropic(1.0),
        10.0,
    )
    .unwrap();
    let bs = loc_at(0.0, -5000.0, 10.0);

    let mut by_height: Vec<Vec<SamplePoint>> = Vec::new();
    let mut target_w = Vec::new();
    let mut offset = 0;
    let mut next_id = 0u64;
    for path in &paths {
        let mut samples = Vec::new();
        for (i, loc) in path.locations.iter().enumerate() {
            let pl = pathloss_free_space(&cfg, &bs, loc).unwrap().loss_db;
            let w_i = w[offset + i];
            if path.height_m == 30.0 {
                target_w.push(w_i);
            }
            samples.push(SamplePoint {
                id: next_id,
                loc: *loc,
                value_dbm: cfg.tx_power_dbm - pl + w_i,
            });
            next_id += 1;
        }
        offset += path.locations.len();
        by_height.push(samples);
    }

    // Eq. 25 baseline: the empirical shadowing std of the target flight.
    let (mean, std) = fit_gaussian(&target_w).unwrap();
    let stats = ShadowingStats {
        mean_db: mean,
        std_db: std,
        alpha: 0.0,
        nmse_gaussian: 0.0,
        nmse_skewed: 0.0,
    };
    let targets = by_height[0].clone();
    let (pool50, pool90) = (by_height[1].clone(), by_height[2].clone());
    (targets.clone(), targets, pool50, pool90, stats)
}

#[test]
fn criterion_06_kriging_beats_baseline_until_60m_offset() {
    let start = Instant::now();
    let (targets, pool30, pool50, pool90, stats) = xval_scenario(606);
    let baseline = baseline_rmse(&stats);
    let v = Variogram::new(paper_model());

    let run = |pool: &[SamplePoint], train_m: usize, seed: u64| {
        let params = XvalParams {
            train_m,
            validate_n0: 50,
            r0_m: 100.0,
            m_max: 50,
            iterations: 1000,
            seed,
        };
        cross_validate(&v, pool, &targets, &params).unwrap()
    };

    // Vertical offset 0 and 20 m: Kriging beats the perfect-path-loss
    // baseline for M >= 100.
    let offset0_m100 = run(&pool30, 100, 1);
    let offset0_m250 = run(&pool30, 250, 2);
    let offset20_m100 = run(&pool50, 100, 3);
    for (label, summary) in [
        ("offset 0 m, M=100", &offset0_m100),
        ("offset 0 m, M=250", &offset0_m250),
        ("offset 20 m, M=100", &offset20_m100),
    ] {
        assert!(
            summary.median_db < baseline,
            "{label}: median RMSE {:.3} dB not below baseline {:.3} dB",
            summary.median_db,
            baseline
        );
    }

    // Vertical offset 60 m: the correlation is too weak and Kriging no
    // longer wins.
    let offset60 = run(&pool90, 100, 4);
    assert!(
        offset60.median_db >= baseline - 0.5,
        "offset 60 m: median RMSE {:.3} dB unexpectedly beats baseline {:.3} dB by more than 0.5",
        offset60.median_db,
        baseline
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "runtime {elapsed:?} exceeds 5 min");
    println!(
        "criterion 6 (kriging vs baseline {:.2} dB: offsets 0/20/60 m -> {:.2}/{:.2}/{:.2} dB): PASS ({elapsed:.2?})",
        baseline, offset0_m100.median_db, offset20_m100.median_db, offset60.median_db
    );
}

fn skew_normal_draws(n: usize, alpha: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    (0..n)
        .map(|_| {
            let z0: f64 = normal.sample(&mut rng);
            let z1: f64 = normal.sample(&mut rng);
            delta * z0.abs() + (1.0 - delta * delta).sqrt() * z1
        })
        .collect()
}

#[test]
fn criterion_07_skew_normal_fitting() {
    let start = Instant::now();

    let skewed = skew_normal_draws(100_000, -2.0, 5);
    let stats = fit_skew_normal(&skewed, 100).unwrap();
    assert!(
        (-2.5..=-1.5).contains(&stats.alpha),
        "recovered alpha {} outside [-2.5, -1.5]",
        stats.alpha
    );
    assert!(
        stats.nmse_skewed < stats.nmse_gaussian,
        "skewed NMSE {} not below Gaussian NMSE {}",
        stats.nmse_skewed,
        stats.nmse_gaussian
    );

    let symmetric = skew_normal_draws(100_000, 0.0, 5);
    let stats0 = fit_skew_normal(&symmetric, 100).unwrap();
    assert!(stats0.alpha.abs() < 0.3, "alpha {} on symmetric input", stats0.alpha);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "runtime {elapsed:?} exceeds 30 s");
    println!(
        "criterion 7 (skew-normal fitting: alpha {:.2} / {:.2}): PASS ({elapsed:.2?})",
        stats.alpha, stats0.alpha
    );
}

/// Loads the dataset-gated pipeline config when present.
fn dataset_flights() -> Option<Vec<ShadowingFlight>> {
    let config_path = std::env::var("RADIOMAP_DATASET_CONFIG").ok()?;
    let (cfg, _raw) = radiomap::pipeline::load_config(std::path::Path::new(&config_path)).ok()?;
    let prop = cfg.propagation_config().ok()?;
    let bs = GeoLocation::new(cfg.site.bs_lat_deg, cfg.site.bs_lon_deg, cfg.site.bs_height_m)
        .ok()?;
    let spec = cfg.calibration.to_spec();
    let mut flights = Vec::new();
    for entry in &cfg.data.flights {
        let flight = radiomap::measurement::load_measurements(
            &cfg.resolve_path(&entry.path),
            &spec,
            &entry.path,
            entry.height_m,
        )
        .ok()?;
        let extracted = radiomap::propagation::extract_shadowing(
            &prop,
            &bs,
            &flight.samples,
            cfg.propagation.model,
        );
        let mut locations = Vec::new();
        let mut w = Vec::new();
        for (s, res) in flight.samples.iter().zip(extracted) {
            if let Ok(value) = res {
                locations.push(s.loc);
                w.push(value);
            }
        }
        flights.push(ShadowingFlight::new(entry.height_m, locations, w));
    }
    Some(flights)
}

#[test]
fn criterion_08_dataset_table2_reproduction() {
    let Some(flights) = dataset_flights() else {
        println!("criterion 8 (shadowing statistics reproduction): SKIP (dataset not converted; set RADIOMAP_DATASET_CONFIG)");
        return;
    };
    // Reference per-height shadowing statistics from the measurement
    // campaign: (height, mean dB, std dB, alpha).
    let reference = [
        (30.0, -4.26, 7.14, -2.13),
        (50.0, -4.57, 6.45, -2.26),
        (70.0, -0.34, 6.53, -2.57),
        (90.0, -0.32, 6.90, -2.08),
        (110.0, -0.27, 6.83, -2.27),
    ];
    for (height, mean, std, alpha) in reference {
        let flight = flights
            .iter()
            .find(|f| f.height_m == height)
            .unwrap_or_else(|| panic!("no flight at {height} m"));
        let (m, s) = fit_gaussian(&flight.w_db).unwrap();
        assert!((m - mean).abs() <= 0.5, "{height} m: mean {m} vs {mean}");
        assert!((s - std).abs() <= 0.5, "{height} m: std {s} vs {std}");
        let stats = fit_skew_normal(&flight.w_db, 100).unwrap();
        assert!((stats.alpha - alpha).abs() <= 0.5, "{height} m: alpha {} vs {alpha}", stats.alpha);
    }
    println!("criterion 8 (shadowing statistics reproduction): PASS");
}

#[test]
fn criterion_09_dataset_vertical_correlation_reproduction() {
    let Some(flights) = dataset_flights() else {
        println!("criterion 9 (vertical correlation reproduction): SKIP (dataset not converted; set RADIOMAP_DATASET_CONFIG)");
        return;
    };
    let vc = vertical_correlation(&flights, 3.0).unwrap();
    let heights = &vc.heights_m;
    let idx = |h: f64| heights.iter().position(|x| *x == h).unwrap();
    let got_30_50 = vc.values[idx(30.0)][idx(50.0)];
    assert!(
        (got_30_50 - 0.247).abs() <= 0.05,
        "30x50 m correlation {got_30_50} vs 0.247 +- 0.05"
    );
    // Reference sign pattern of the height-pair correlation table.
    let reference: [(f64, f64, f64); 10] = [
        (30.0, 50.0, 0.247),
        (30.0, 70.0, 0.080),
        (30.0, 90.0, -0.024),
        (30.0, 110.0, -0.040),
        (50.0, 70.0, 0.214),
        (50.0, 90.0, 0.057),
        (50.0, 110.0, -0.002),
        (70.0, 90.0, 0.307),
        (70.0, 110.0, 0.172),
        (90.0, 110.0, 0.409),
    ];
    for (ha, hb, want) in reference {
        let got = vc.values[idx(ha)][idx(hb)];
        assert_eq!(
            got.signum(),
            want.signum(),
            "{ha}x{hb} m: sign of {got} vs reference {want}"
        );
    }
    // Ordering: within each row, correlation decreases as the height gap grows.
    for row in 0..heights.len() {
        let mut offsets: Vec<(f64, f64)> = (0..heights.len())
            .filter(|c| *c != row)
            .map(|c| ((heights[c] - heights[row]).abs(), vc.values[row][c]))
            .collect();
        offsets.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in offsets.windows(2) {
            assert!(
                pair[0].1 >= pair[1].1 - 0.08,
                "row {} m: correlation not decreasing with offset: {:?}",
                heights[row],
                offsets
            );
        }
    }
    println!("criterion 9 (vertical correlation reproduction): PASS");
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();

    // Criterion-5 machinery: the same scenario synthesized twice gives
    // byte-identical CSV output.
    use radiomap::propagation::PropagationModel;
    use radiomap::synth::{synthesize_rsrp, SyntheticScenario};
    let scenario = SyntheticScenario {
        cfg: PropagationConfig::new(
            3.51e9,
            10.0,
            15.0,
            AntennaPattern::Isotropic(1.0),
            AntennaPattern::Isotropic(1.0),
            10.0,
        )
        .unwrap(),
        bs: loc_at(0.0, -5000.0, 10.0),
        model: paper_model(),
        trajectory: TrajectorySpec {
            width_m: 80.0,
            heights_m: vec![30.0, 50.0],
            ..five_flight_spec()
        },
        pathloss_model: PropagationModel::FreeSpace,
        mean_offsets_db: vec![],
        sample_interval_s: 0.4,
        seed: 42,
    };
    let dir = tempfile::tempdir().unwrap();
    let mut rendered = Vec::new();
    for run in 0..2 {
        let dataset = synthesize_rsrp(&scenario).unwrap();
        let mset = dataset.to_measurement_set();
        let mut bytes = Vec::new();
        for flight in &mset.flights {
            let path = dir.path().join(format!("run{run}_{}.csv", flight.id));
            radiomap::measurement::write_flight_csv(&path, &flight.samples, Some("determinism"))
                .unwrap();
            bytes.extend(std::fs::read(&path).unwrap());
        }
        rendered.push(bytes);
    }
    assert_eq!(rendered[0], rendered[1], "synthetic dataset not byte-identical across runs");

    // Criterion-6 machinery: the same cross-validation run twice gives an
    // identical serialized summary.
    let (targets, pool30, _, _, _) = xval_scenario(606);
    let v = Variogram::new(paper_model());
    let params = XvalParams {
        train_m: 100,
        validate_n0: 50,
        r0_m: 100.0,
        m_max: 50,
        iterations: 200,
        seed: 7,
    };
    let a = serde_json::to_vec(&cross_validate(&v, &pool30, &targets, &params).unwrap()).unwrap();
    let b = serde_json::to_vec(&cross_validate(&v, &pool30, &targets, &params).unwrap()).unwrap();
    assert_eq!(a, b, "cross-validation summary not byte-identical across runs");

    let elapsed = start.elapsed();
    println!("criterion 10 (determinism): PASS ({elapsed:.2?})");
}

#[test]
fn neighbor_selection_stays_deterministic_under_ties() {
    // Supporting check for the solver criteria: equidistant neighbors
    // resolve by id, so repeated runs pick identical sets.
    let pool: Vec<SamplePoint> = (0..4)
        .map(|i| SamplePoint {
            id: 3 - i as u64,
            loc: loc_at(if i % 2 == 0 { 10.0 } else { -10.0 }, 0.0, 30.0),
            value_dbm: -70.0,
        })
        .collect();
    let target = loc_at(0.0, 0.0, 30.0);
    let picked = select_neighbors(&target, &pool, 50.0, 2).unwrap();
    let ids: Vec<u64> = picked.iter().map(|s| s.id).collect();
    assert_eq!(ids, vec![0, 1]);
}
