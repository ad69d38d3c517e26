//! Builds 3D radio maps of received signal power from sparse aerial (UAV)
//! measurements.
//!
//! The crate covers the full chain from raw flight logs to an interpolated
//! volume map:
//!
//! * [`geo`] — geodesic distances, bearings, and two-ray link geometry;
//! * [`antenna`] — gain lookup for measured pattern grids, the analytic
//!   dipole, or an isotropic constant;
//! * [`propagation`] — free-space and two-ray ground-reflection path loss,
//!   received-power prediction, and shadowing extraction;
//! * [`measurement`] — flight-log CSV ingestion and calibration corrections;
//! * [`statistics`] — shadowing distribution fits (Gaussian / skew-normal)
//!   and empirical spatial-correlation estimation with model fitting;
//! * [`kriging`] — semi-variogram evaluation, ordinary-Kriging solves,
//!   cross-validated RMSE, and radio-map grid generation;
//! * [`synth`] — synthetic trajectories and correlated shadowing fields used
//!   as ground truth for the estimators;
//! * [`pipeline`] — configuration, stage orchestration, and artifact output
//!   backing the `radiomap` CLI.

pub mod antenna;
pub mod geo;
pub mod kriging;
pub mod measurement;
pub mod pipeline;
pub mod propagation;
pub mod statistics;
pub mod synth;
