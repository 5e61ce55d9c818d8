//! Experiment harness: configuration, calibrated noise, the δ-sweep with its
//! Hölder-law fit, verification drivers and persistence.

pub mod config;
pub mod drivers;
pub mod io;
pub mod noise;
pub mod pipeline;
pub mod sweep;

pub use config::ExperimentConfig;
pub use drivers::{
    run_carleman_report, run_forward_crosscheck, run_geodesic_report, run_inversion, run_sweep,
    run_validate_medium,
};
pub use noise::inject_noise;
pub use pipeline::{clean_data, residual_certificate, CleanData, ResidualCertificate};
pub use sweep::{holder_bound, lambda_for, run_stability_sweep, StabilityRecord, SweepReport};
