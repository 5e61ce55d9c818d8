//! One driver per CLI subcommand. Each writes its artifacts into `out` and
//! returns the report it serialized. Reports carry no timings, so identical
//! configurations produce identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::carleman::{standard_suite, verification_grid, verify_estimate, Coefficient, Estimate, VerificationReport};
use crate::error::LabError;
use crate::fdgrid::SemiDiscreteField;
use crate::forward::{crosscheck, fdtd_forward, CrossCheckReport};
use crate::geodesics::{check_regularity, max_trace_rate, RayOptions, RegularityReport, TraceRateSummary};
use crate::inversion::{minimize, Diagnostics, IterRecord};
use crate::medium::{validate_medium, ValidationReport};

use super::config::ExperimentConfig;
use super::io::{ensure_dir, write_csv, write_dump, write_field_csv, write_json};
use super::pipeline::{clean_data, problem, residual_certificate, score, ReconstructionErrors, ResidualCertificate};
use super::sweep::{run_stability_sweep, SweepReport};

#[derive(Debug, Clone, Serialize)]
pub struct MediumSummary {
    pub model: &'static str,
    pub parameters: BTreeMap<&'static str, f64>,
}

fn medium_summary(cfg: &ExperimentConfig) -> MediumSummary {
    MediumSummary {
        model: cfg.medium.model.name(),
        parameters: cfg.medium_parameters(),
    }
}

fn dump_both(out: &Path, name: &str, f: &SemiDiscreteField<f64>) -> Result<(), LabError> {
    write_dump(&out.join(format!("{name}.bin")), f)?;
    write_field_csv(&out.join(format!("{name}.csv")), f)
}

#[derive(Debug, Clone, Serialize)]
pub struct MediumReport {
    pub medium: MediumSummary,
    pub validation: ValidationReport,
}

pub fn run_validate_medium(cfg: &ExperimentConfig, out: &Path) -> Result<MediumReport, LabError> {
    ensure_dir(out)?;
    let report = MediumReport {
        medium: medium_summary(cfg),
        validation: validate_medium(&cfg.medium, cfg.sample_density)?,
    };
    write_json(&out.join("medium.json"), &report)?;
    Ok(report)
}

/// Launch points on a `fan x fan` lattice strictly inside `[-X, X]^2`.
pub fn launch_fan(half_width: f64, fan: usize) -> Vec<[f64; 2]> {
    let step = 2.0 * half_width / (fan + 1) as f64;
    (1..=fan)
        .flat_map(|i| (1..=fan).map(move |j| [-half_width + i as f64 * step, -half_width + j as f64 * step]))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicReport {
    pub medium: MediumSummary,
    pub trace_rate: TraceRateSummary,
    pub trace_rate_ok: bool,
    pub regularity: RegularityReport,
    pub amplitude_min: f64,
    pub amplitude_floor: f64,
    pub amplitude_ok: bool,
    pub tau_max: f64,
}

pub fn run_geodesic_report(cfg: &ExperimentConfig, out: &Path) -> Result<GeodesicReport, LabError> {
    ensure_dir(out)?;
    let opts = RayOptions::default();
    let fan = launch_fan(cfg.medium.half_width, cfg.fan);
    let s_max = cfg.medium.n0;
    let trace_rate = max_trace_rate(&cfg.medium, &fan, s_max, &opts)?;
    let regularity = check_regularity(&cfg.medium, &fan, s_max, &opts);
    let clean = clean_data(cfg)?;
    let amp = &clean.amplitude;
    let amplitude_min = amp.a.data.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let report = GeodesicReport {
        medium: medium_summary(cfg),
        trace_rate_ok: trace_rate.max_trace_rate <= trace_rate.bound + 1e-6,
        trace_rate,
        regularity,
        amplitude_min,
        amplitude_floor: amp.a0,
        amplitude_ok: amplitude_min >= amp.a0,
        tau_max: clean.travel.tau.max_abs(),
    };
    dump_both(out, "tau", &clean.travel.tau)?;
    dump_both(out, "amplitude", &amp.a)?;
    write_json(&out.join("geodesics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ForwardReport {
    pub medium: MediumSummary,
    pub horizon: f64,
    pub t1: f64,
    pub r_trunc: usize,
    pub certificate: ResidualCertificate,
    pub crosscheck: CrossCheckReport,
}

pub fn run_forward_crosscheck(cfg: &ExperimentConfig, out: &Path) -> Result<ForwardReport, LabError> {
    ensure_dir(out)?;
    let clean = clean_data(cfg)?;
    for (name, f) in [
        ("w", &clean.data.w),
        ("g0", &clean.data.g0),
        ("g1", &clean.data.g1),
        ("g2", &clean.data.g2),
    ] {
        write_dump(&out.join(format!("{name}.bin")), f)?;
    }
    let certificate = residual_certificate(cfg)?;
    write_csv(&out.join("certificate.csv"), &certificate.levels)?;
    let run = fdtd_forward(&cfg.medium, &cfg.grid, &cfg.fdtd)?;
    let report = ForwardReport {
        medium: medium_summary(cfg),
        horizon: cfg.horizon,
        t1: cfg.t1(),
        r_trunc: cfg.r_trunc,
        certificate,
        crosscheck: crosscheck(&run, &clean.travel, &clean.amplitude),
    };
    write_json(&out.join("forward.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CarlemanSummaryRow {
    pub estimate: Estimate,
    pub field: String,
    pub lambda: f64,
    pub lhs: f64,
    pub balance: f64,
    pub rho: Option<f64>,
    pub weighted_h1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CarlemanReport {
    pub c4: VerificationReport,
    pub c6: VerificationReport,
}

pub fn run_carleman_report(cfg: &ExperimentConfig, out: &Path) -> Result<CarlemanReport, LabError> {
    ensure_dir(out)?;
    let grid = verification_grid::<f64>();
    let suite = standard_suite(&grid);
    let xi = Coefficient::Constant(cfg.suite.xi);
    let s = &cfg.suite;
    let report = CarlemanReport {
        c4: verify_estimate(Estimate::C4, &suite, &s.lambdas, s.alpha, &xi)?,
        c6: verify_estimate(Estimate::C6, &suite, &s.lambdas, s.alpha, &xi)?,
    };
    let rows: Vec<CarlemanSummaryRow> = [&report.c4, &report.c6]
        .iter()
        .flat_map(|r| {
            r.records.iter().map(move |rec| CarlemanSummaryRow {
                estimate: r.estimate,
                field: rec.field.clone(),
                lambda: rec.lambda,
                lhs: rec.lhs,
                balance: rec.balance,
                rho: rec.rho,
                weighted_h1: rec.weighted_h1,
            })
        })
        .collect();
    write_csv(&out.join("carleman.csv"), &rows)?;
    write_json(&out.join("carleman.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct InversionReport {
    pub medium: MediumSummary,
    pub lambda: f64,
    pub alpha: f64,
    pub errors: ReconstructionErrors,
    pub diagnostics: Diagnostics,
}

pub fn run_inversion(cfg: &ExperimentConfig, out: &Path) -> Result<InversionReport, LabError> {
    ensure_dir(out)?;
    let clean = clean_data(cfg)?;
    let p = problem(cfg, clean.data.clone(), clean.amplitude.a0, cfg.lambda)?;
    let result = minimize(&p, cfg.init, &cfg.solver)?;
    let report = InversionReport {
        medium: medium_summary(cfg),
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        errors: score(&result, &clean)?,
        diagnostics: result.diagnostics.clone(),
    };
    write_dump(&out.join("w_hat.bin"), &result.w_hat)?;
    write_dump(&out.join("tau_hat.bin"), &result.tau_hat)?;
    dump_both(out, "n_hat", &result.n_hat)?;
    write_csv::<IterRecord>(&out.join("trace.csv"), &result.trace)?;
    write_json(&out.join("inversion.json"), &report)?;
    Ok(report)
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepReport, LabError> {
    ensure_dir(out)?;
    let report = run_stability_sweep(cfg)?;
    write_csv(&out.join("sweep.csv"), &report.records)?;
    write_json(&out.join("sweep.json"), &report)?;
    Ok(report)
}
