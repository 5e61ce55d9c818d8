use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pwcip::error::LabError;
use pwcip::lab::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pwcip", version, about = "Plane-wave coefficient inverse problem laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed; overrides `sweep.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the medium against the admissible class.
    ValidateMedium(Common),
    /// Trace-rate bound, regularity and travel-time/amplitude fields.
    Geodesics(Common),
    /// Transformed data, residual certificate and the FDTD cross-check.
    Forward(Common),
    /// Numerical check of both Carleman estimates.
    Carleman(Common),
    /// Noiseless inversion scored against the truth.
    Invert(Common),
    /// Noise sweep with the Hölder-law fit.
    Sweep(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig, LabError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, LabError> {
    let common = match &cli.command {
        Command::ValidateMedium(c)
        | Command::Geodesics(c)
        | Command::Forward(c)
        | Command::Carleman(c)
        | Command::Invert(c)
        | Command::Sweep(c) => c.clone(),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::InvalidKey {
                key: "--threads".into(),
                reason: e.to_string(),
            })?;
    }
    let cfg = load(&common)?;
    let out = cfg.output_dir.clone();
    let passed = match cli.command {
        Command::ValidateMedium(_) => {
            let r = lab::run_validate_medium(&cfg, &out)?;
            println!("medium {}: {}", r.medium.model, if r.validation.passed { "admissible" } else { "not admissible" });
            r.validation.passed
        }
        Command::Geodesics(_) => {
            let r = lab::run_geodesic_report(&cfg, &out)?;
            println!(
                "max trace rate {:.6} (bound {:.3}), min A {:.6e} (floor {:.6e}), regularity {}",
                r.trace_rate.max_trace_rate, r.trace_rate.bound, r.amplitude_min, r.amplitude_floor, r.regularity.passed
            );
            r.trace_rate_ok && r.amplitude_ok && r.regularity.passed
        }
        Command::Forward(_) => {
            let r = lab::run_forward_crosscheck(&cfg, &out)?;
            println!(
                "residual order {:.3}, arrivals ok {:.3}, plateau ok {:.3}",
                r.certificate.order(),
                r.crosscheck.arrival_ok_fraction,
                r.crosscheck.amplitude_ok_fraction
            );
            true
        }
        Command::Carleman(_) => {
            let r = lab::run_carleman_report(&cfg, &out)?;
            println!(
                "C4 lambda0 {:?} C {:?} min slope {:?}; C6 lambda0 {:?} C {:?}",
                r.c4.lambda0, r.c4.constant, r.c4.min_clean_slope, r.c6.lambda0, r.c6.constant
            );
            r.c4.constant.is_some() && r.c6.constant.is_some()
        }
        Command::Invert(_) => {
            let r = lab::run_inversion(&cfg, &out)?;
            println!(
                "relative n error {:.4} (n = 1 gives {:.4}) after {} iterations",
                r.errors.n_relative, r.errors.n_relative_flat, r.diagnostics.iterations
            );
            true
        }
        Command::Sweep(_) => {
            let r = lab::run_sweep(&cfg, &out)?;
            for f in &r.fits {
                println!("{}: slope {:.3}, C2 {:.4e}, monotone {}", f.quantity, f.slope, f.c2, f.monotone);
            }
            r.passed
        }
    };
    Ok(passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
