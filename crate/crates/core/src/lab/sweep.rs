//! Noise-level sweep and the Hölder-law fit.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::LabError;
use crate::inversion::{initial_state, InversionResult};

use super::config::ExperimentConfig;
use super::noise::inject_noise;
use super::pipeline::{
    clean_data, invert_from, log_log_fit, problem, score, stability_norms, state_of, CleanData,
    ReconstructionErrors,
};

/// Slope range accepted as consistent with the `δ^{1/3} ln(1/δ)` law.
pub const SLOPE_RANGE: (f64, f64) = (0.6, 1.4);

/// `λ(δ) = ln(1/δ) / 3`, clamped to `[1, cap]`.
pub fn lambda_for(delta: f64, cap: f64) -> f64 {
    ((1.0 / delta).ln() / 3.0).clamp(1.0, cap)
}

/// `δ^{1/3} ln(1/δ)`.
pub fn holder_bound(delta: f64) -> f64 {
    delta.cbrt() * (1.0 / delta).ln()
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRecord {
    pub delta: f64,
    pub lambda: f64,
    pub bound: f64,
    /// Reported errors (floor-subtracted when enabled): `w` in
    /// `H1h(Q_{h,1/α})`, `τ` in `H1h(Ω)`, `n` in `L2h(Ω)`.
    pub err_w: f64,
    pub err_tau: f64,
    pub err_n: f64,
    /// Errors of the noisy reconstruction against the truth.
    pub raw_w: f64,
    pub raw_tau: f64,
    pub raw_n: f64,
    /// Errors of the noiseless reconstruction at the same `λ`.
    pub floor_w: f64,
    pub floor_tau: f64,
    pub floor_n: f64,
    /// `exp(intercept)` of the fit of each error column.
    pub fitted_c2_w: f64,
    pub fitted_c2_tau: f64,
    pub fitted_c2_n: f64,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderFit {
    pub quantity: &'static str,
    pub slope: f64,
    pub intercept: f64,
    pub c2: f64,
    /// Errors never increase as `δ` decreases.
    pub monotone: bool,
    pub slope_in_range: bool,
    /// Every error lies on or below `C2 b(δ)^slope`.
    pub all_below: bool,
    /// Smallest `C` with `error ≤ C b(δ)` at every `δ` (exponent one).
    pub envelope_c2: f64,
}

impl HolderFit {
    pub fn passed(&self) -> bool {
        self.monotone && self.slope_in_range && self.all_below
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub model: &'static str,
    pub seed: u64,
    pub floor_subtraction: bool,
    pub records: Vec<StabilityRecord>,
    pub fits: Vec<HolderFit>,
    /// Noiseless reconstruction at the first `λ` against the truth.
    pub baseline: ReconstructionErrors,
    pub passed: bool,
}

fn fit(quantity: &'static str, bounds: &[f64], errors: &[f64]) -> HolderFit {
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let envelope_c2 = errors
        .iter()
        .zip(bounds)
        .fold(0.0f64, |m, (e, b)| m.max(e / b));
    if errors.iter().any(|&e| !(e > 0.0)) || errors.len() < 2 {
        return HolderFit {
            quantity,
            slope: f64::NAN,
            intercept: f64::NAN,
            c2: f64::NAN,
            monotone,
            slope_in_range: false,
            all_below: false,
            envelope_c2,
        };
    }
    let (slope, intercept) = log_log_fit(bounds, errors);
    let c2 = intercept.exp();
    let all_below = errors
        .iter()
        .zip(bounds)
        .all(|(e, b)| *e <= c2 * b.powf(slope) * (1.0 + 1e-12));
    HolderFit {
        quantity,
        slope,
        intercept,
        c2,
        monotone,
        slope_in_range: (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&slope),
        all_below,
        envelope_c2,
    }
}

struct Entry {
    delta: f64,
    lambda: f64,
    noisy: InversionResult<f64>,
    reference: InversionResult<f64>,
}

fn column(records: &[StabilityRecord], pick: fn(&StabilityRecord) -> f64) -> Vec<f64> {
    records.iter().map(pick).collect()
}

/// Runs the sweep on `clean`.
///
/// Noiseless solutions are computed once per `λ(δ)`: the first from the
/// configured initialization with `clean_iter` iterations, each later one
/// continued from its predecessor with `noisy_iter` iterations. Every noisy
/// run starts from the noiseless solution at its `λ` and takes `noisy_iter`
/// iterations; the floor reference takes the same iterations on clean data,
/// so the subtraction isolates the effect of the noise.
pub fn run_stability_sweep_on(cfg: &ExperimentConfig, clean: &CleanData) -> Result<SweepReport, LabError> {
    let mut deltas = cfg.sweep.deltas.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    deltas.dedup();
    let a0 = clean.amplitude.a0;
    let s = &cfg.sweep;

    let mut starts = Vec::with_capacity(deltas.len());
    let mut baseline = None;
    let mut prev: Option<InversionResult<f64>> = None;
    for &delta in &deltas {
        let lambda = lambda_for(delta, s.lambda_cap);
        let p = problem(cfg, clean.data.clone(), a0, lambda)?;
        let result = match &prev {
            None => invert_from(&p, initial_state(&p, cfg.init), &cfg.solver, s.clean_iter)?,
            Some(r) => invert_from(&p, state_of(r), &cfg.solver, s.noisy_iter)?,
        };
        if baseline.is_none() {
            baseline = Some(score(&result, clean)?);
        }
        starts.push((delta, lambda, state_of(&result)));
        prev = Some(result);
    }

    let entries: Vec<Entry> = starts
        .into_par_iter()
        .enumerate()
        .map(|(idx, (delta, lambda, start))| {
            let noisy_data = inject_noise(&clean.data, delta, cfg.seed.wrapping_add(idx as u64))?;
            let pn = problem(cfg, noisy_data, a0, lambda)?;
            let pc = problem(cfg, clean.data.clone(), a0, lambda)?;
            Ok(Entry {
                delta,
                lambda,
                noisy: invert_from(&pn, start.clone(), &cfg.solver, s.noisy_iter)?,
                reference: invert_from(&pc, start, &cfg.solver, s.noisy_iter)?,
            })
        })
        .collect::<Result<_, LabError>>()?;

    let mut records = Vec::with_capacity(entries.len());
    for e in &entries {
        let raw = score(&e.noisy, clean)?;
        let floor = score(&e.reference, clean)?;
        let sub = stability_norms(
            (&e.noisy.w_hat, &e.reference.w_hat),
            (&e.noisy.tau_hat, &e.reference.tau_hat),
            (&e.noisy.n_hat, &e.reference.n_hat),
        )?;
        let [err_w, err_tau, err_n] = if s.floor_subtraction {
            sub
        } else {
            [raw.w_h1_window, raw.tau_h1, raw.n_l2]
        };
        records.push(StabilityRecord {
            delta: e.delta,
            lambda: e.lambda,
            bound: holder_bound(e.delta),
            err_w,
            err_tau,
            err_n,
            raw_w: raw.w_h1_window,
            raw_tau: raw.tau_h1,
            raw_n: raw.n_l2,
            floor_w: floor.w_h1_window,
            floor_tau: floor.tau_h1,
            floor_n: floor.n_l2,
            fitted_c2_w: f64::NAN,
            fitted_c2_tau: f64::NAN,
            fitted_c2_n: f64::NAN,
            iterations: e.noisy.diagnostics.iterations,
            objective: e.noisy.diagnostics.objective.total,
        });
    }

    let bounds = column(&records, |r| r.bound);
    let fits = vec![
        fit("w_h1_window", &bounds, &column(&records, |r| r.err_w)),
        fit("tau_h1", &bounds, &column(&records, |r| r.err_tau)),
        fit("n_l2", &bounds, &column(&records, |r| r.err_n)),
    ];
    for r in &mut records {
        r.fitted_c2_w = fits[0].c2;
        r.fitted_c2_tau = fits[1].c2;
        r.fitted_c2_n = fits[2].c2;
    }
    let passed = fits.iter().all(HolderFit::passed);
    Ok(SweepReport {
        model: cfg.medium.model.name(),
        seed: cfg.seed,
        floor_subtraction: s.floor_subtraction,
        records,
        fits,
        baseline: baseline.expect("at least one delta"),
        passed,
    })
}

pub fn run_stability_sweep(cfg: &ExperimentConfig) -> Result<SweepReport, LabError> {
    run_stability_sweep_on(cfg, &clean_data(cfg)?)
}
