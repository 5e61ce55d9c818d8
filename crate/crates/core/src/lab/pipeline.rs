//! Clean data along the optics route, the residual certificate and single
//! inversions scored against the truth.

use serde::Serialize;

use crate::carleman::{CarlemanParams, Coefficient};
use crate::error::LabError;
use crate::fdgrid::{norm, Domain, GridSpec, Norm, SemiDiscreteField};
use crate::forward::{extract_cip_data, optics_forward, transform_chain, TransformedData};
use crate::geodesics::{
    amplitude_field, higher_amplitudes, travel_time_field, AmplitudeField, RayOptions, TravelTimeField,
};
use crate::inversion::{
    minimize_from, residuals, AdmissibleSet, InversionProblem, InversionResult, PenaltyWeights, SolverOptions,
    State,
};
use crate::medium::MediumSpec;
use crate::scalar::linear_fit;

use super::config::ExperimentConfig;

/// Rays, amplitudes and transformed data for one medium on one grid.
#[derive(Debug, Clone)]
pub struct CleanData {
    pub travel: TravelTimeField<f64>,
    pub amplitude: AmplitudeField<f64>,
    pub data: TransformedData<f64>,
    /// `n` sampled on `Ω_h`.
    pub n_true: SemiDiscreteField<f64>,
}

pub fn clean_data_on(
    medium: &MediumSpec<f64>,
    grid: &GridSpec<f64>,
    horizon: f64,
    r_trunc: usize,
) -> Result<CleanData, LabError> {
    let opts = RayOptions::default();
    let travel = travel_time_field(medium, grid, &opts)?;
    let mut amplitude = amplitude_field(medium, grid, &travel)?;
    amplitude.alphas = higher_amplitudes(medium, grid, &amplitude, &travel, r_trunc, &opts)?;
    let field = optics_forward(grid, &travel, &amplitude, horizon);
    let cip = extract_cip_data(&field);
    let data = transform_chain(&field, &cip, &travel, grid, medium.n0)?;
    let n_true = SemiDiscreteField::from_fn(grid, Domain::Omega, |x, y, z, _| medium.eval_n(&[x, y, z]));
    Ok(CleanData {
        travel,
        amplitude,
        data,
        n_true,
    })
}

pub fn clean_data(cfg: &ExperimentConfig) -> Result<CleanData, LabError> {
    clean_data_on(&cfg.medium, &cfg.grid, cfg.horizon, cfg.r_trunc)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateLevel {
    pub factor: usize,
    pub z_samples: usize,
    pub t_samples: usize,
    /// `‖R1‖_{L2h(Q)}`.
    pub r1: f64,
    /// `‖R2‖_{L2h(Ω)}`.
    pub r2: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualCertificate {
    pub model: &'static str,
    pub levels: Vec<CertificateLevel>,
    /// `log2(|s1 - s2| / |s2 - s3|)` per consecutive triple of levels.
    pub observed_orders: Vec<f64>,
    /// Fitted limit `s_inf` of the sums from the last triple (Richardson).
    pub extrapolated_floor: f64,
}

impl ResidualCertificate {
    pub fn order(&self) -> f64 {
        *self.observed_orders.last().expect("at least three levels")
    }
}

/// Residuals of the optics-generated `(w, τ)` on successively doubled z and
/// t samplings. The sums converge to the truncation floor of the expansion;
/// the observed order is measured on successive differences, so the unknown
/// floor cancels.
pub fn residual_certificate(cfg: &ExperimentConfig) -> Result<ResidualCertificate, LabError> {
    let mut levels = Vec::new();
    for &f in &cfg.refinements {
        let grid = cfg.grid.refined(f);
        let clean = clean_data_on(&cfg.medium, &grid, cfg.horizon, cfg.r_trunc)?;
        let (r1, r2) = residuals(&clean.data.w, &clean.travel.tau, clean.amplitude.a0)?;
        let r1 = norm(&r1, Norm::L2hQ)?;
        let r2 = norm(&r2, Norm::L2hOmega)?;
        levels.push(CertificateLevel {
            factor: f,
            z_samples: grid.z_samples,
            t_samples: grid.t_samples,
            r1,
            r2,
            sum: r1 + r2,
        });
    }
    let s: Vec<f64> = levels.iter().map(|l| l.sum).collect();
    let observed_orders = s
        .windows(3)
        .map(|w| ((w[0] - w[1]).abs() / (w[1] - w[2]).abs()).log2())
        .collect::<Vec<_>>();
    let n = s.len();
    let p = *observed_orders.last().expect("three levels");
    let ratio = 2f64.powf(p);
    let extrapolated_floor = s[n - 1] + (s[n - 1] - s[n - 2]) / (ratio - 1.0);
    Ok(ResidualCertificate {
        model: cfg.medium.model.name(),
        levels,
        observed_orders,
        extrapolated_floor,
    })
}

/// Errors of a reconstruction, all against the truth.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReconstructionErrors {
    /// `‖n̂ - n‖_{L2h(Ω)} / ‖n‖_{L2h(Ω)}`.
    pub n_relative: f64,
    /// The same for the constant-medium guess `n ≡ 1`.
    pub n_relative_flat: f64,
    /// `‖ŵ - w‖_{H1h(Q_{h,1/α})}`.
    pub w_h1_window: f64,
    /// `‖τ̂ - τ‖_{H1h(Ω)}`.
    pub tau_h1: f64,
    /// `‖n̂ - n‖_{L2h(Ω)}`.
    pub n_l2: f64,
}

fn minus(a: &SemiDiscreteField<f64>, b: &SemiDiscreteField<f64>) -> SemiDiscreteField<f64> {
    let mut d = a.clone();
    d.data -= &b.data;
    d
}

/// The three stability norms of `x̂ - x`: `w` on `Q_{h,1/α}` in `H1h`, `τ` in
/// `H1h(Ω)`, `n` in `L2h(Ω)`.
pub fn stability_norms(
    w: (&SemiDiscreteField<f64>, &SemiDiscreteField<f64>),
    tau: (&SemiDiscreteField<f64>, &SemiDiscreteField<f64>),
    n: (&SemiDiscreteField<f64>, &SemiDiscreteField<f64>),
) -> Result<[f64; 3], LabError> {
    let window = w.0.grid.window_samples()?;
    let dw = minus(w.0, w.1).t_prefix(window)?;
    Ok([
        norm(&dw, Norm::H1hQ)?,
        norm(&minus(tau.0, tau.1), Norm::H1hOmega)?,
        norm(&minus(n.0, n.1), Norm::L2hOmega)?,
    ])
}

pub fn score(result: &InversionResult<f64>, clean: &CleanData) -> Result<ReconstructionErrors, LabError> {
    let [w, tau, n] = stability_norms(
        (&result.w_hat, &clean.data.w),
        (&result.tau_hat, &clean.travel.tau),
        (&result.n_hat, &clean.n_true),
    )?;
    let n_norm = norm(&clean.n_true, Norm::L2hOmega)?;
    let flat = clean.n_true.map(|_| 1.0);
    Ok(ReconstructionErrors {
        n_relative: n / n_norm,
        n_relative_flat: norm(&minus(&flat, &clean.n_true), Norm::L2hOmega)? / n_norm,
        w_h1_window: w,
        tau_h1: tau,
        n_l2: n,
    })
}

/// Problem on `data` at Carleman parameter `λ` with the configured set.
pub fn problem(
    cfg: &ExperimentConfig,
    data: TransformedData<f64>,
    a0: f64,
    lambda: f64,
) -> Result<InversionProblem<f64>, LabError> {
    let carleman = CarlemanParams::new(lambda, cfg.alpha, &Coefficient::Constant(cfg.medium.n0))?;
    let set = AdmissibleSet::new(cfg.m_cap, cfg.medium.n0, a0)?;
    Ok(InversionProblem::new(
        data,
        cfg.grid,
        carleman,
        set,
        PenaltyWeights::for_lambda(lambda),
    )?)
}

pub fn state_of(result: &InversionResult<f64>) -> State<f64> {
    State {
        w: result.w_hat.data.clone(),
        q: result.tau_z_hat.data.clone(),
    }
}

/// Minimizes from `start` with `max_iter` iterations of the configured solver.
pub fn invert_from(
    p: &InversionProblem<f64>,
    start: State<f64>,
    opts: &SolverOptions,
    max_iter: usize,
) -> Result<InversionResult<f64>, LabError> {
    let opts = SolverOptions { max_iter, ..*opts };
    Ok(minimize_from(p, start, &opts)?)
}

/// Least-squares line through `(log x, log y)`.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}
