//! Forward data and the travel-time change of variables.
//!
//! Two routes produce `u(x, t)`: the truncated progressing-wave expansion
//! (exact at the front) and a mollified-source FDTD solver used as an
//! independent check. The transform chain turns `u` into
//! `w(x, t) = ∂_t v(x, t + τ(x))` with `v = ∫_0^t u`, plus boundary data
//! `g0`, `g1`, `g2` on the reduced horizon.

mod fdtd;
pub mod series;

pub use fdtd::{fdtd_forward, front_arrival, incident, FdtdOptions, FdtdRun};

use ndarray::{Array3, Array4};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::ForwardError;
use crate::fdgrid::{self, theta_nodes, Domain, GridSpec, SemiDiscreteField};
use crate::geodesics::{AmplitudeField, TravelTimeField};
use crate::scalar::Real;
use series::{cumulative_integral, is_post_front, Support};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Optics,
    Fdtd,
}

/// Uniform time sampling `t_m = m dt`, `m = 0..samples`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis<T> {
    pub dt: T,
    pub samples: usize,
}

impl<T: Real> TimeAxis<T> {
    pub fn end(&self) -> T {
        self.dt * T::of_usize(self.samples - 1)
    }

    pub fn t(&self, m: usize) -> T {
        T::of_usize(m) * self.dt
    }
}

#[derive(Debug, Clone)]
pub struct WaveField<T> {
    /// `u` indexed `(i, j, k, m)` over all grid nodes, z-samples and `time`.
    pub u: Array4<T>,
    pub grid: GridSpec<T>,
    pub time: TimeAxis<T>,
    /// Source mollification width (zero for the optics route).
    pub eps: T,
    pub provenance: Provenance,
    /// Wavefront `τ` per node when `u` jumps there.
    pub front: Option<Array3<T>>,
    /// Analytic `∂_z u` on `z = 0`, indexed `(i, j, m)`, when available.
    pub surface_dz: Option<Array3<T>>,
}

/// Measured boundary data: `f0 = u|Γ`, `f1 = u_z|Γ`, `f2 = u|Θ`.
#[derive(Debug, Clone)]
pub struct CipData<T> {
    pub f0: Array3<T>,
    pub f1: Array3<T>,
    /// Full `(i, j, k, m)` array with interior columns zeroed.
    pub f2: Array4<T>,
    pub time: TimeAxis<T>,
    /// Whether traces jump at the front (optics route).
    pub sharp: bool,
}

#[derive(Debug, Clone)]
pub struct TransformedData<T> {
    pub w: SemiDiscreteField<T>,
    pub g0: SemiDiscreteField<T>,
    pub g1: SemiDiscreteField<T>,
    pub g2: SemiDiscreteField<T>,
    /// Reduced horizon `T1`.
    pub t1: T,
}

fn factorial<T: Real>(k: usize) -> T {
    (1..=k).fold(T::one(), |a, q| a * T::of_usize(q))
}

/// Truncated progressing-wave field
/// `u = Σ_k α_k (t - τ)^k / k! H(t - τ)` with `α_0 = A`, sampled with the
/// grid's time step up to `t_end`.
pub fn optics_forward<T: Real>(
    grid: &GridSpec<T>,
    tau_field: &TravelTimeField<T>,
    amplitude: &AmplitudeField<T>,
    t_end: T,
) -> WaveField<T> {
    let dt = grid.dt();
    let samples = (t_end / dt).ceil().to_usize().unwrap_or(0) + 1;
    let nn = grid.nodes();
    let nz = grid.z_samples;
    let mut coeffs: Vec<&SemiDiscreteField<T>> = vec![&amplitude.a];
    coeffs.extend(amplitude.alphas.iter());
    let fact: Vec<T> = (0..coeffs.len()).map(factorial).collect();
    let tau = &tau_field.tau.data;
    let u = Array4::from_shape_fn((nn, nn, nz, samples), |(i, j, k, m)| {
        let front = tau[[i, j, k, 0]];
        if !is_post_front(m, dt, front) {
            return T::zero();
        }
        let r = T::of_usize(m) * dt - front;
        let mut acc = T::zero();
        let mut pow = T::one();
        for (q, c) in coeffs.iter().enumerate() {
            acc += c.data[[i, j, k, 0]] * pow / fact[q];
            pow *= r;
        }
        acc
    });
    let front = Array3::from_shape_fn((nn, nn, nz), |(i, j, k)| tau[[i, j, k, 0]]);
    // On z = 0: α_k = 0 and ∂_z α_k = ½ Δα_{k-1} for k >= 1, while ∂_z A = 0
    // because κ vanishes on the source plane. The δ(t) term of u_z is dropped.
    let mut dz_coeffs: Vec<Array4<T>> = Vec::new();
    for q in 1..coeffs.len() {
        dz_coeffs.push(crate::geodesics::full_laplacian(coeffs[q - 1]) * T::lit(0.5));
    }
    let surface_dz = Array3::from_shape_fn((nn, nn, samples), |(i, j, m)| {
        let t = T::of_usize(m) * dt;
        let mut acc = T::zero();
        for (q, d) in dz_coeffs.iter().enumerate() {
            let k = q + 1;
            acc += d[[i, j, 0, 0]] * t.powi(k as i32) / fact[k];
        }
        acc
    });
    WaveField {
        u,
        grid: *grid,
        time: TimeAxis { dt, samples },
        eps: T::zero(),
        provenance: Provenance::Optics,
        front: Some(front),
        surface_dz: Some(surface_dz),
    }
}

/// Boundary traces of a wave field. `f1` is analytic when the field carries it
/// and a one-sided second-order z-difference otherwise.
pub fn extract_cip_data<T: Real>(field: &WaveField<T>) -> CipData<T> {
    let g = &field.grid;
    let nn = g.nodes();
    let samples = field.time.samples;
    let f0 = Array3::from_shape_fn((nn, nn, samples), |(i, j, m)| field.u[[i, j, 0, m]]);
    let f1 = match &field.surface_dz {
        Some(d) => d.clone(),
        None => {
            let inv = T::one() / g.dz();
            Array3::from_shape_fn((nn, nn, samples), |(i, j, m)| {
                let u = |k| field.u[[i, j, k, m]];
                (-T::lit(1.5) * u(0) + T::lit(2.0) * u(1) - T::lit(0.5) * u(2)) * inv
            })
        }
    };
    let mut f2 = Array4::zeros(field.u.raw_dim());
    for (i, j) in theta_nodes(g.n) {
        f2.slice_mut(ndarray::s![i, j, .., ..])
            .assign(&field.u.slice(ndarray::s![i, j, .., ..]));
    }
    CipData {
        f0,
        f1,
        f2,
        time: field.time,
        sharp: field.front.is_some(),
    }
}

/// Applies `u → v → P → w` and builds `g0`, `g1`, `g2` on the grid's reduced
/// horizon `[0, T1]`. `n0` bounds the travel time, so the field horizon must
/// exceed `n0` and cover `T1 + n0`.
pub fn transform_chain<T: Real>(
    field: &WaveField<T>,
    cip: &CipData<T>,
    tau_field: &TravelTimeField<T>,
    grid: &GridSpec<T>,
    n0: T,
) -> Result<TransformedData<T>, ForwardError> {
    let t_end = field.time.end();
    if t_end <= n0 || grid.t_horizon > t_end - n0 + T::lit(1e-9) {
        return Err(ForwardError::HorizonTooShort {
            t: t_end.as_f64(),
            n0: n0.as_f64(),
        });
    }
    if field.grid.n != grid.n || field.grid.z_samples != grid.z_samples {
        return Err(ForwardError::InvalidParameter(
            "wave field and target grid differ in nodes or z-samples".into(),
        ));
    }
    let nn = grid.nodes();
    let nz = grid.z_samples;
    let nt = grid.t_samples;
    let dt = field.time.dt;
    let tau = &tau_field.tau.data;
    let front_of = |i: usize, j: usize, k: usize| field.front.as_ref().map(|f| f[[i, j, k]]);

    let columns: Vec<(usize, usize, usize)> = (0..nn)
        .flat_map(|i| (0..nn).flat_map(move |j| (0..nz).map(move |k| (i, j, k))))
        .collect();
    let w_values: Vec<Vec<T>> = columns
        .par_iter()
        .map(|&(i, j, k)| {
            let series: Vec<T> = field.u.slice(ndarray::s![i, j, k, ..]).to_vec();
            let front = front_of(i, j, k);
            let v = cumulative_integral(&series, dt, front);
            let support = Support::new(&v, dt, front, front.map(|_| T::zero()));
            let shift = tau[[i, j, k, 0]];
            (0..nt).map(|n| support.eval(grid.t(n) + shift).1).collect()
        })
        .collect();
    let mut w = SemiDiscreteField::zeros(grid, Domain::Q);
    for (q, &(i, j, k)) in columns.iter().enumerate() {
        for n in 0..nt {
            w.data[[i, j, k, n]] = w_values[q][n];
        }
    }

    // Values of a trace at τ + t, from its own post-front samples.
    let shifted = |series: Vec<T>, front: Option<T>, shift: T| -> Vec<T> {
        let s = Support::new(&series, dt, front, None);
        (0..nt).map(|n| s.eval(grid.t(n) + shift).0).collect()
    };
    let mut g0 = SemiDiscreteField::zeros(grid, Domain::Gamma);
    let mut f1_shift = SemiDiscreteField::zeros(grid, Domain::Gamma);
    for i in 0..nn {
        for j in 0..nn {
            let front = if cip.sharp { front_of(i, j, 0) } else { None };
            let shift = tau[[i, j, 0, 0]];
            let a = shifted(cip.f0.slice(ndarray::s![i, j, ..]).to_vec(), front, shift);
            let b = shifted(cip.f1.slice(ndarray::s![i, j, ..]).to_vec(), front, shift);
            for n in 0..nt {
                g0.data[[i, j, 0, n]] = a[n];
                f1_shift.data[[i, j, 0, n]] = b[n];
            }
        }
    }
    let g0_t = fdgrid::dt(&g0);
    let mut g1 = f1_shift;
    for i in 0..nn {
        for j in 0..nn {
            let dz_tau = tau_field.dz_tau.data[[i, j, 0, 0]];
            for n in 0..nt {
                g1.data[[i, j, 0, n]] += g0_t.data[[i, j, 0, n]] * dz_tau;
            }
        }
    }
    let mut g2 = SemiDiscreteField::zeros(grid, Domain::Theta);
    for (i, j) in theta_nodes(grid.n) {
        for k in 0..nz {
            let front = if cip.sharp { front_of(i, j, k) } else { None };
            let vals = shifted(cip.f2.slice(ndarray::s![i, j, k, ..]).to_vec(), front, tau[[i, j, k, 0]]);
            for n in 0..nt {
                g2.data[[i, j, k, n]] = vals[n];
            }
        }
    }
    Ok(TransformedData {
        w,
        g0,
        g1,
        g2,
        t1: grid.t_horizon,
    })
}

/// Agreement of the FDTD field with the ray-theory front and amplitude.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckReport {
    pub probes: usize,
    pub arrival_tolerance: f64,
    pub arrival_ok_fraction: f64,
    pub max_arrival_error: f64,
    pub amplitude_ok_fraction: f64,
    pub max_amplitude_rel_error: f64,
    pub energy_drift: f64,
    /// Relative L2h(Gamma) gap between the FDTD trace `f0` and the
    /// mollified optics trace.
    pub gamma_rel_gap: f64,
}

/// Compares an FDTD run against `τ` and `A` at every interior probe node with
/// `z > 0`. The plateau is read at `τ + 3√2 ε`, where the mollified step has
/// reached 99.9% of its height.
pub fn crosscheck<T: Real>(
    run: &FdtdRun<T>,
    tau_field: &TravelTimeField<T>,
    amplitude: &AmplitudeField<T>,
) -> CrossCheckReport {
    let field = &run.field;
    let g = &field.grid;
    let dt = field.time.dt;
    let eps = field.eps;
    let tol = (T::lit(2.0) * dt + eps).as_f64();
    let lag = T::lit(3.0 * std::f64::consts::SQRT_2) * eps;
    let mut probes = 0usize;
    let mut arrival_ok = 0usize;
    let mut amp_ok = 0usize;
    let mut max_arr: f64 = 0.0;
    let mut max_amp: f64 = 0.0;
    for i in 1..=g.n {
        for j in 1..=g.n {
            for k in 1..g.z_samples {
                let series: Vec<T> = field.u.slice(ndarray::s![i, j, k, ..]).to_vec();
                let tau = tau_field.tau.data[[i, j, k, 0]];
                let a = amplitude.a.data[[i, j, k, 0]];
                let t_read = tau + lag;
                if t_read > field.time.end() {
                    continue;
                }
                probes += 1;
                let arrival = front_arrival(&series, dt);
                let err = (arrival - tau).abs().as_f64();
                max_arr = max_arr.max(err);
                if err <= tol {
                    arrival_ok += 1;
                }
                let s = Support::new(&series, dt, None, None);
                let plateau = s.eval(t_read).0;
                let rel = ((plateau - a) / a).abs().as_f64();
                max_amp = max_amp.max(rel);
                if rel <= 0.05 {
                    amp_ok += 1;
                }
            }
        }
    }
    let frac = |c: usize| if probes == 0 { 0.0 } else { c as f64 / probes as f64 };
    CrossCheckReport {
        probes,
        arrival_tolerance: tol,
        arrival_ok_fraction: frac(arrival_ok),
        max_arrival_error: max_arr,
        amplitude_ok_fraction: frac(amp_ok),
        max_amplitude_rel_error: max_amp,
        energy_drift: run.energy_drift.as_f64(),
        gamma_rel_gap: gamma_gap(run),
    }
}

/// Relative L2h gap on `Γ` between the FDTD trace and the optics trace
/// `½ H(t)` put through the same source mollification, which is the incident
/// trace `u_inc(0, t)`.
fn gamma_gap<T: Real>(run: &FdtdRun<T>) -> f64 {
    let field = &run.field;
    let g = &field.grid;
    let eps = field.eps.as_f64();
    let reference: Vec<f64> = (0..field.time.samples)
        .map(|m| fdtd::incident(0.0, field.time.t(m).as_f64(), eps).0)
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 1..=g.n {
        for j in 1..=g.n {
            for (m, r) in reference.iter().enumerate() {
                let d = field.u[[i, j, 0, m]].as_f64() - r;
                num += d * d;
                den += r * r;
            }
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}
