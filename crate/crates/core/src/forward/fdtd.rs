//! Leapfrog FDTD for `n^2 u_tt = Δu + δ_ε(z) δ_ε(t)` with an
//! incident/scattered split. The incident wave is the constant-coefficient
//! mollified plane wave, evaluated by quadrature; only the scattered part
//! `u_sc`, driven by `(1 - n^2) ∂_t^2 u_inc`, is stepped on the box.
//!
//! Box boundaries: zero Neumann (ghost = edge) across `x` and `y`, which is
//! exact for laterally invariant media, and homogeneous Dirichlet in `z`.
//! The box is padded by `T/2 + 4ε` so nothing reflected reaches the grid
//! before `T`.

use ndarray::Array4;
use rayon::prelude::*;

use super::{Provenance, TimeAxis, WaveField};
use crate::error::ForwardError;
use crate::fdgrid::GridSpec;
use crate::medium::MediumSpec;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdtdOptions<T> {
    /// Cell size `Δ` of the computational box.
    pub spacing: T,
    /// `dt = cfl Δ`.
    pub cfl: T,
    /// Mollification width; must be at least `3 dt`.
    pub eps: T,
    /// Recorded horizon `T`.
    pub t_end: T,
    /// Cap on `cells x steps`.
    pub budget: f64,
}

impl<T: Real> FdtdOptions<T> {
    pub fn new(t_end: T, eps: T) -> Self {
        Self {
            spacing: T::lit(0.025),
            cfl: T::lit(0.5),
            eps,
            t_end,
            budget: 2e10,
        }
    }

    pub fn dt(&self) -> T {
        self.cfl * self.spacing
    }
}

#[derive(Debug, Clone)]
pub struct FdtdRun<T> {
    /// Total field `u_inc + u_sc` at the grid nodes, `t = m dt`.
    pub field: WaveField<T>,
    /// `|E_end - E_start - Σ W| / max E` of the discrete energy balance.
    pub energy_drift: T,
    pub cells: usize,
    pub steps: usize,
}

/// Gaussian density with standard deviation `eps`.
fn gauss(s: f64, eps: f64) -> f64 {
    (-0.5 * (s / eps).powi(2)).exp() / (eps * (2.0 * std::f64::consts::PI).sqrt())
}

fn gauss_cdf(s: f64, eps: f64) -> f64 {
    0.5 * libm::erfc(-s / (eps * std::f64::consts::SQRT_2))
}

/// Trapezoid nodes and weights for `∫ δ_ε(z') g(z') dz'` over `|z'| ≤ 8ε`.
fn source_quadrature(eps: f64) -> Vec<(f64, f64)> {
    let q = 320;
    let h = 16.0 * eps / q as f64;
    (0..=q)
        .map(|m| {
            let z = -8.0 * eps + m as f64 * h;
            let w = if m == 0 || m == q { 0.5 * h } else { h };
            (z, w * gauss(z, eps))
        })
        .collect()
}

/// Incident wave `½ ∫ δ_ε(z') Φ_ε(t - |z - z'|) dz'` and its second time
/// derivative `½ ∫ δ_ε(z') φ'_ε(t - |z - z'|) dz'`.
pub fn incident(z: f64, t: f64, eps: f64) -> (f64, f64) {
    incident_with(&source_quadrature(eps), z, t, eps)
}

fn incident_with(quad: &[(f64, f64)], z: f64, t: f64, eps: f64) -> (f64, f64) {
    let (mut u, mut utt) = (0.0, 0.0);
    for &(zp, w) in quad {
        let s = t - (z - zp).abs();
        u += w * gauss_cdf(s, eps);
        utt += w * (-s / (eps * eps)) * gauss(s, eps);
    }
    (0.5 * u, 0.5 * utt)
}

struct BoxGrid {
    nx: usize,
    nz: usize,
    lo: [f64; 3],
    d: f64,
}

impl BoxGrid {
    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nx + j) * self.nz + k
    }

    fn cells(&self) -> usize {
        self.nx * self.nx * self.nz
    }
}

/// Trilinear sample of a box field at a physical point.
fn sample(b: &BoxGrid, u: &[f64], p: [f64; 3]) -> f64 {
    let dims = [b.nx, b.nx, b.nz];
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let r = (p[a] - b.lo[a]) / b.d;
        let mut c = r.floor();
        if (r - r.round()).abs() < 1e-9 {
            c = r.round();
        }
        let c = (c.max(0.0) as usize).min(dims[a] - 2);
        base[a] = c;
        frac[a] = (r - c as f64).clamp(0.0, 1.0);
        if frac[a] < 1e-9 {
            frac[a] = 0.0;
        }
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let mut w = 1.0;
        for a in 0..3 {
            w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            acc += w * u[b.idx(base[0] + off[0], base[1] + off[1], base[2] + off[2])];
        }
    }
    acc
}

/// Solves the mollified Cauchy problem on a padded box and records the total
/// field at every node of `grid` for `t = m dt ∈ [0, T]`.
pub fn fdtd_forward<T: Real>(
    medium: &MediumSpec<T>,
    grid: &GridSpec<T>,
    opts: &FdtdOptions<T>,
) -> Result<FdtdRun<T>, ForwardError> {
    let cfl = opts.cfl.as_f64();
    if cfl > 0.5 {
        return Err(ForwardError::CflViolation(cfl));
    }
    let d = opts.spacing.as_f64();
    if !(cfl > 0.0 && d > 0.0) {
        return Err(ForwardError::InvalidParameter("cfl and spacing must be positive".into()));
    }
    let dt = cfl * d;
    let eps = opts.eps.as_f64();
    if eps < 3.0 * dt * (1.0 - 1e-12) {
        return Err(ForwardError::InvalidParameter(format!(
            "eps = {eps} is below 3 dt = {}",
            3.0 * dt
        )));
    }
    let t_end = opts.t_end.as_f64();
    if !(t_end > 0.0) {
        return Err(ForwardError::InvalidParameter("T must be positive".into()));
    }
    let x_half = medium.half_width.as_f64();
    let pad = ((0.5 * t_end + 4.0 * eps) / d).ceil() as usize;
    let core_x = (2.0 * x_half / d).round() as usize;
    let core_z = (1.0 / d).round() as usize;
    let b = BoxGrid {
        nx: core_x + 2 * pad + 1,
        nz: core_z + 2 * pad + 1,
        lo: [
            -x_half - pad as f64 * d,
            -x_half - pad as f64 * d,
            -(pad as f64) * d,
        ],
        d,
    };
    let lead = (6.0 * eps / dt).ceil() as usize;
    let recorded = (t_end / dt + 1e-9).floor() as usize + 1;
    let steps = lead + recorded;
    let cells = b.cells();
    if cells as f64 * steps as f64 > opts.budget {
        return Err(ForwardError::BudgetExceeded {
            cells,
            steps,
            budget: opts.budget,
        });
    }

    // Per-cell n^2 and source coefficient 1 - n^2; lateral rows share z-levels.
    let mut n2 = vec![1.0; cells];
    let mut active_levels = vec![false; b.nz];
    for i in 0..b.nx {
        for j in 0..b.nx {
            for k in 0..b.nz {
                let p = [
                    T::lit(b.lo[0] + i as f64 * d),
                    T::lit(b.lo[1] + j as f64 * d),
                    T::lit(b.lo[2] + k as f64 * d),
                ];
                let n = medium.eval_n(&p).as_f64();
                n2[b.idx(i, j, k)] = n * n;
                if n != 1.0 {
                    active_levels[k] = true;
                }
            }
        }
    }
    let quad = source_quadrature(eps);
    let t0 = -(lead as f64) * dt;
    // u_inc,tt per z-level and step, only where the source can be nonzero.
    let forcing: Vec<Vec<f64>> = (0..b.nz)
        .into_par_iter()
        .map(|k| {
            if !active_levels[k] {
                return Vec::new();
            }
            let z = b.lo[2] + k as f64 * d;
            (0..steps)
                .map(|s| incident_with(&quad, z, t0 + s as f64 * dt, eps).1)
                .collect()
        })
        .collect();

    let nn = grid.nodes();
    let nzg = grid.z_samples;
    let probes: Vec<[f64; 3]> = (0..nn)
        .flat_map(|i| (0..nn).flat_map(move |j| (0..nzg).map(move |k| (i, j, k))))
        .map(|(i, j, k)| [grid.x(i).as_f64(), grid.x(j).as_f64(), grid.z(k).as_f64()])
        .collect();
    // Incident part at the probe z-levels, per recorded step.
    let incident_rec: Vec<Vec<f64>> = (0..nzg)
        .into_par_iter()
        .map(|k| {
            let z = grid.z(k).as_f64();
            (0..recorded)
                .map(|m| incident_with(&quad, z, m as f64 * dt, eps).0)
                .collect()
        })
        .collect();

    let mut u = vec![0.0; cells];
    let mut other = vec![0.0; cells];
    let mut record = Array4::<T>::zeros((nn, nn, nzg, recorded));
    let dt2 = dt * dt;
    let dv = d * d * d;
    let inv_d2 = 1.0 / (d * d);
    let plane = b.nx * b.nz;
    // The field starts at rest, so the energy before the first step is zero.
    let (mut e_max, mut work, mut e_last) = (0.0f64, 0.0f64, 0.0f64);

    for s in 0..steps {
        // `other` holds u^{s-1} and becomes u^{s+1}.
        let partial: Vec<(f64, f64, f64)> = other
            .par_chunks_mut(plane)
            .enumerate()
            .map(|(i, next)| {
                let (mut kin, mut pot, mut w) = (0.0, 0.0, 0.0);
                for j in 0..b.nx {
                    for k in 0..b.nz {
                        let c = b.idx(i, j, k);
                        let uc = u[c];
                        let xm = u[b.idx(i.saturating_sub(1), j, k)];
                        let xp = u[b.idx((i + 1).min(b.nx - 1), j, k)];
                        let ym = u[b.idx(i, j.saturating_sub(1), k)];
                        let yp = u[b.idx(i, (j + 1).min(b.nx - 1), k)];
                        let zm = if k > 0 { u[c - 1] } else { 0.0 };
                        let zp = if k + 1 < b.nz { u[c + 1] } else { 0.0 };
                        let lap = (xm + xp + ym + yp + zm + zp - 6.0 * uc) * inv_d2;
                        let f = if forcing[k].is_empty() {
                            0.0
                        } else {
                            (1.0 - n2[c]) * forcing[k][s]
                        };
                        let local = j * b.nz + k;
                        let prev = next[local];
                        let new = 2.0 * uc - prev + dt2 / n2[c] * (lap + f);
                        next[local] = new;
                        let vel = (new - uc) / dt;
                        kin += 0.5 * n2[c] * vel * vel;
                        pot -= 0.5 * new * lap;
                        w += f * 0.5 * (new - prev);
                    }
                }
                (kin, pot, w)
            })
            .collect();
        let mut energy = 0.0;
        for (kin, pot, w) in partial {
            energy += (kin + pot) * dv;
            work += w * dv;
        }
        e_max = e_max.max(energy.abs());
        e_last = energy;
        std::mem::swap(&mut u, &mut other);
        // u now holds u^{s+1} at t0 + (s + 1) dt.
        let rec = s + 1;
        if rec >= lead && rec - lead < recorded {
            let m = rec - lead;
            for (q, p) in probes.iter().enumerate() {
                let k = q % nzg;
                let j = (q / nzg) % nn;
                let i = q / (nzg * nn);
                let total = sample(&b, &u, *p) + incident_rec[k][m];
                record[[i, j, k, m]] = T::lit(total);
            }
        }
    }
    // The very first sample (t = 0) when lead = 0 is never produced by a step.
    if lead == 0 {
        for (q, _) in probes.iter().enumerate() {
            let k = q % nzg;
            let j = (q / nzg) % nn;
            let i = q / (nzg * nn);
            record[[i, j, k, 0]] = T::lit(incident_rec[k][0]);
        }
    }
    let drift = if e_max > 0.0 {
        (e_last - work).abs() / e_max
    } else {
        0.0
    };
    Ok(FdtdRun {
        field: WaveField {
            u: record,
            grid: *grid,
            time: TimeAxis {
                dt: T::lit(dt),
                samples: recorded,
            },
            eps: opts.eps,
            provenance: Provenance::Fdtd,
            front: None,
            surface_dz: None,
        },
        energy_drift: T::lit(drift),
        cells,
        steps,
    })
}

/// Front arrival: peak of the centered difference `u_t`, refined by the
/// parabola through the peak and its neighbours.
pub fn front_arrival<T: Real>(series: &[T], dt: T) -> T {
    let len = series.len();
    if len < 3 {
        return T::zero();
    }
    let rate = |m: usize| (series[m + 1] - series[m - 1]) / (T::lit(2.0) * dt);
    let mut best = 1;
    for m in 2..len - 1 {
        if rate(m) > rate(best) {
            best = m;
        }
    }
    let t = T::of_usize(best) * dt;
    if best == 1 || best + 2 > len - 1 {
        return t;
    }
    let (a, c, e) = (rate(best - 1), rate(best), rate(best + 1));
    let denom = a - T::lit(2.0) * c + e;
    if denom >= T::zero() {
        return t;
    }
    t + T::lit(0.5) * dt * (a - e) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::MediumModel;

    fn grid() -> GridSpec<f64> {
        GridSpec {
            n: 2,
            half_width: 0.6,
            h0: 0.1,
            z_samples: 5,
            t_samples: 11,
            t_horizon: 1.0,
            t_window: 0.5,
        }
    }

    #[test]
    fn incident_far_from_source_is_shifted_gaussian_step() {
        let eps = 0.04;
        for &(z, t) in &[(0.5, 0.45), (0.5, 0.5), (0.7, 0.8), (1.0, 0.96)] {
            let (u, _) = incident(z, t, eps);
            let exact = 0.5 * gauss_cdf(t - z, eps * std::f64::consts::SQRT_2);
            assert!((u - exact).abs() < 1e-9, "{z} {t}: {u} vs {exact}");
        }
        // Second derivative against a difference of the closed form.
        let h = 1e-4;
        let f = |t: f64| incident(0.5, t, eps).0;
        let fd = (f(0.52 + h) - 2.0 * f(0.52) + f(0.52 - h)) / (h * h);
        assert!((incident(0.5, 0.52, eps).1 - fd).abs() < 1e-4 * fd.abs().max(1.0));
    }

    #[test]
    fn constant_medium_is_incident_wave() {
        let m = MediumSpec::constant(0.6);
        let g = grid();
        let opts = FdtdOptions {
            spacing: 0.05,
            ..FdtdOptions::new(0.8, 0.075)
        };
        let run = fdtd_forward(&m, &g, &opts).unwrap();
        assert_eq!(run.energy_drift, 0.0);
        for ((_, _, k, mi), &u) in run.field.u.indexed_iter() {
            let (inc, _) = incident(g.z(k), run.field.time.t(mi), 0.075);
            assert_eq!(u, inc);
        }
    }

    #[test]
    fn parameter_errors() {
        let m = MediumSpec::constant(0.6);
        let g = grid();
        let mut opts = FdtdOptions::new(0.8, 0.075);
        opts.cfl = 0.6;
        assert!(matches!(fdtd_forward(&m, &g, &opts), Err(ForwardError::CflViolation(_))));
        opts.cfl = 0.5;
        opts.eps = 0.01;
        assert!(matches!(fdtd_forward(&m, &g, &opts), Err(ForwardError::InvalidParameter(_))));
        opts.eps = 0.075;
        opts.budget = 10.0;
        assert!(matches!(fdtd_forward(&m, &g, &opts), Err(ForwardError::BudgetExceeded { .. })));
    }

    #[test]
    fn energy_balance_holds_for_bump() {
        let m = MediumSpec::new(
            MediumModel::WindowedBump {
                amplitude: 0.1,
                ramp: 1.5,
                inner: 0.1,
                outer: 0.5,
            },
            1.2,
            1.5,
            0.6,
            true,
        );
        let g = grid();
        let opts = FdtdOptions {
            spacing: 0.05,
            ..FdtdOptions::new(0.8, 0.075)
        };
        let run = fdtd_forward(&m, &g, &opts).unwrap();
        assert!(run.energy_drift < 1e-9, "drift {}", run.energy_drift);
        // Causality: nothing before the mollified front.
        let u = &run.field.u;
        let k = g.z_samples - 1;
        assert!(u[[1, 1, k, 0]].abs() < 1e-12);
    }

    #[test]
    fn arrival_of_symmetric_step() {
        let dt = 0.01;
        let series: Vec<f64> = (0..100)
            .map(|m| 0.5 * gauss_cdf(m as f64 * dt - 0.4237, 0.03))
            .collect();
        assert!((front_arrival(&series, dt) - 0.4237).abs() < 1e-3);
    }
}
