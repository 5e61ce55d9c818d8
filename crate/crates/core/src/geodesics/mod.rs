//! Rays of the metric `n |dx|` launched vertically from the plane `z = 0`.
//!
//! A ray is parametrized by travel time `s`:
//! `dx/ds = p / n^2`, `dp/ds = ∇n / n`, with `x(0) = (x0, y0, 0)` and
//! `p(0) = e_z`. Along the ray the Hessian `κ` of the travel time obeys a
//! matrix Riccati equation, and the amplitude is `½ exp(-½ ∫ tr κ / n^2 ds)`.
//! The integrator optionally carries the linearization with respect to the
//! launch point, which gives the shooting Jacobian.

mod field;

pub use field::{
    amplitude_field, check_regularity, higher_amplitudes, shoot_to, travel_time_field, AmplitudeField,
    NodeRay, RegularityReport, TravelTimeField,
};
pub(crate) use field::full_laplacian;

use serde::Serialize;

use crate::error::GeodesicError;
use crate::medium::{Mat3, MediumSpec, Vec3};
use crate::scalar::Real;

pub(crate) const NS: usize = 25;
pub(crate) const IX: usize = 0;
pub(crate) const IP: usize = 3;
pub(crate) const IK: usize = 6;
pub(crate) const II: usize = 12;
pub(crate) const IVX: usize = 13;
pub(crate) const IVP: usize = 19;

/// Packed symmetric index order of `κ`: xx, yy, zz, xy, xz, yz.
const SYM: [[usize; 3]; 3] = [[0, 3, 4], [3, 1, 5], [4, 5, 2]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOptions<T> {
    pub ds: T,
    /// Largest tolerated eikonal defect `| |p|^2 - n^2 |`.
    pub defect_tol: T,
    /// Riccati entries beyond this magnitude are treated as a caustic.
    pub kappa_cap: T,
    /// Shooting residual tolerance relative to `X`.
    pub newton_tol: T,
    pub max_newton: usize,
    /// Floor on the shooting Jacobian determinant.
    pub det_floor: T,
}

impl<T: Real> Default for RayOptions<T> {
    fn default() -> Self {
        Self {
            ds: T::lit(1e-3),
            defect_tol: T::lit(1e-8),
            kappa_cap: T::lit(1e3),
            newton_tol: T::lit(1e-12),
            max_newton: 30,
            det_floor: T::lit(0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicNode<T> {
    pub s: T,
    pub x: Vec3<T>,
    pub p: Vec3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath<T> {
    pub origin: [T; 2],
    pub ds: T,
    pub nodes: Vec<GeodesicNode<T>>,
    pub max_defect: T,
}

impl<T: Real> GeodesicPath<T> {
    pub fn end(&self) -> &GeodesicNode<T> {
        self.nodes.last().expect("paths hold at least the origin")
    }

    /// Optical length `∫ n dσ` over Euclidean arclength by the trapezoid rule
    /// on chords, to be compared with the travel-time parameter `s`.
    pub fn optical_length(&self, medium: &MediumSpec<T>) -> T {
        let mut total = T::zero();
        for w in self.nodes.windows(2) {
            let chord = (0..3)
                .map(|a| (w[1].x[a] - w[0].x[a]).powi(2))
                .fold(T::zero(), |a, b| a + b)
                .sqrt();
            let na = medium.eval_n(&w[0].x);
            let nb = medium.eval_n(&w[1].x);
            total += chord * (na + nb) * T::lit(0.5);
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureState<T> {
    pub s: T,
    pub kappa: Mat3<T>,
    /// `tr κ = Δτ`.
    pub trace: T,
    /// `d(tr κ)/ds`.
    pub trace_rate: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Parts {
    pub curvature: bool,
    pub variational: bool,
}

impl Parts {
    pub const ALL: Parts = Parts {
        curvature: true,
        variational: true,
    };
    pub const PATH: Parts = Parts {
        curvature: false,
        variational: false,
    };
}

pub(crate) type State<T> = [T; NS];

pub(crate) fn initial_state<T: Real>(x0: [T; 2]) -> State<T> {
    let mut st = [T::zero(); NS];
    st[IX] = x0[0];
    st[IX + 1] = x0[1];
    st[IP + 2] = T::one();
    st[IVX] = T::one();
    st[IVX + 3 + 1] = T::one();
    st
}

#[inline]
pub(crate) fn unpack_kappa<T: Real>(k: &[T]) -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            m[a][b] = k[SYM[a][b]];
        }
    }
    m
}

/// Right-hand side of the Riccati equation for `κ`.
#[inline]
fn kappa_rate<T: Real>(k: &Mat3<T>, n: T, g: &Vec3<T>, hs: &Mat3<T>) -> Mat3<T> {
    let inv = T::one() / (n * n);
    let mut out = [[T::zero(); 3]; 3];
    for j in 0..3 {
        for l in j..3 {
            let mut kk = T::zero();
            for i in 0..3 {
                kk += k[i][j] * k[i][l];
            }
            let v = inv * (g[j] * g[l] + n * hs[j][l] - kk);
            out[j][l] = v;
            out[l][j] = v;
        }
    }
    out
}

#[inline]
pub(crate) fn rhs<T: Real>(medium: &MediumSpec<T>, st: &State<T>, parts: Parts) -> State<T> {
    let x = [st[IX], st[IX + 1], st[IX + 2]];
    let loc = medium.eval_local(&x);
    let n = loc.n;
    let g = loc.grad;
    let n2 = n * n;
    let inv_n2 = T::one() / n2;
    let mut d = [T::zero(); NS];
    for a in 0..3 {
        d[IX + a] = st[IP + a] * inv_n2;
        d[IP + a] = g[a] / n;
    }
    if parts.curvature {
        let k = unpack_kappa(&st[IK..IK + 6]);
        let r = kappa_rate(&k, n, &g, &loc.hess);
        d[IK] = r[0][0];
        d[IK + 1] = r[1][1];
        d[IK + 2] = r[2][2];
        d[IK + 3] = r[0][1];
        d[IK + 4] = r[0][2];
        d[IK + 5] = r[1][2];
        d[II] = (k[0][0] + k[1][1] + k[2][2]) * inv_n2;
    }
    if parts.variational {
        let p = [st[IP], st[IP + 1], st[IP + 2]];
        for v in 0..2 {
            let vx = &st[IVX + 3 * v..IVX + 3 * v + 3];
            let vp = &st[IVP + 3 * v..IVP + 3 * v + 3];
            let gdx = g[0] * vx[0] + g[1] * vx[1] + g[2] * vx[2];
            for a in 0..3 {
                let hdx = loc.hess[a][0] * vx[0] + loc.hess[a][1] * vx[1] + loc.hess[a][2] * vx[2];
                d[IVX + 3 * v + a] = vp[a] * inv_n2 - T::lit(2.0) * p[a] * gdx / (n2 * n);
                d[IVP + 3 * v + a] = hdx / n - g[a] * gdx * inv_n2;
            }
        }
    }
    d
}

#[inline]
fn axpy<T: Real>(y: &State<T>, a: T, k: &State<T>) -> State<T> {
    let mut out = *y;
    for q in 0..NS {
        out[q] += a * k[q];
    }
    out
}

#[inline]
pub(crate) fn rk4_step<T: Real>(medium: &MediumSpec<T>, st: &State<T>, h: T, parts: Parts) -> State<T> {
    let half = h * T::lit(0.5);
    let k1 = rhs(medium, st, parts);
    let k2 = rhs(medium, &axpy(st, half, &k1), parts);
    let k3 = rhs(medium, &axpy(st, half, &k2), parts);
    let k4 = rhs(medium, &axpy(st, h, &k3), parts);
    let sixth = h / T::lit(6.0);
    let mut out = *st;
    for q in 0..NS {
        out[q] += sixth * (k1[q] + T::lit(2.0) * (k2[q] + k3[q]) + k4[q]);
    }
    out
}

/// Number of uniform steps of size at most `ds` covering `[0, s]`.
#[inline]
pub(crate) fn step_count<T: Real>(s: T, ds: T) -> usize {
    if s <= T::zero() {
        0
    } else {
        (s / ds).ceil().to_usize().unwrap_or(1).max(1)
    }
}

pub(crate) fn eikonal_defect<T: Real>(medium: &MediumSpec<T>, st: &State<T>) -> T {
    let n = medium.eval_n(&[st[IX], st[IX + 1], st[IX + 2]]);
    (st[IP] * st[IP] + st[IP + 1] * st[IP + 1] + st[IP + 2] * st[IP + 2] - n * n).abs()
}

/// Integrates from the launch point to `s_end`, calling `visit(s, state)` at
/// every node including the first.
pub(crate) fn integrate<T: Real>(
    medium: &MediumSpec<T>,
    x0: [T; 2],
    s_end: T,
    ds: T,
    parts: Parts,
    mut visit: impl FnMut(T, &State<T>) -> Result<(), GeodesicError>,
) -> Result<State<T>, GeodesicError> {
    let steps = step_count(s_end, ds);
    let mut st = initial_state(x0);
    visit(T::zero(), &st)?;
    if steps == 0 {
        return Ok(st);
    }
    let h = s_end / T::of_usize(steps);
    for q in 0..steps {
        st = rk4_step(medium, &st, h, parts);
        visit(T::of_usize(q + 1) * h, &st)?;
    }
    Ok(st)
}

fn check_ray_args<T: Real>(medium: &MediumSpec<T>, s_max: T, ds: T) -> Result<(), GeodesicError> {
    if !(ds > T::zero()) {
        return Err(GeodesicError::InvalidArgument(format!("ds = {ds} must be positive")));
    }
    if !(s_max >= T::zero()) || s_max > medium.n0 * (T::one() + T::lit(1e-12)) {
        return Err(GeodesicError::InvalidArgument(format!(
            "s_max = {s_max} must lie in [0, n0 = {}]",
            medium.n0
        )));
    }
    Ok(())
}

/// Traces the ray from `(x0, y0, 0)` up to travel time `s_max`.
pub fn trace_geodesic<T: Real>(
    medium: &MediumSpec<T>,
    x0: [T; 2],
    s_max: T,
    ds: T,
    defect_tol: T,
) -> Result<GeodesicPath<T>, GeodesicError> {
    check_ray_args(medium, s_max, ds)?;
    let mut nodes = Vec::with_capacity(step_count(s_max, ds) + 1);
    let mut max_defect = T::zero();
    integrate(medium, x0, s_max, ds, Parts::PATH, |s, st| {
        let defect = eikonal_defect(medium, st);
        max_defect = max_defect.max(defect);
        if defect > defect_tol {
            return Err(GeodesicError::StepFailure {
                s: s.as_f64(),
                defect: defect.as_f64(),
                tolerance: defect_tol.as_f64(),
            });
        }
        nodes.push(GeodesicNode {
            s,
            x: [st[IX], st[IX + 1], st[IX + 2]],
            p: [st[IP], st[IP + 1], st[IP + 2]],
        });
        Ok(())
    })?;
    Ok(GeodesicPath {
        origin: x0,
        ds,
        nodes,
        max_defect,
    })
}

/// Transports `κ` along `path` from `κ(0) = 0`. The ray is re-integrated
/// jointly with `κ` using the path's launch point and step, which reproduces
/// the path nodes exactly.
pub fn transport_curvature<T: Real>(
    medium: &MediumSpec<T>,
    path: &GeodesicPath<T>,
    kappa_cap: T,
) -> Result<Vec<CurvatureState<T>>, GeodesicError> {
    let s_end = path.end().s;
    let mut out = Vec::with_capacity(path.nodes.len());
    let parts = Parts {
        curvature: true,
        variational: false,
    };
    integrate(medium, path.origin, s_end, path.ds, parts, |s, st| {
        let kappa = unpack_kappa(&st[IK..IK + 6]);
        let worst = st[IK..IK + 6].iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        if worst > kappa_cap || !worst.is_finite() {
            return Err(GeodesicError::BlowupDetected {
                origin: [path.origin[0].as_f64(), path.origin[1].as_f64()],
                s: s.as_f64(),
                value: worst.as_f64(),
                cap: kappa_cap.as_f64(),
            });
        }
        let d = rhs(medium, st, parts);
        out.push(CurvatureState {
            s,
            kappa,
            trace: kappa[0][0] + kappa[1][1] + kappa[2][2],
            trace_rate: d[IK] + d[IK + 1] + d[IK + 2],
        });
        Ok(())
    })?;
    Ok(out)
}

/// Summary of the trace-rate bound `d(tr κ)/ds <= 6 n00^2` over a set of rays.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRateSummary {
    pub rays: usize,
    pub max_trace_rate: f64,
    pub bound: f64,
    pub worst_origin: [f64; 2],
    pub worst_s: f64,
}

pub fn max_trace_rate<T: Real>(
    medium: &MediumSpec<T>,
    origins: &[[T; 2]],
    s_max: T,
    opts: &RayOptions<T>,
) -> Result<TraceRateSummary, GeodesicError> {
    let mut summary = TraceRateSummary {
        rays: origins.len(),
        max_trace_rate: f64::NEG_INFINITY,
        bound: 6.0 * medium.n00.as_f64().powi(2),
        worst_origin: [0.0; 2],
        worst_s: 0.0,
    };
    for &o in origins {
        let path = trace_geodesic(medium, o, s_max, opts.ds, opts.defect_tol)?;
        for c in transport_curvature(medium, &path, opts.kappa_cap)? {
            let r = c.trace_rate.as_f64();
            if r > summary.max_trace_rate {
                summary.max_trace_rate = r;
                summary.worst_origin = [o[0].as_f64(), o[1].as_f64()];
                summary.worst_s = c.s.as_f64();
            }
        }
    }
    Ok(summary)
}
