//! Travel-time and amplitude fields on the semi-discrete grid by per-node
//! shooting, the higher transport coefficients, and the regularity proxy.

use ndarray::{Array3, Array4};
use rayon::prelude::*;
use serde::Serialize;

use super::{
    integrate, GeodesicError, Parts, RayOptions, State, II, IK, IP, IVX, IX,
};
use crate::fdgrid::{apply_axis, grad_h, Domain, GridSpec, SemiDiscreteField, Stencil};
use crate::medium::{MediumSpec, Vec3};
use crate::scalar::Real;

/// Ray solution reaching one grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRay<T> {
    pub x0: [T; 2],
    /// Travel time.
    pub s: T,
    pub p: Vec3<T>,
    /// Packed `κ` (xx, yy, zz, xy, xz, yz).
    pub kappa: [T; 6],
    /// `∫ tr κ / n^2 ds`.
    pub log_integral: T,
    /// Shooting Jacobian `∂ξ/∂(x0, y0, s)` (rows are components of `ξ`).
    pub jacobian: [[T; 3]; 3],
    /// Its determinant.
    pub det: T,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct TravelTimeField<T> {
    pub tau: SemiDiscreteField<T>,
    /// `∂_z τ` from the ray momentum.
    pub dz_tau: SemiDiscreteField<T>,
    /// Semi-discrete gradient `∇ʰτʰ`.
    pub grad: [SemiDiscreteField<T>; 3],
    /// Ray momentum `p = ∇τ` at the nodes.
    pub momentum: [SemiDiscreteField<T>; 3],
    /// `Δτ = tr κ` from the Riccati transport.
    pub laplacian: SemiDiscreteField<T>,
    /// Node rays, indexed `(i, j, k)`.
    pub rays: Array3<NodeRay<T>>,
}

#[derive(Debug, Clone)]
pub struct AmplitudeField<T> {
    pub a: SemiDiscreteField<T>,
    /// Floor `½ exp(-3 n00^2 n0^2 / 2)`.
    pub a0: T,
    pub alphas: Vec<SemiDiscreteField<T>>,
}

pub fn amplitude_floor<T: Real>(n0: T, n00: T) -> T {
    T::lit(0.5) * (-T::lit(1.5) * n00 * n00 * n0 * n0).exp()
}

fn solve3<T: Real>(j: &[[T; 3]; 3], f: &[T; 3]) -> Option<([T; 3], T)> {
    let det = det3(j);
    if det == T::zero() || !det.is_finite() {
        return None;
    }
    let mut out = [T::zero(); 3];
    for c in 0..3 {
        let mut m = *j;
        for r in 0..3 {
            m[r][c] = f[r];
        }
        out[c] = det3(&m) / det;
    }
    Some((out, det))
}

fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Shooting Jacobian `∂ξ/∂(x0, y0, s)` of an end state, as rows.
fn jacobian<T: Real>(medium: &MediumSpec<T>, st: &State<T>) -> [[T; 3]; 3] {
    let n = medium.eval_n(&[st[IX], st[IX + 1], st[IX + 2]]);
    let inv = T::one() / (n * n);
    let mut j = [[T::zero(); 3]; 3];
    for a in 0..3 {
        j[a][0] = st[IVX + a];
        j[a][1] = st[IVX + 3 + a];
        j[a][2] = st[IP + a] * inv;
    }
    j
}

fn end_state<T: Real>(medium: &MediumSpec<T>, x0: [T; 2], s: T, ds: T) -> State<T> {
    integrate(medium, x0, s, ds, Parts::ALL, |_, _| Ok(())).expect("visitor never fails")
}

fn node_ray<T: Real>(medium: &MediumSpec<T>, x0: [T; 2], s: T, st: &State<T>, iterations: usize) -> NodeRay<T> {
    let mut kappa = [T::zero(); 6];
    kappa.copy_from_slice(&st[IK..IK + 6]);
    let jac = jacobian(medium, st);
    NodeRay {
        x0,
        s,
        p: [st[IP], st[IP + 1], st[IP + 2]],
        kappa,
        log_integral: st[II],
        jacobian: jac,
        det: det3(&jac),
        iterations,
    }
}

/// Finds the launch point and travel time of the ray through `target` by damped
/// Newton on the shooting map, starting from `guess = (x0, s)`.
pub fn shoot_to<T: Real>(
    medium: &MediumSpec<T>,
    target: Vec3<T>,
    guess: ([T; 2], T),
    opts: &RayOptions<T>,
) -> Result<NodeRay<T>, GeodesicError> {
    let node = [target[0].as_f64(), target[1].as_f64(), target[2].as_f64()];
    let fail = |reason: String| GeodesicError::RegularityViolation { node, reason };
    let tol = opts.newton_tol * medium.half_width;
    let s_cap = medium.n0;
    let mut base = guess;
    let mut base_norm = T::infinity();
    let mut step = [T::zero(); 3];
    let mut damp = T::one();
    for it in 0..opts.max_newton {
        let x0 = [base.0[0] + damp * step[0], base.0[1] + damp * step[1]];
        let s = (base.1 + damp * step[2]).max(T::zero()).min(s_cap);
        let st = end_state(medium, x0, s, opts.ds);
        let f = [target[0] - st[IX], target[1] - st[IX + 1], target[2] - st[IX + 2]];
        let norm = f.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        if !norm.is_finite() {
            return Err(fail("non-finite ray state".into()));
        }
        if norm <= tol {
            let ray = node_ray(medium, x0, s, &st, it + 1);
            let cap = st[IK..IK + 6].iter().fold(T::zero(), |a, &b| a.max(b.abs()));
            if cap > opts.kappa_cap {
                return Err(GeodesicError::BlowupDetected {
                    origin: [x0[0].as_f64(), x0[1].as_f64()],
                    s: s.as_f64(),
                    value: cap.as_f64(),
                    cap: opts.kappa_cap.as_f64(),
                });
            }
            if ray.det.abs() < opts.det_floor {
                return Err(fail(format!("shooting Jacobian determinant {} below floor", ray.det)));
            }
            return Ok(ray);
        }
        if norm < base_norm {
            let j = jacobian(medium, &st);
            let (delta, det) = solve3(&j, &f).ok_or_else(|| fail("singular shooting Jacobian".into()))?;
            if det.abs() < opts.det_floor {
                return Err(fail(format!("shooting Jacobian determinant {det} below floor")));
            }
            base = (x0, s);
            base_norm = norm;
            step = delta;
            damp = T::one();
        } else {
            damp *= T::lit(0.5);
            if damp < T::lit(1e-6) {
                return Err(fail(format!("damping exhausted at residual {base_norm}")));
            }
        }
    }
    Err(fail(format!("no convergence in {} iterations (residual {base_norm})", opts.max_newton)))
}

fn shoot_column<T: Real>(
    medium: &MediumSpec<T>,
    grid: &GridSpec<T>,
    i: usize,
    j: usize,
    opts: &RayOptions<T>,
) -> Result<Vec<NodeRay<T>>, GeodesicError> {
    let (x, y) = (grid.x(i), grid.x(j));
    let mut out = Vec::with_capacity(grid.z_samples);
    let first = initial_ray(medium, [x, y]);
    out.push(first);
    let dz = grid.dz();
    for k in 1..grid.z_samples {
        let prev = out[k - 1];
        // Newton prediction from the previous node's Jacobian for a step dz.
        let guess = match solve3(&prev.jacobian, &[T::zero(), T::zero(), dz]) {
            Some((d, _)) => ([prev.x0[0] + d[0], prev.x0[1] + d[1]], prev.s + d[2]),
            None => (prev.x0, prev.s + dz),
        };
        out.push(shoot_to(medium, [x, y, grid.z(k)], guess, opts)?);
    }
    Ok(out)
}

fn initial_ray<T: Real>(medium: &MediumSpec<T>, x0: [T; 2]) -> NodeRay<T> {
    let st = super::initial_state(x0);
    node_ray(medium, x0, T::zero(), &st, 0)
}

/// Shoots a ray to every grid node, boundary layers included.
pub fn travel_time_field<T: Real>(
    medium: &MediumSpec<T>,
    grid: &GridSpec<T>,
    opts: &RayOptions<T>,
) -> Result<TravelTimeField<T>, GeodesicError> {
    grid.validate()
        .map_err(|e| GeodesicError::InvalidArgument(e.to_string()))?;
    let nn = grid.nodes();
    let columns: Vec<(usize, usize)> = (0..nn).flat_map(|i| (0..nn).map(move |j| (i, j))).collect();
    let solved: Vec<Vec<NodeRay<T>>> = columns
        .par_iter()
        .map(|&(i, j)| shoot_column(medium, grid, i, j, opts))
        .collect::<Result<_, _>>()?;
    let nz = grid.z_samples;
    let rays = Array3::from_shape_fn((nn, nn, nz), |(i, j, k)| solved[i * nn + j][k]);
    let omega = |f: &dyn Fn(&NodeRay<T>) -> T| {
        let data = Array4::from_shape_fn((nn, nn, nz, 1), |(i, j, k, _)| f(&rays[[i, j, k]]));
        SemiDiscreteField::from_array(grid, Domain::Omega, data).expect("shape built from grid")
    };
    let tau = omega(&|r| r.s);
    let momentum = [omega(&|r| r.p[0]), omega(&|r| r.p[1]), omega(&|r| r.p[2])];
    let laplacian = omega(&|r| r.kappa[0] + r.kappa[1] + r.kappa[2]);
    let grad = grad_h(&tau);
    Ok(TravelTimeField {
        dz_tau: momentum[2].clone(),
        tau,
        grad,
        momentum,
        laplacian,
        rays,
    })
}

fn same_grid<T: Real>(grid: &GridSpec<T>, field: &SemiDiscreteField<T>) -> Result<(), GeodesicError> {
    if field.grid != *grid {
        return Err(GeodesicError::InvalidArgument("field was built on a different grid".into()));
    }
    Ok(())
}

/// `A = ½ exp(-½ ∫ Δτ / n^2 ds)` at every node, checked against the floor.
pub fn amplitude_field<T: Real>(
    medium: &MediumSpec<T>,
    grid: &GridSpec<T>,
    tau_field: &TravelTimeField<T>,
) -> Result<AmplitudeField<T>, GeodesicError> {
    same_grid(grid, &tau_field.tau)?;
    let a0 = amplitude_floor(medium.n0, medium.n00);
    let half = T::lit(0.5);
    let mut a = SemiDiscreteField::zeros(grid, Domain::Omega);
    for ((i, j, k), r) in tau_field.rays.indexed_iter() {
        let v = half * (-half * r.log_integral).exp();
        if v < a0 {
            return Err(GeodesicError::AmplitudeFloor {
                node: [grid.x(i).as_f64(), grid.x(j).as_f64(), grid.z(k).as_f64()],
                value: v.as_f64(),
                floor: a0.as_f64(),
            });
        }
        a.data[[i, j, k, 0]] = v;
    }
    Ok(AmplitudeField {
        a,
        a0,
        alphas: Vec::new(),
    })
}

/// Laplacian on every node of an Omega field: second differences along x, y
/// and z, one-sided on the outer layers and faces.
pub(crate) fn full_laplacian<T: Real>(f: &SemiDiscreteField<T>) -> Array4<T> {
    let g = &f.grid;
    let mut out = apply_axis(&f.data, 0, Stencil::SampledD2, g.h());
    out += &apply_axis(&f.data, 1, Stencil::SampledD2, g.h());
    out += &apply_axis(&f.data, 2, Stencil::SampledD2, g.dz());
    out
}

/// Trilinear interpolation of an Omega array at `x`, clamped to the grid box.
fn trilinear<T: Real>(grid: &GridSpec<T>, data: &Array4<T>, x: &Vec3<T>) -> T {
    let nn = grid.nodes();
    let nz = grid.z_samples;
    let locate = |v: T, lo: T, step: T, count: usize| -> (usize, T) {
        let u = ((v - lo) / step).max(T::zero()).min(T::of_usize(count - 1));
        let c = u.floor().to_usize().unwrap_or(0).min(count - 2);
        (c, u - T::of_usize(c))
    };
    let (i, fx) = locate(x[0], -grid.half_width, grid.h(), nn);
    let (j, fy) = locate(x[1], -grid.half_width, grid.h(), nn);
    let (k, fz) = locate(x[2], T::zero(), grid.dz(), nz);
    let one = T::one();
    let mut acc = T::zero();
    for (di, wx) in [(0, one - fx), (1, fx)] {
        for (dj, wy) in [(0, one - fy), (1, fy)] {
            for (dk, wz) in [(0, one - fz), (1, fz)] {
                acc += wx * wy * wz * data[[i + di, j + dj, k + dk, 0]];
            }
        }
    }
    acc
}

/// Higher transport coefficients `α_1..α_r`:
/// `α_k(x) = ½ α_0(x) ∫_L Δα_{k-1} / (n^2 α_0) ds` with `α_0 = A`, the
/// Laplacian taken on the grid and interpolated along the re-traced rays.
pub fn higher_amplitudes<T: Real>(
    medium: &MediumSpec<T>,
    grid: &GridSpec<T>,
    amplitude: &AmplitudeField<T>,
    tau_field: &TravelTimeField<T>,
    r_trunc: usize,
    opts: &RayOptions<T>,
) -> Result<Vec<SemiDiscreteField<T>>, GeodesicError> {
    if r_trunc > 2 {
        return Err(GeodesicError::InvalidArgument(format!(
            "r_trunc = {r_trunc} is not supported (use 0, 1 or 2)"
        )));
    }
    same_grid(grid, &amplitude.a)?;
    same_grid(grid, &tau_field.tau)?;
    let nn = grid.nodes();
    let nz = grid.z_samples;
    let half = T::lit(0.5);
    let mut alphas: Vec<SemiDiscreteField<T>> = Vec::with_capacity(r_trunc);
    let parts = Parts {
        curvature: true,
        variational: false,
    };
    for order in 1..=r_trunc {
        let prev = if order == 1 { &amplitude.a } else { &alphas[order - 2] };
        let lap = full_laplacian(prev);
        let nodes: Vec<(usize, usize, usize)> = (0..nn)
            .flat_map(|i| (0..nn).flat_map(move |j| (0..nz).map(move |k| (i, j, k))))
            .collect();
        let values: Vec<T> = nodes
            .par_iter()
            .map(|&(i, j, k)| {
                let ray = &tau_field.rays[[i, j, k]];
                if ray.s == T::zero() {
                    return Ok(T::zero());
                }
                let steps = super::step_count(ray.s, opts.ds);
                let hs = ray.s / T::of_usize(steps);
                let mut integral = T::zero();
                let mut last = T::zero();
                let mut first = true;
                let mut end_a0 = T::zero();
                integrate(medium, ray.x0, ray.s, opts.ds, parts, |_, st| {
                    let x = [st[IX], st[IX + 1], st[IX + 2]];
                    let n = medium.eval_n(&x);
                    let a0 = half * (-half * st[II]).exp();
                    let g = trilinear(grid, &lap, &x) / (n * n * a0);
                    if first {
                        first = false;
                    } else {
                        integral += half * hs * (last + g);
                    }
                    last = g;
                    end_a0 = a0;
                    Ok(())
                })?;
                Ok(half * end_a0 * integral)
            })
            .collect::<Result<_, GeodesicError>>()?;
        let data = Array4::from_shape_vec((nn, nn, nz, 1), values).expect("node count matches grid");
        alphas.push(SemiDiscreteField::from_array(grid, Domain::Omega, data).expect("grid shape"));
    }
    Ok(alphas)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub rays: usize,
    pub floor: f64,
    pub min_det: f64,
    pub min_det_origin: [f64; 2],
    pub min_det_s: f64,
    /// Location of the first Riccati blowup, if any ray hit the cap.
    pub caustic: Option<[f64; 3]>,
    pub passed: bool,
}

/// Estimates the shooting-map Jacobian by finite differences of neighbouring
/// rays (offset `1e-4` in each launch coordinate) along each ray of the fan.
pub fn check_regularity<T: Real>(
    medium: &MediumSpec<T>,
    fan: &[[T; 2]],
    s_max: T,
    opts: &RayOptions<T>,
) -> RegularityReport {
    let eta = T::lit(1e-4);
    let per_ray: Vec<(f64, f64, Option<[f64; 3]>)> = fan
        .par_iter()
        .map(|&o| {
            let trace = |x0: [T; 2]| {
                let mut xs = Vec::new();
                let mut caustic = None;
                let _ = integrate(medium, x0, s_max, opts.ds, Parts { curvature: true, variational: false }, |s, st| {
                    let worst = st[IK..IK + 6].iter().fold(T::zero(), |a, &b| a.max(b.abs()));
                    if caustic.is_none() && !(worst <= opts.kappa_cap) {
                        caustic = Some([st[IX].as_f64(), st[IX + 1].as_f64(), st[IX + 2].as_f64()]);
                    }
                    xs.push((s, *st));
                    Ok(())
                });
                (xs, caustic)
            };
            let (centre, caustic) = trace(o);
            let (xp, _) = trace([o[0] + eta, o[1]]);
            let (xm, _) = trace([o[0] - eta, o[1]]);
            let (yp, _) = trace([o[0], o[1] + eta]);
            let (ym, _) = trace([o[0], o[1] - eta]);
            let mut min_det = f64::INFINITY;
            let mut at = 0.0;
            for q in 1..centre.len() {
                let st = &centre[q].1;
                let n = medium.eval_n(&[st[IX], st[IX + 1], st[IX + 2]]);
                let mut j = [[T::zero(); 3]; 3];
                for a in 0..3 {
                    j[a][0] = (xp[q].1[IX + a] - xm[q].1[IX + a]) / (T::lit(2.0) * eta);
                    j[a][1] = (yp[q].1[IX + a] - ym[q].1[IX + a]) / (T::lit(2.0) * eta);
                    j[a][2] = st[IP + a] / (n * n);
                }
                let d = det3(&j).as_f64();
                if d < min_det {
                    min_det = d;
                    at = centre[q].0.as_f64();
                }
            }
            (min_det, at, caustic)
        })
        .collect();
    let floor = opts.det_floor.as_f64();
    let mut report = RegularityReport {
        rays: fan.len(),
        floor,
        min_det: f64::INFINITY,
        min_det_origin: [0.0; 2],
        min_det_s: 0.0,
        caustic: None,
        passed: true,
    };
    for (o, (d, s, c)) in fan.iter().zip(per_ray) {
        if d < report.min_det {
            report.min_det = d;
            report.min_det_origin = [o[0].as_f64(), o[1].as_f64()];
            report.min_det_s = s;
        }
        if report.caustic.is_none() {
            report.caustic = c;
        }
    }
    report.passed = report.min_det >= floor && report.caustic.is_none();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::MediumModel;

    fn small_grid() -> GridSpec<f64> {
        GridSpec {
            n: 4,
            half_width: 1.125,
            h0: 0.1,
            z_samples: 11,
            t_samples: 10,
            t_horizon: 4.5,
            t_window: 1.5,
        }
    }

    fn opts() -> RayOptions<f64> {
        RayOptions {
            ds: 5e-3,
            ..RayOptions::default()
        }
    }

    fn layered() -> MediumSpec<f64> {
        MediumSpec::new(
            MediumModel::Layered {
                amplitude: 0.2,
                ramp: 1.0,
            },
            1.2,
            4.0,
            1.125,
            true,
        )
    }

    fn bump(a: f64) -> MediumSpec<f64> {
        MediumSpec::new(
            MediumModel::WindowedBump {
                amplitude: a,
                ramp: 1.5,
                inner: 0.2,
                outer: 1.0,
            },
            1.2,
            1.5,
            1.125,
            true,
        )
    }

    #[test]
    fn constant_medium_fields_are_exact() {
        let m = MediumSpec::<f64>::constant(1.125);
        let g = small_grid();
        let tt = travel_time_field(&m, &g, &opts()).unwrap();
        for ((_, _, k, _), &v) in tt.tau.data.indexed_iter() {
            assert!((v - g.z(k)).abs() < 1e-12);
        }
        let amp = amplitude_field(&m, &g, &tt).unwrap();
        assert!(amp.a.data.iter().all(|&a| a == 0.5));
        let alphas = higher_amplitudes(&m, &g, &amp, &tt, 2, &opts()).unwrap();
        assert!(alphas.iter().all(|f| f.max_abs() < 1e-13));
    }

    #[test]
    fn layered_depth_one_travel_time() {
        let m = layered();
        let g = small_grid();
        let tt = travel_time_field(&m, &g, &opts()).unwrap();
        let top = g.z_samples - 1;
        for i in 0..g.nodes() {
            assert!((tt.tau.data[[i, 2, top, 0]] - 1.1).abs() < 1e-8);
        }
        for ((i, j, _, _), &v) in tt.dz_tau.data.indexed_iter() {
            let _ = (i, j);
            assert!(v >= 1.0 - 1e-6 && v <= 1.2 + 1e-9);
        }
        // Closed form A = ½ n^{-1/2}.
        let amp = amplitude_field(&m, &g, &tt).unwrap();
        for k in 0..g.z_samples {
            let n = m.eval_n(&[0.0, 0.0, g.z(k)]);
            assert!((amp.a.data[[1, 1, k, 0]] - 0.5 / n.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn source_plane_conditions() {
        let m = bump(0.1);
        let g = small_grid();
        let tt = travel_time_field(&m, &g, &opts()).unwrap();
        let amp = amplitude_field(&m, &g, &tt).unwrap();
        let alphas = higher_amplitudes(&m, &g, &amp, &tt, 1, &opts()).unwrap();
        for i in 0..g.nodes() {
            for j in 0..g.nodes() {
                assert_eq!(tt.tau.data[[i, j, 0, 0]], 0.0);
                assert_eq!(tt.dz_tau.data[[i, j, 0, 0]], 1.0);
                assert_eq!(amp.a.data[[i, j, 0, 0]], 0.5);
                assert_eq!(alphas[0].data[[i, j, 0, 0]], 0.0);
            }
        }
        assert!(tt.tau.max_abs() <= 1.2);
        assert!(amp.a.data.iter().all(|&a| a >= amp.a0));
        for r in tt.rays.iter() {
            assert!(r.det > 0.5);
        }
    }

    #[test]
    fn shooting_reaches_target() {
        let m = bump(0.1);
        let target = [0.37, -0.21, 0.83];
        let ray = shoot_to(&m, target, ([0.37, -0.21], 0.83), &opts()).unwrap();
        let st = end_state(&m, ray.x0, ray.s, 5e-3);
        for a in 0..3 {
            assert!((st[IX + a] - target[a]).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_norm_tracks_index() {
        let m = bump(0.1);
        let g = GridSpec { n: 8, ..small_grid() };
        let tt = travel_time_field(&m, &g, &opts()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 1..=g.n {
            for j in 1..=g.n {
                for k in 0..g.z_samples {
                    let gr: f64 = (0..3).map(|a| tt.grad[a].data[[i, j, k, 0]].powi(2)).sum::<f64>().sqrt();
                    let n = m.eval_n(&[g.x(i), g.x(j), g.z(k)]);
                    worst = worst.max((gr - n).abs());
                }
            }
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn regularity_of_constant_and_weak_bump() {
        let fan: Vec<[f64; 2]> = (0..4).map(|i| [-0.6 + 0.4 * i as f64, 0.1]).collect();
        let c = check_regularity(&MediumSpec::constant(1.125), &fan, 1.0, &opts());
        assert!((c.min_det - 1.0).abs() < 1e-8 && c.passed);
        let weak = check_regularity(&bump(0.05), &fan, 1.05, &opts());
        assert!(weak.passed && weak.min_det > 0.5, "{weak:?}");
    }

    #[test]
    fn higher_order_bounds() {
        let m = layered();
        let g = small_grid();
        let tt = travel_time_field(&m, &g, &opts()).unwrap();
        let amp = amplitude_field(&m, &g, &tt).unwrap();
        assert!(higher_amplitudes(&m, &g, &amp, &tt, 3, &opts()).is_err());
    }
}
