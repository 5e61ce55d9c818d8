//! The semi-discrete inverse system as a Carleman-weighted, box-constrained
//! least-squares problem, and the recovery of `n` from the travel time.
//!
//! Unknowns are `w` on `Q_{h,T1}` and the z-slope `q = ∂_z τ` on `Ω_h`;
//! `τ` is the cumulative trapezoid integral of `q` from `z = 0`, so `τ|Γ = 0`
//! holds by construction and the bound `1 <= ∂_z τ <= n0` is a box on `q`.

use std::ops::AddAssign;

use ndarray::{s, Array1, Array4, ArrayView4, Axis, Zip};
use serde::Serialize;

use crate::carleman::CarlemanParams;
use crate::error::InversionError;
use crate::fdgrid::{
    apply_axis, apply_axis_transpose, theta_nodes, Domain, GridSpec, SemiDiscreteField, Stencil,
};
use crate::forward::TransformedData;
use crate::scalar::{trapezoid_weights, Real};

use Stencil::{SampledD1 as D1, SampledD2 as D2, TransverseD1 as X1, TransverseD2 as X2};

/// A priori bounds on the unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibleSet<T> {
    /// Cap `M`, enforced node-wise on `|w|` and `τ`.
    pub m_cap: T,
    pub n0: T,
    /// Floor for `w(·, 0)`.
    pub a0: T,
}

impl<T: Real> AdmissibleSet<T> {
    pub fn new(m_cap: T, n0: T, a0: T) -> Result<Self, InversionError> {
        if !(n0 >= T::one()) {
            return Err(InversionError::InvalidProblem(format!("n0 = {n0} is below 1")));
        }
        if !(a0 > T::zero()) {
            return Err(InversionError::InvalidProblem(format!("A0 = {a0} must be positive")));
        }
        if !(m_cap > n0 && m_cap > a0) {
            return Err(InversionError::InvalidProblem(format!(
                "M = {m_cap} must exceed n0 and A0"
            )));
        }
        Ok(Self { m_cap, n0, a0 })
    }
}

/// Weights of the three parts of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyWeights<T> {
    pub r1: T,
    pub r2: T,
    /// `β`, multiplying every boundary mismatch.
    pub boundary: T,
}

impl<T: Real> PenaltyWeights<T> {
    /// Unit residual weights and `β = 100 λ^3`.
    pub fn for_lambda(lambda: T) -> Self {
        Self {
            r1: T::one(),
            r2: T::one(),
            boundary: T::lit(100.0) * lambda.powi(3),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionProblem<T> {
    pub data: TransformedData<T>,
    pub grid: GridSpec<T>,
    pub carleman: CarlemanParams<T>,
    pub set: AdmissibleSet<T>,
    pub weights: PenaltyWeights<T>,
}

impl<T: Real> InversionProblem<T> {
    pub fn new(
        data: TransformedData<T>,
        grid: GridSpec<T>,
        carleman: CarlemanParams<T>,
        set: AdmissibleSet<T>,
        weights: PenaltyWeights<T>,
    ) -> Result<Self, InversionError> {
        grid.validate()?;
        let t1 = T::lit(3.0) / carleman.alpha;
        if (grid.t_horizon - t1).abs() > T::lit(1e-9) * t1 {
            return Err(InversionError::InvalidProblem(format!(
                "grid horizon {} differs from T1 = 3/alpha = {t1}",
                grid.t_horizon
            )));
        }
        for (name, f, dom) in [
            ("g0", &data.g0, Domain::Gamma),
            ("g1", &data.g1, Domain::Gamma),
            ("g2", &data.g2, Domain::Theta),
        ] {
            if f.domain != dom || f.grid != grid {
                return Err(InversionError::InvalidProblem(format!(
                    "{name} does not live on the {} set of the problem grid",
                    dom.name()
                )));
            }
        }
        if (data.t1 - grid.t_horizon).abs() > T::lit(1e-9) * t1 {
            return Err(InversionError::InvalidProblem("data horizon differs from T1".into()));
        }
        for w in [weights.r1, weights.r2, weights.boundary] {
            if !(w >= T::zero()) {
                return Err(InversionError::InvalidProblem("penalty weights must be non-negative".into()));
            }
        }
        Ok(Self {
            data,
            grid,
            carleman,
            set,
            weights,
        })
    }
}

/// Point of the search space.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T> {
    /// `w` on Q, shape `(N+2, N+2, nz, nt)`.
    pub w: Array4<T>,
    /// `∂_z τ` on Ω, shape `(N+2, N+2, nz, 1)`.
    pub q: Array4<T>,
}

impl<T: Real> State<T> {
    pub fn tau(&self, dz: T) -> Array4<T> {
        cumulative_trapezoid(&self.q, dz)
    }

    fn flatten(&self) -> Array1<T> {
        self.w.iter().chain(self.q.iter()).copied().collect()
    }

    fn unflatten(x: &Array1<T>, grid: &GridSpec<T>) -> Self {
        let qs = grid.shape(Domain::Omega);
        let ws = grid.shape(Domain::Q);
        let nw = ws.iter().product::<usize>();
        let w = x.slice(s![..nw]).to_owned().into_shape(ws).expect("Q length");
        let q = x.slice(s![nw..]).to_owned().into_shape(qs).expect("Omega length");
        Self { w, q }
    }
}

fn cumulative_trapezoid<T: Real>(q: &Array4<T>, dz: T) -> Array4<T> {
    let mut tau = Array4::zeros(q.raw_dim());
    let half = T::lit(0.5) * dz;
    Zip::from(tau.lanes_mut(Axis(2)))
        .and(q.lanes(Axis(2)))
        .for_each(|mut t, q| {
            for k in 1..q.len() {
                t[k] = t[k - 1] + half * (q[k - 1] + q[k]);
            }
        });
    tau
}

/// Transpose of [`cumulative_trapezoid`].
fn cumulative_trapezoid_transpose<T: Real>(bar_tau: &Array4<T>, dz: T, bar_q: &mut Array4<T>) {
    let half = T::lit(0.5) * dz;
    Zip::from(bar_tau.lanes(Axis(2)))
        .and(bar_q.lanes_mut(Axis(2)))
        .for_each(|b, mut q| {
            let n = b.len();
            // suffix[k] = Σ_{j >= k} b[j]
            let mut suffix = T::zero();
            for k in (1..n).rev() {
                suffix += b[k];
                // τ_j for j >= k contains q_k with weight dz (j > k) or dz/2 (j = k)
                q[k] += half * (suffix + (suffix - b[k]));
            }
            q[0] += half * suffix;
        });
}

fn mask_interior<T: Real>(a: &mut Array4<T>, n: usize) {
    let nn = n + 2;
    for b in [0, nn - 1] {
        a.index_axis_mut(Axis(0), b).fill(T::zero());
        a.index_axis_mut(Axis(1), b).fill(T::zero());
    }
}

/// Sum over the t-axis, keeping it with length one.
fn sum_t<T: Real>(a: &Array4<T>) -> Array4<T> {
    a.sum_axis(Axis(3)).insert_axis(Axis(3))
}

fn check_floor<T: Real>(w: ArrayView4<T>, a0: T) -> Result<(), InversionError> {
    for ((i, j, k, _), &v) in w.slice(s![.., .., .., 0..1]).indexed_iter() {
        if !(v >= a0) {
            return Err(InversionError::FloorViolation {
                i,
                j,
                k,
                value: v.as_f64(),
                floor: a0.as_f64(),
            });
        }
    }
    Ok(())
}

/// Intermediate fields of the residual evaluation, kept for the adjoint.
struct Tape<T> {
    wt: Array4<T>,
    wzt: Array4<T>,
    wtx: Array4<T>,
    wty: Array4<T>,
    w0: Array4<T>,
    tx: Array4<T>,
    ty: Array4<T>,
    tz: Array4<T>,
    gx: Array4<T>,
    gy: Array4<T>,
    gz: Array4<T>,
    s: Array4<T>,
    r1: Array4<T>,
    r2: Array4<T>,
}

fn bcast<'a, T: Real>(a: &'a Array4<T>, like: &Array4<T>) -> ArrayView4<'a, T> {
    a.broadcast(like.raw_dim()).expect("Omega field broadcasts over t")
}

/// `R1`, `R2` from `w`, `τ` and the z-derivatives of `τ`; both residuals are
/// zeroed off the interior columns.
fn residual_tape<T: Real>(
    grid: &GridSpec<T>,
    w: &Array4<T>,
    tau: &Array4<T>,
    tz: Array4<T>,
    tzz: &Array4<T>,
) -> Tape<T> {
    let (h, dz, dt) = (grid.h(), grid.dz(), grid.dt());
    let two = T::lit(2.0);
    let wt = apply_axis(w, 3, D1, dt);
    let wzt = apply_axis(&apply_axis(w, 2, D1, dz), 3, D1, dt);
    let wtx = apply_axis(&wt, 0, X1, h);
    let wty = apply_axis(&wt, 1, X1, h);
    let mut lap = apply_axis(w, 0, X2, h);
    lap += &apply_axis(w, 1, X2, h);
    lap += &apply_axis(w, 2, D2, dz);

    let w0 = w.slice(s![.., .., .., 0..1]).to_owned();
    let lw = w0.mapv(|v| v.ln());
    let gx = apply_axis(&lw, 0, X1, h);
    let gy = apply_axis(&lw, 1, X1, h);
    let gz = apply_axis(&lw, 2, D1, dz);
    let tx = apply_axis(tau, 0, X1, h);
    let ty = apply_axis(tau, 1, X1, h);
    let mut sdot = &gx * &tx;
    sdot += &(&gy * &ty);
    sdot += &(&gz * &tz);

    let mut r1 = lap;
    Zip::from(&mut r1)
        .and(&wzt)
        .and(&wt)
        .and(bcast(&tz, w))
        .and(bcast(&sdot, w))
        .for_each(|r, &a, &b, &cz, &sv| *r += two * (sv * b - cz * a));
    Zip::from(&mut r1)
        .and(&wtx)
        .and(&wty)
        .and(bcast(&tx, w))
        .and(bcast(&ty, w))
        .for_each(|r, &bx, &by, &cx, &cy| *r -= two * (cx * bx + cy * by));
    let mut r2 = apply_axis(tau, 0, X2, h);
    r2 += &apply_axis(tau, 1, X2, h);
    r2 += tzz;
    r2.scaled_add(two, &sdot);
    mask_interior(&mut r1, grid.n);
    mask_interior(&mut r2, grid.n);
    Tape {
        wt,
        wzt,
        wtx,
        wty,
        w0,
        tx,
        ty,
        tz,
        gx,
        gy,
        gz,
        s: sdot,
        r1,
        r2,
    }
}

/// Adjoints with respect to `w`, `τ`, `∂_z τ` and `∂_z^2 τ` given
/// `b1 = ∂J/∂R1` and `b2 = ∂J/∂R2` (both zero off the interior).
fn residual_adjoint<T: Real>(
    grid: &GridSpec<T>,
    tape: &Tape<T>,
    b1: &Array4<T>,
    b2: &Array4<T>,
) -> (Array4<T>, Array4<T>, Array4<T>, Array4<T>) {
    let (h, dz, dt) = (grid.h(), grid.dz(), grid.dt());
    let two = T::lit(2.0);
    let m2 = -two;
    let mut bw = Array4::zeros(b1.raw_dim());
    apply_axis_transpose(b1, 0, X2, h, &mut bw);
    apply_axis_transpose(b1, 1, X2, h, &mut bw);
    apply_axis_transpose(b1, 2, D2, dz, &mut bw);

    // -2 τ_z w_zt
    let x = &bcast(&tape.tz, b1) * b1 * m2;
    let mut bwz = Array4::zeros(b1.raw_dim());
    apply_axis_transpose(&x, 3, D1, dt, &mut bwz);
    apply_axis_transpose(&bwz, 2, D1, dz, &mut bw);
    let mut btz = sum_t(&(&tape.wzt * b1)) * m2;

    // -2 τ_x w_tx - 2 τ_y w_ty + 2 s w_t
    let mut bwt = &bcast(&tape.s, b1) * b1 * two;
    let yx = &bcast(&tape.tx, b1) * b1 * m2;
    apply_axis_transpose(&yx, 0, X1, h, &mut bwt);
    let yy = &bcast(&tape.ty, b1) * b1 * m2;
    apply_axis_transpose(&yy, 1, X1, h, &mut bwt);
    apply_axis_transpose(&bwt, 3, D1, dt, &mut bw);
    let mut btx = sum_t(&(&tape.wtx * b1)) * m2;
    let mut bty = sum_t(&(&tape.wty * b1)) * m2;
    let mut bs = sum_t(&(&tape.wt * b1)) * two;

    let mut btau = Array4::zeros(b2.raw_dim());
    apply_axis_transpose(b2, 0, X2, h, &mut btau);
    apply_axis_transpose(b2, 1, X2, h, &mut btau);
    let btzz = b2.clone();
    bs.scaled_add(two, b2);

    btx += &(&bs * &tape.gx);
    bty += &(&bs * &tape.gy);
    btz += &(&bs * &tape.gz);
    let mut blw = Array4::zeros(b2.raw_dim());
    apply_axis_transpose(&(&bs * &tape.tx), 0, X1, h, &mut blw);
    apply_axis_transpose(&(&bs * &tape.ty), 1, X1, h, &mut blw);
    apply_axis_transpose(&(&bs * &tape.tz), 2, D1, dz, &mut blw);
    Zip::from(bw.slice_mut(s![.., .., .., 0..1]))
        .and(&blw)
        .and(&tape.w0)
        .for_each(|b, &l, &w| *b += l / w);
    apply_axis_transpose(&btx, 0, X1, h, &mut btau);
    apply_axis_transpose(&bty, 1, X1, h, &mut btau);
    (bw, btau, btz, btzz)
}

/// Residuals of the inverse system at `(w, τ)`, with `∂_z τ` and `∂_z^2 τ`
/// taken by the sampled stencils. Both vanish off the interior columns.
pub fn residuals<T: Real>(
    w: &SemiDiscreteField<T>,
    tau: &SemiDiscreteField<T>,
    a0: T,
) -> Result<(SemiDiscreteField<T>, SemiDiscreteField<T>), InversionError> {
    w.require(&[Domain::Q])?;
    tau.require(&[Domain::Omega])?;
    if w.grid.n != tau.grid.n || w.grid.z_samples != tau.grid.z_samples {
        return Err(InversionError::InvalidProblem("w and tau live on different grids".into()));
    }
    check_floor(w.data.view(), a0)?;
    let g = &w.grid;
    let tz = apply_axis(&tau.data, 2, D1, g.dz());
    let tzz = apply_axis(&tau.data, 2, D2, g.dz());
    let tape = residual_tape(g, &w.data, &tau.data, tz, &tzz);
    Ok((
        SemiDiscreteField::from_array(g, Domain::Q, tape.r1)?,
        SemiDiscreteField::from_array(g, Domain::Omega, tape.r2)?,
    ))
}

/// Quadrature weights of every term of the objective, precomputed per problem.
#[derive(Debug, Clone)]
struct Weights<T> {
    /// `h^2 ϖ_z ϖ_t e^{-2λ(z + αt)}` on interior Q nodes.
    q: Array4<T>,
    /// `h^2 ϖ_z e^{-2λz}` on interior Ω nodes.
    omega: Array4<T>,
    /// `h^2 ϖ_t` on interior Γ nodes (H1hΓ).
    gamma_h1: Array4<T>,
    /// `h ϖ_t` on interior Γ nodes (L2hΓ).
    gamma_l2: Array4<T>,
    /// `h ϖ_z ϖ_t` times face multiplicity on Θ (L2hΘ).
    theta: Array4<T>,
    /// Same on Ω.
    theta_omega: Array4<T>,
    /// `h` on interior nodes of `z = 0`.
    surface: Array4<T>,
    z: Array4<T>,
}

impl<T: Real> Weights<T> {
    fn new(p: &InversionProblem<T>) -> Self {
        let g = &p.grid;
        let (nn, nz, nt) = (g.nodes(), g.z_samples, g.t_samples);
        let h = g.h();
        let lam2 = T::lit(2.0) * p.carleman.lambda;
        let wz = trapezoid_weights(nz, g.dz());
        let wt = trapezoid_weights(nt, g.dt());
        let inner = |i: usize, j: usize| if g.is_interior(i, j) { T::one() } else { T::zero() };
        let mut mult = ndarray::Array2::<T>::zeros((nn, nn));
        for (i, j) in theta_nodes(g.n) {
            mult[[i, j]] += T::one();
        }
        let decay_t: Vec<T> = (0..nt).map(|m| (-lam2 * p.carleman.alpha * g.t(m)).exp()).collect();
        let decay_z: Vec<T> = (0..nz).map(|k| (-lam2 * g.z(k)).exp()).collect();
        Self {
            q: Array4::from_shape_fn((nn, nn, nz, nt), |(i, j, k, m)| {
                inner(i, j) * h * h * wz[k] * wt[m] * decay_z[k] * decay_t[m]
            }),
            omega: Array4::from_shape_fn((nn, nn, nz, 1), |(i, j, k, _)| {
                inner(i, j) * h * h * wz[k] * decay_z[k]
            }),
            gamma_h1: Array4::from_shape_fn((nn, nn, 1, nt), |(i, j, _, m)| inner(i, j) * h * h * wt[m]),
            gamma_l2: Array4::from_shape_fn((nn, nn, 1, nt), |(i, j, _, m)| inner(i, j) * h * wt[m]),
            theta: Array4::from_shape_fn((nn, nn, nz, nt), |(i, j, k, m)| mult[[i, j]] * h * wz[k] * wt[m]),
            theta_omega: Array4::from_shape_fn((nn, nn, nz, 1), |(i, j, k, _)| mult[[i, j]] * h * wz[k]),
            surface: Array4::from_shape_fn((nn, nn, 1, 1), |(i, j, _, _)| inner(i, j) * h),
            z: Array4::from_shape_fn((nn, nn, nz, 1), |(_, _, k, _)| g.z(k)),
        }
    }
}

/// Value of the objective split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveParts<T> {
    pub total: T,
    pub r1: T,
    pub r2: T,
    pub boundary: T,
}

fn weighted_sq<T: Real>(e: &Array4<T>, c: &Array4<T>) -> T {
    Zip::from(e).and(c).fold(T::zero(), |a, &e, &c| a + c * e * e)
}

/// Every residual of the objective, with the tape for the adjoint.
struct Residuals<T> {
    tape: Tape<T>,
    /// `w|Γ - g0` and its t-derivative.
    e0: Array4<T>,
    e0t: Array4<T>,
    /// `w_z|Γ - g1`.
    e1: Array4<T>,
    /// `w - g2`, used on Θ.
    e2: Array4<T>,
    /// `τ_z|Γ - 1`.
    eq: Array4<T>,
    /// `τ - z`, used on Θ.
    et: Array4<T>,
}

/// Cotangents of [`Residuals`], field by field.
struct Cotangents<T> {
    r1: Array4<T>,
    r2: Array4<T>,
    e0: Array4<T>,
    e0t: Array4<T>,
    e1: Array4<T>,
    e2: Array4<T>,
    eq: Array4<T>,
    et: Array4<T>,
}

fn residual_set<T: Real>(
    p: &InversionProblem<T>,
    wts: &Weights<T>,
    x: &State<T>,
) -> Result<Residuals<T>, InversionError> {
    check_floor(x.w.view(), p.set.a0)?;
    let g = &p.grid;
    let (dz, dt) = (g.dz(), g.dt());
    let tau = x.tau(dz);
    let tzz = apply_axis(&x.q, 2, D1, dz);
    let tape = residual_tape(g, &x.w, &tau, x.q.clone(), &tzz);
    let top = |k: usize| x.w.slice(s![.., .., k..k + 1, ..]);
    let e0 = &top(0) - &p.data.g0.data;
    let e0t = apply_axis(&e0, 3, D1, dt);
    let e1 = (&top(0) * T::lit(-1.5) + &top(1) * T::lit(2.0) - &top(2) * T::lit(0.5)) / dz
        - &p.data.g1.data;
    let e2 = &x.w - &p.data.g2.data;
    let eq = x.q.slice(s![.., .., 0..1, ..]).mapv(|v| v - T::one());
    let et = &tau - &wts.z;
    Ok(Residuals {
        tape,
        e0,
        e0t,
        e1,
        e2,
        eq,
        et,
    })
}

/// Residuals paired with their quadrature weights and penalty factors.
fn weighted_terms<'a, T: Real>(
    p: &InversionProblem<T>,
    wts: &'a Weights<T>,
    r: &'a Residuals<T>,
) -> [(&'a Array4<T>, &'a Array4<T>, T); 8] {
    let (a, b, c) = (p.weights.r1, p.weights.r2, p.weights.boundary);
    [
        (&r.tape.r1, &wts.q, a),
        (&r.tape.r2, &wts.omega, b),
        (&r.e0, &wts.gamma_h1, c),
        (&r.e0t, &wts.gamma_h1, c),
        (&r.e1, &wts.gamma_l2, c),
        (&r.e2, &wts.theta, c),
        (&r.eq, &wts.surface, c),
        (&r.et, &wts.theta_omega, c),
    ]
}

fn objective_parts<T: Real>(p: &InversionProblem<T>, wts: &Weights<T>, r: &Residuals<T>) -> ObjectiveParts<T> {
    let vals: Vec<T> = weighted_terms(p, wts, r)
        .iter()
        .map(|(e, c, f)| *f * weighted_sq(e, c))
        .collect();
    let boundary = vals[2..].iter().copied().sum::<T>();
    ObjectiveParts {
        total: vals[0] + vals[1] + boundary,
        r1: vals[0],
        r2: vals[1],
        boundary,
    }
}

/// Cotangent `f(residual, weight * factor)` for every term.
fn cotangents<T: Real>(
    p: &InversionProblem<T>,
    wts: &Weights<T>,
    r: &Residuals<T>,
    mut f: impl FnMut(T, T) -> T,
) -> Cotangents<T> {
    let mut out: Vec<Array4<T>> = weighted_terms(p, wts, r)
        .iter()
        .map(|(e, c, fac)| {
            let mut o = Array4::zeros(e.raw_dim());
            Zip::from(&mut o)
                .and(*e)
                .and(*c)
                .for_each(|o, &e, &c| *o = f(e, c * *fac));
            o
        })
        .collect();
    let mut next = || out.remove(0);
    Cotangents {
        r1: next(),
        r2: next(),
        e0: next(),
        e0t: next(),
        e1: next(),
        e2: next(),
        eq: next(),
        et: next(),
    }
}

/// Transpose of the linearized residual map applied to `c`.
fn pullback<T: Real>(p: &InversionProblem<T>, r: &Residuals<T>, c: &Cotangents<T>) -> State<T> {
    let g = &p.grid;
    let (dz, dt) = (g.dz(), g.dt());
    let (mut bw, mut btau, btz, btzz) = residual_adjoint(g, &r.tape, &c.r1, &c.r2);
    let mut be0 = c.e0.clone();
    apply_axis_transpose(&c.e0t, 3, D1, dt, &mut be0);
    let inv = T::one() / dz;
    {
        let mut top = bw.slice_mut(s![.., .., 0..1, ..]);
        top += &be0;
        top.scaled_add(T::lit(-1.5) * inv, &c.e1);
    }
    bw.slice_mut(s![.., .., 1..2, ..]).scaled_add(T::lit(2.0) * inv, &c.e1);
    bw.slice_mut(s![.., .., 2..3, ..]).scaled_add(T::lit(-0.5) * inv, &c.e1);
    bw += &c.e2;
    btau += &c.et;
    let mut bq = btz;
    apply_axis_transpose(&btzz, 2, D1, dz, &mut bq);
    cumulative_trapezoid_transpose(&btau, dz, &mut bq);
    bq.slice_mut(s![.., .., 0..1, ..]).add_assign(&c.eq);
    State { w: bw, q: bq }
}

/// Linearized residual map applied to the direction `v`, as residual-shaped
/// fields in the order of [`weighted_terms`].
fn push_forward<T: Real>(p: &InversionProblem<T>, r: &Residuals<T>, v: &State<T>) -> [Array4<T>; 8] {
    let g = &p.grid;
    let (h, dz, dt) = (g.h(), g.dz(), g.dt());
    let two = T::lit(2.0);
    let tp = &r.tape;
    let dw = &v.w;
    let dtau = v.tau(dz);
    let dtz = &v.q;
    let dwt = apply_axis(dw, 3, D1, dt);
    let dwzt = apply_axis(&apply_axis(dw, 2, D1, dz), 3, D1, dt);
    let dwtx = apply_axis(&dwt, 0, X1, h);
    let dwty = apply_axis(&dwt, 1, X1, h);
    let mut d1 = apply_axis(dw, 0, X2, h);
    d1 += &apply_axis(dw, 1, X2, h);
    d1 += &apply_axis(dw, 2, D2, dz);

    let dlw = &dw.slice(s![.., .., .., 0..1]) / &tp.w0;
    let dtx = apply_axis(&dtau, 0, X1, h);
    let dty = apply_axis(&dtau, 1, X1, h);
    let mut ds = &apply_axis(&dlw, 0, X1, h) * &tp.tx;
    ds += &(&apply_axis(&dlw, 1, X1, h) * &tp.ty);
    ds += &(&apply_axis(&dlw, 2, D1, dz) * &tp.tz);
    ds += &(&tp.gx * &dtx);
    ds += &(&tp.gy * &dty);
    ds += &(&tp.gz * dtz);

    Zip::from(&mut d1)
        .and(&tp.wzt)
        .and(&dwzt)
        .and(bcast(dtz, dw))
        .and(bcast(&tp.tz, dw))
        .for_each(|o, &a, &da, &dc, &c| *o -= two * (dc * a + c * da));
    Zip::from(&mut d1)
        .and(&tp.wtx)
        .and(&dwtx)
        .and(bcast(&dtx, dw))
        .and(bcast(&tp.tx, dw))
        .for_each(|o, &a, &da, &dc, &c| *o -= two * (dc * a + c * da));
    Zip::from(&mut d1)
        .and(&tp.wty)
        .and(&dwty)
        .and(bcast(&dty, dw))
        .and(bcast(&tp.ty, dw))
        .for_each(|o, &a, &da, &dc, &c| *o -= two * (dc * a + c * da));
    Zip::from(&mut d1)
        .and(&tp.wt)
        .and(&dwt)
        .and(bcast(&ds, dw))
        .and(bcast(&tp.s, dw))
        .for_each(|o, &a, &da, &dc, &c| *o += two * (dc * a + c * da));
    let mut d2 = apply_axis(&dtau, 0, X2, h);
    d2 += &apply_axis(&dtau, 1, X2, h);
    d2 += &apply_axis(dtz, 2, D1, dz);
    d2.scaled_add(two, &ds);
    mask_interior(&mut d1, g.n);
    mask_interior(&mut d2, g.n);

    let top = |k: usize| dw.slice(s![.., .., k..k + 1, ..]);
    let de0 = top(0).to_owned();
    let de0t = apply_axis(&de0, 3, D1, dt);
    let de1 = (&top(0) * T::lit(-1.5) + &top(1) * two - &top(2) * T::lit(0.5)) / dz;
    let deq = dtz.slice(s![.., .., 0..1, ..]).to_owned();
    [d1, d2, de0, de0t, de1, dw.clone(), deq, dtau]
}

struct Evaluation<T> {
    parts: ObjectiveParts<T>,
    res: Residuals<T>,
}

fn evaluate<T: Real>(
    p: &InversionProblem<T>,
    wts: &Weights<T>,
    x: &State<T>,
) -> Result<(Evaluation<T>, State<T>), InversionError> {
    let res = residual_set(p, wts, x)?;
    let parts = objective_parts(p, wts, &res);
    let two = T::lit(2.0);
    let cot = cotangents(p, wts, &res, |e, c| two * c * e);
    let grad = pullback(p, &res, &cot);
    Ok((Evaluation { parts, res }, grad))
}

/// Objective value and gradient at `x`.
pub fn objective<T: Real>(
    x: &State<T>,
    problem: &InversionProblem<T>,
) -> Result<(ObjectiveParts<T>, State<T>), InversionError> {
    let wts = Weights::new(problem);
    let (e, grad) = evaluate(problem, &wts, x)?;
    Ok((e.parts, grad))
}

/// Diagonal of the Gauss-Newton Hessian, estimated from random sign probes of
/// the weighted residual space pulled back through the adjoint.
fn gauss_newton_diagonal<T: Real>(
    p: &InversionProblem<T>,
    wts: &Weights<T>,
    res: &Residuals<T>,
    probes: usize,
) -> Array1<T> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut acc: Option<Array1<T>> = None;
    for _ in 0..probes {
        let cot = cotangents(p, wts, res, |_, c| {
            let sign = if rng.gen::<bool>() { T::one() } else { -T::one() };
            sign * c.sqrt()
        });
        let sq = pullback(p, res, &cot).flatten().mapv(|v| v * v);
        acc = Some(match acc {
            Some(a) => a + sq,
            None => sq,
        });
    }
    let mut d = acc.expect("at least one probe") * (T::lit(2.0) / T::of_usize(probes));
    let floor = d.iter().fold(T::zero(), |m, &v| m.max(v)) * T::lit(1e-12);
    d.mapv_inplace(|v| v.max(floor).max(T::min_positive_value()));
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Initialization {
    /// `τ = z`, `w ≡ max(mean g0, A0)`.
    Flat,
    /// `τ = z`, `w` extends `g0` in z on interior columns and equals `g2` on
    /// the lateral layers.
    DataExtension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    /// Projected Gauss-Newton: preconditioned conjugate gradients on the free
    /// variables for the Gauss-Newton model, Levenberg damping.
    GaussNewton,
    /// Projected limited-memory BFGS.
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub method: Method,
    pub max_iter: usize,
    /// L-BFGS memory.
    pub memory: usize,
    /// Stop when the sup-norm of the projected gradient falls below this.
    pub grad_tol: f64,
    /// Stop when `J` drops by less than this fraction over `stall_window` iterations.
    pub ftol: f64,
    pub stall_window: usize,
    /// Iterations between refreshes of the diagonal metric.
    pub precondition_every: usize,
    pub probes: usize,
    /// Inner conjugate-gradient iterations per Gauss-Newton step.
    pub cg_max: usize,
    /// Relative residual at which the inner solve stops.
    pub cg_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::GaussNewton,
            max_iter: 200,
            memory: 10,
            grad_tol: 1e-12,
            ftol: 1e-10,
            stall_window: 10,
            precondition_every: 5,
            probes: 16,
            cg_max: 150,
            cg_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub r1: f64,
    pub r2: f64,
    pub boundary: f64,
    pub proj_grad: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    Gradient,
    Stagnation,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub stop: StopReason,
    pub objective: ObjectiveParts<f64>,
    /// Unweighted `L2h(Q)` norm of `R1`.
    pub r1_norm: f64,
    /// Unweighted `L2h(Ω)` norm of `R2`.
    pub r2_norm: f64,
    pub active_w_floor: usize,
    pub active_w_cap: usize,
    pub active_q_lower: usize,
    pub active_q_upper: usize,
    /// Nodes where `|∇ʰτ| > n0`; this bound is not a box and is only monitored.
    pub gradient_cap_violations: usize,
    pub flagged_nodes: Vec<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct InversionResult<T> {
    pub w_hat: SemiDiscreteField<T>,
    pub tau_hat: SemiDiscreteField<T>,
    /// The `∂_z τ` unknown, from which `tau_hat` is integrated.
    pub tau_z_hat: SemiDiscreteField<T>,
    pub n_hat: SemiDiscreteField<T>,
    pub diagnostics: Diagnostics,
    pub trace: Vec<IterRecord>,
}

struct Bounds<T> {
    lo: Array1<T>,
    hi: Array1<T>,
}

impl<T: Real> Bounds<T> {
    fn new(p: &InversionProblem<T>) -> Self {
        let g = &p.grid;
        let set = &p.set;
        let mut lo = State {
            w: Array4::from_elem(g.shape(Domain::Q), -set.m_cap),
            q: Array4::from_elem(g.shape(Domain::Omega), T::one()),
        };
        lo.w.slice_mut(s![.., .., .., 0..1]).fill(set.a0);
        let hi = State {
            w: Array4::from_elem(g.shape(Domain::Q), set.m_cap),
            q: Array4::from_elem(g.shape(Domain::Omega), set.n0),
        };
        Self {
            lo: lo.flatten(),
            hi: hi.flatten(),
        }
    }

    fn project(&self, x: &mut Array1<T>) {
        Zip::from(x)
            .and(&self.lo)
            .and(&self.hi)
            .for_each(|v, &l, &h| *v = v.max(l).min(h));
    }

    /// `g` with the components pushing out of an active bound removed.
    fn projected(&self, x: &Array1<T>, g: &Array1<T>) -> Array1<T> {
        let mut out = g.clone();
        Zip::from(&mut out)
            .and(x)
            .and(&self.lo)
            .and(&self.hi)
            .for_each(|o, &x, &l, &h| {
                if (x <= l && *o > T::zero()) || (x >= h && *o < T::zero()) {
                    *o = T::zero();
                }
            });
        out
    }
}

pub fn initial_state<T: Real>(p: &InversionProblem<T>, init: Initialization) -> State<T> {
    let g = &p.grid;
    let q = Array4::from_elem(g.shape(Domain::Omega), T::one());
    let interior_mean = {
        let mut acc = T::zero();
        let mut count = 0usize;
        for ((i, j, _, _), &v) in p.data.g0.data.indexed_iter() {
            if g.is_interior(i, j) {
                acc += v;
                count += 1;
            }
        }
        acc / T::of_usize(count.max(1))
    };
    let w = match init {
        Initialization::Flat => Array4::from_elem(g.shape(Domain::Q), interior_mean.max(p.set.a0)),
        Initialization::DataExtension => {
            let mut w = Array4::from_shape_fn(g.shape(Domain::Q), |(i, j, _, m)| p.data.g0.data[[i, j, 0, m]]);
            for (i, j) in theta_nodes(g.n) {
                w.slice_mut(s![i, j, .., ..])
                    .assign(&p.data.g2.data.slice(s![i, j, .., ..]));
            }
            w
        }
    };
    let mut x = State { w, q }.flatten();
    Bounds::new(p).project(&mut x);
    State::unflatten(&x, g)
}

fn dot<T: Real>(a: &Array1<T>, b: &Array1<T>) -> T {
    Zip::from(a).and(b).fold(T::zero(), |s, &x, &y| s + x * y)
}

fn sup<T: Real>(a: &Array1<T>) -> T {
    a.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

/// `-H0 g` refined by the stored pairs, with `H0 = γ diag^{-1}`.
fn lbfgs_direction<T: Real>(
    memory: &std::collections::VecDeque<(Array1<T>, Array1<T>, T)>,
    pg: &Array1<T>,
    diag: &Array1<T>,
) -> Array1<T> {
    let mut d = pg.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (sv, yv, rho) in memory.iter().rev() {
        let a = *rho * dot(sv, &d);
        d.scaled_add(-a, yv);
        alphas.push(a);
    }
    let gamma = match memory.back() {
        Some((sv, yv, _)) => dot(sv, yv) / dot(yv, &(yv / diag)),
        None => T::one(),
    };
    d = &d / diag * gamma;
    for ((sv, yv, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = *rho * dot(yv, &d);
        d.scaled_add(*a - b, sv);
    }
    d.mapv(|v| -v)
}

/// Approximate minimizer of the damped Gauss-Newton model over the free
/// variables, by conjugate gradients preconditioned with `diag`.
#[allow(clippy::too_many_arguments)]
fn gauss_newton_direction<T: Real>(
    p: &InversionProblem<T>,
    wts: &Weights<T>,
    res: &Residuals<T>,
    pg: &Array1<T>,
    free: &Array1<T>,
    diag: &Array1<T>,
    mu: T,
    opts: &SolverOptions,
) -> Array1<T> {
    let g = &p.grid;
    let two = T::lit(2.0);
    let hess = |v: &Array1<T>| -> Array1<T> {
        let jv = push_forward(p, res, &State::unflatten(&(v * free), g));
        let terms = weighted_terms(p, wts, res);
        let mut cot: Vec<Array4<T>> = jv
            .into_iter()
            .zip(terms.iter())
            .map(|(a, (_, c, f))| a * *c * (two * *f))
            .collect();
        let mut next = || cot.remove(0);
        let c = Cotangents {
            r1: next(),
            r2: next(),
            e0: next(),
            e0t: next(),
            e1: next(),
            e2: next(),
            eq: next(),
            et: next(),
        };
        let mut out = pullback(p, res, &c).flatten() * free;
        out.scaled_add(mu, &(diag * v));
        out
    };
    let b = pg.mapv(|v| -v);
    let bnorm = dot(&b, &b).sqrt();
    let mut x = Array1::zeros(b.len());
    let mut r = b;
    let precond = diag.mapv(|v| T::one() / (v * (T::one() + mu)));
    let mut z = &r * &precond;
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..opts.cg_max {
        let hd = hess(&dir);
        let curv = dot(&dir, &hd);
        if !(curv > T::zero()) {
            break;
        }
        let a = rz / curv;
        x.scaled_add(a, &dir);
        r.scaled_add(-a, &hd);
        if dot(&r, &r).sqrt().as_f64() <= opts.cg_tol * bnorm.as_f64() {
            break;
        }
        z = &r * &precond;
        let rz_new = dot(&r, &z);
        dir = &z + &(&dir * (rz_new / rz));
        rz = rz_new;
    }
    if x.iter().all(|&v| v == T::zero()) {
        return pg.mapv(|v| -v) / diag;
    }
    x
}

pub fn minimize<T: Real>(
    problem: &InversionProblem<T>,
    init: Initialization,
    opts: &SolverOptions,
) -> Result<InversionResult<T>, InversionError> {
    minimize_from(problem, initial_state(problem, init), opts)
}

/// Projected descent from `start` (projected first). Directions come from
/// Gauss-Newton-CG or L-BFGS, both scaled by a diagonal Gauss-Newton metric;
/// steps use Armijo backtracking along the projection arc.
pub fn minimize_from<T: Real>(
    problem: &InversionProblem<T>,
    start: State<T>,
    opts: &SolverOptions,
) -> Result<InversionResult<T>, InversionError> {
    let g = &problem.grid;
    let wts = Weights::new(problem);
    let bounds = Bounds::new(problem);
    let mut x = start.flatten();
    bounds.project(&mut x);
    let eval = |x: &Array1<T>| -> Result<(Evaluation<T>, Array1<T>), InversionError> {
        let (e, grad) = evaluate(problem, &wts, &State::unflatten(x, g))?;
        Ok((e, grad.flatten()))
    };
    let (mut cur, mut grad) = eval(&x)?;
    let mut memory: std::collections::VecDeque<(Array1<T>, Array1<T>, T)> = Default::default();
    let mut diag = Array1::from_elem(x.len(), T::one());
    let mut trace: Vec<IterRecord> = Vec::new();
    let c1 = T::lit(1e-4);
    let record = |it: usize, e: &Evaluation<T>, pg: T, step: T| IterRecord {
        iteration: it,
        objective: e.parts.total.as_f64(),
        r1: e.parts.r1.as_f64(),
        r2: e.parts.r2.as_f64(),
        boundary: e.parts.boundary.as_f64(),
        proj_grad: pg.as_f64(),
        step: step.as_f64(),
    };
    let neg = |a: &Array1<T>| a.mapv(|v| -v);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    let mut last_step = T::zero();
    let mut mu = T::lit(1e-4);
    for it in 0..=opts.max_iter {
        let pg = bounds.projected(&x, &grad);
        let pg_sup = sup(&pg);
        trace.push(record(it, &cur, pg_sup, last_step));
        iterations = it;
        if pg_sup.as_f64() <= opts.grad_tol {
            stop = StopReason::Gradient;
            break;
        }
        if it >= opts.stall_window {
            let old = trace[it - opts.stall_window].objective;
            if old - cur.parts.total.as_f64() <= opts.ftol * old.abs() {
                stop = StopReason::Stagnation;
                break;
            }
        }
        if it == opts.max_iter {
            break;
        }
        if it % opts.precondition_every.max(1) == 0 {
            diag = gauss_newton_diagonal(problem, &wts, &cur.res, opts.probes.max(1));
            memory.clear();
        }
        let mut d = match opts.method {
            Method::Lbfgs => lbfgs_direction(&memory, &pg, &diag),
            Method::GaussNewton => {
                let free = pg.mapv(|v| if v != T::zero() { T::one() } else { T::zero() });
                gauss_newton_direction(problem, &wts, &cur.res, &pg, &free, &diag, mu, opts)
            }
        };
        d = neg(&bounds.projected(&x, &neg(&d)));
        let mut steepest = memory.is_empty() && opts.method == Method::Lbfgs;
        if !(dot(&d, &grad) < T::zero()) {
            d = neg(&(&pg / &diag));
            steepest = true;
        }
        let mut accepted = None;
        loop {
            let mut step = T::one();
            for _ in 0..60 {
                let mut xn = &x + &(&d * step);
                bounds.project(&mut xn);
                let decrease = dot(&grad, &(&xn - &x));
                if decrease < T::zero() {
                    if let Ok((en, gn)) = eval(&xn) {
                        if en.parts.total <= cur.parts.total + c1 * decrease {
                            accepted = Some((xn, en, gn, step));
                            break;
                        }
                    }
                }
                step *= T::lit(0.5);
            }
            if accepted.is_some() || steepest {
                break;
            }
            memory.clear();
            d = neg(&(&pg / &diag));
            steepest = true;
        }
        let Some((xn, en, gn, step)) = accepted else {
            return Err(InversionError::NonDecrease {
                iteration: it,
                value: cur.parts.total.as_f64(),
            });
        };
        let sv = &xn - &x;
        let yv = &gn - &grad;
        let sy = dot(&sv, &yv);
        if sy > T::lit(1e-12) * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((sv, yv, T::one() / sy));
        }
        x = xn;
        cur = en;
        grad = gn;
        last_step = step;
        mu = if step == T::one() {
            (mu / T::lit(3.0)).max(T::lit(1e-10))
        } else {
            (mu * T::lit(4.0)).min(T::lit(1e4))
        };
    }
    finish(problem, &bounds, x, cur, trace, iterations, stop)
}

fn finish<T: Real>(
    p: &InversionProblem<T>,
    bounds: &Bounds<T>,
    x: Array1<T>,
    cur: Evaluation<T>,
    trace: Vec<IterRecord>,
    iterations: usize,
    stop: StopReason,
) -> Result<InversionResult<T>, InversionError> {
    let g = &p.grid;
    let st = State::unflatten(&x, g);
    let tau = SemiDiscreteField::from_array(g, Domain::Omega, st.tau(g.dz()))?;
    let tau_z = SemiDiscreteField::from_array(g, Domain::Omega, st.q.clone())?;
    let (n_hat, flagged_nodes) = recover_n_with(&tau, &tau_z);
    let count = |pred: &dyn Fn(T, T, T) -> bool, range: std::ops::Range<usize>| {
        range
            .filter(|&i| pred(x[i], bounds.lo[i], bounds.hi[i]))
            .count()
    };
    let nw = st.w.len();
    let w0_idx: Vec<usize> = st
        .w
        .indexed_iter()
        .enumerate()
        .filter(|(_, ((_, _, _, m), _))| *m == 0)
        .map(|(q, _)| q)
        .collect();
    let active_w_floor = w0_idx.iter().filter(|&&i| x[i] <= bounds.lo[i]).count();
    let active_w_cap = count(&|v, _, h| v >= h, 0..nw);
    let active_q_lower = count(&|v, l, _| v <= l, nw..x.len());
    let active_q_upper = count(&|v, _, h| v >= h, nw..x.len());
    let gradient_cap_violations = n_hat
        .data
        .iter()
        .filter(|&&v| v > p.set.n0 * (T::one() + T::lit(1e-12)))
        .count();
    let r1 = SemiDiscreteField::from_array(g, Domain::Q, cur.res.tape.r1)?;
    let r2 = SemiDiscreteField::from_array(g, Domain::Omega, cur.res.tape.r2)?;
    let obj = cur.parts;
    let diagnostics = Diagnostics {
        iterations,
        stop,
        objective: ObjectiveParts {
            total: obj.total.as_f64(),
            r1: obj.r1.as_f64(),
            r2: obj.r2.as_f64(),
            boundary: obj.boundary.as_f64(),
        },
        r1_norm: crate::fdgrid::norm(&r1, crate::fdgrid::Norm::L2hQ)?.as_f64(),
        r2_norm: crate::fdgrid::norm(&r2, crate::fdgrid::Norm::L2hOmega)?.as_f64(),
        active_w_floor,
        active_w_cap,
        active_q_lower,
        active_q_upper,
        gradient_cap_violations,
        flagged_nodes,
    };
    Ok(InversionResult {
        w_hat: SemiDiscreteField::from_array(g, Domain::Q, st.w)?,
        tau_hat: tau,
        tau_z_hat: tau_z,
        n_hat,
        diagnostics,
        trace,
    })
}

/// `n = |∇ʰτ|` with `∂_z τ` by the sampled z-stencil. Nodes with a vanishing
/// gradient are returned alongside.
pub fn recover_n<T: Real>(tau: &SemiDiscreteField<T>) -> (SemiDiscreteField<T>, Vec<(usize, usize, usize)>) {
    recover_n_with(tau, &crate::fdgrid::dz(tau))
}

/// `n = |(τ_x, τ_y, τ_z)|` with the z-component supplied.
pub fn recover_n_with<T: Real>(
    tau: &SemiDiscreteField<T>,
    tau_z: &SemiDiscreteField<T>,
) -> (SemiDiscreteField<T>, Vec<(usize, usize, usize)>) {
    let g = &tau.grid;
    let tx = apply_axis(&tau.data, 0, X1, g.h());
    let ty = apply_axis(&tau.data, 1, X1, g.h());
    let mut n = tau.data.clone();
    Zip::from(&mut n)
        .and(&tx)
        .and(&ty)
        .and(&tau_z.data)
        .for_each(|o, &a, &b, &c| *o = (a * a + b * b + c * c).sqrt());
    let flagged = n
        .indexed_iter()
        .filter(|(_, &v)| v == T::zero())
        .map(|((i, j, k, _), _)| (i, j, k))
        .collect();
    let field = SemiDiscreteField {
        domain: Domain::Omega,
        grid: *g,
        data: n,
    };
    (field, flagged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carleman::Coefficient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> GridSpec<f64> {
        GridSpec {
            n: 2,
            half_width: 1.125,
            h0: 0.1,
            z_samples: 9,
            t_samples: 9,
            t_horizon: 6.0,
            t_window: 2.0,
        }
    }

    fn synthetic_problem(weights: PenaltyWeights<f64>) -> InversionProblem<f64> {
        let g = small_grid();
        let wave = |x: f64, y: f64, z: f64, t: f64| 0.5 + 0.1 * (x + 2.0 * y).sin() * (z - 0.3 * t).cos();
        let w = SemiDiscreteField::from_fn(&g, Domain::Q, wave);
        let g0 = SemiDiscreteField::from_fn(&g, Domain::Gamma, wave);
        let g1 = SemiDiscreteField::from_fn(&g, Domain::Gamma, |x, y, _, t| 0.05 * (x - y).cos() * t.sin());
        let g2 = w.theta_trace().unwrap();
        let data = TransformedData {
            w,
            g0,
            g1,
            g2,
            t1: 6.0,
        };
        let cp = CarlemanParams::new(1.5, 0.5, &Coefficient::Constant(1.2)).unwrap();
        let set = AdmissibleSet::new(10.0, 1.2, 0.05).unwrap();
        InversionProblem::new(data, g, cp, set, weights).unwrap()
    }

    fn random_state(g: &GridSpec<f64>, rng: &mut ChaCha8Rng) -> State<f64> {
        State {
            w: Array4::from_shape_fn(g.shape(Domain::Q), |_| rng.gen_range(0.3..0.8)),
            q: Array4::from_shape_fn(g.shape(Domain::Omega), |_| rng.gen_range(1.0..1.2)),
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = synthetic_problem(PenaltyWeights::for_lambda(1.5));
        let wts = Weights::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_state(&p.grid, &mut rng);
            let v = State {
                w: Array4::from_shape_fn(x.w.raw_dim(), |_| rng.gen_range(-1.0..1.0)),
                q: Array4::from_shape_fn(x.q.raw_dim(), |_| rng.gen_range(-1.0..1.0)),
            };
            let (_, grad) = evaluate(&p, &wts, &x).unwrap();
            let analytic = dot(&grad.flatten(), &v.flatten());
            let eps = 1e-5;
            let shifted = |sgn: f64| {
                let xs = State {
                    w: &x.w + &(&v.w * (sgn * eps)),
                    q: &x.q + &(&v.q * (sgn * eps)),
                };
                objective_parts(&p, &wts, &residual_set(&p, &wts, &xs).unwrap()).total
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1e-300));
        }
        assert!(worst < 1e-5, "worst relative gradient error {worst:e}");
    }

    #[test]
    fn zero_weights_give_zero_objective() {
        let p = synthetic_problem(PenaltyWeights {
            r1: 0.0,
            r2: 0.0,
            boundary: 0.0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_state(&p.grid, &mut rng);
        let (parts, grad) = objective(&x, &p).unwrap();
        assert_eq!(parts.total, 0.0);
        assert!(grad.w.iter().chain(grad.q.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn push_forward_matches_differences() {
        let p = synthetic_problem(PenaltyWeights::for_lambda(1.5));
        let wts = Weights::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_state(&p.grid, &mut rng);
        let v = State {
            w: Array4::from_shape_fn(x.w.raw_dim(), |_| rng.gen_range(-1.0..1.0)),
            q: Array4::from_shape_fn(x.q.raw_dim(), |_| rng.gen_range(-1.0..1.0)),
        };
        let base = residual_set(&p, &wts, &x).unwrap();
        let lin = push_forward(&p, &base, &v);
        let eps = 1e-6;
        let at = |sgn: f64| {
            let xs = State {
                w: &x.w + &(&v.w * (sgn * eps)),
                q: &x.q + &(&v.q * (sgn * eps)),
            };
            residual_set(&p, &wts, &xs).unwrap()
        };
        let (plus, minus) = (at(1.0), at(-1.0));
        let tp = weighted_terms(&p, &wts, &plus);
        let tm = weighted_terms(&p, &wts, &minus);
        for (q, l) in lin.iter().enumerate() {
            let fd = (tp[q].0 - tm[q].0) / (2.0 * eps);
            let scale = fd.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
            let err = (&fd - l).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(err < 1e-6 * scale, "term {q}: {err:e} vs scale {scale:e}");
        }
    }

    fn constant_problem() -> InversionProblem<f64> {
        let g = small_grid();
        let w = SemiDiscreteField::from_fn(&g, Domain::Q, |_, _, _, _| 0.5);
        let data = TransformedData {
            g0: w.gamma_trace().unwrap(),
            g1: SemiDiscreteField::zeros(&g, Domain::Gamma),
            g2: w.theta_trace().unwrap(),
            w,
            t1: 6.0,
        };
        let cp = CarlemanParams::new(1.5, 0.5, &Coefficient::Constant(1.2)).unwrap();
        let set = AdmissibleSet::new(10.0, 1.2, 0.05).unwrap();
        InversionProblem::new(data, g, cp, set, PenaltyWeights::for_lambda(1.5)).unwrap()
    }

    #[test]
    fn constant_truth_has_zero_residuals() {
        let g = small_grid();
        let w = SemiDiscreteField::from_fn(&g, Domain::Q, |_, _, _, _| 0.5);
        let tau = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, z, _| z);
        let (r1, r2) = residuals(&w, &tau, 0.1).unwrap();
        assert!(r1.max_abs() < 1e-12);
        assert!(r2.max_abs() < 1e-12);
    }

    #[test]
    fn quadratic_depth_perturbation_shows_in_r2() {
        let g = small_grid();
        let w = SemiDiscreteField::from_fn(&g, Domain::Q, |_, _, _, _| 0.5);
        let tau = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, z, _| z + 0.1 * z * z);
        let (r1, r2) = residuals(&w, &tau, 0.1).unwrap();
        for ((i, j, _, _), &v) in r2.data.indexed_iter() {
            let want = if g.is_interior(i, j) { 0.2 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "R2 = {v} at ({i}, {j})");
        }
        assert!(r1.max_abs() < 1e-12);
    }

    #[test]
    fn floor_violation_is_reported() {
        let g = small_grid();
        let mut w = SemiDiscreteField::from_fn(&g, Domain::Q, |_, _, _, _| 0.5);
        w.data[[1, 2, 3, 0]] = 0.01;
        let tau = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, z, _| z);
        assert!(matches!(
            residuals(&w, &tau, 0.1),
            Err(InversionError::FloorViolation { i: 1, j: 2, k: 3, .. })
        ));
    }

    #[test]
    fn constant_medium_stops_at_iteration_zero() {
        let p = constant_problem();
        let r = minimize(&p, Initialization::Flat, &SolverOptions::default()).unwrap();
        assert_eq!(r.diagnostics.iterations, 0);
        assert_eq!(r.diagnostics.stop, StopReason::Gradient);
        assert!(r.diagnostics.objective.total < 1e-24);
        assert!(r.n_hat.data.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn descent_is_monotone_and_feasible() {
        let p = synthetic_problem(PenaltyWeights::for_lambda(1.5));
        for method in [Method::GaussNewton, Method::Lbfgs] {
            let opts = SolverOptions {
                method,
                max_iter: 8,
                ..Default::default()
            };
            let r = minimize(&p, Initialization::DataExtension, &opts).unwrap();
            let obj: Vec<f64> = r.trace.iter().map(|t| t.objective).collect();
            assert!(obj.windows(2).all(|w| w[1] <= w[0]), "{method:?}: {obj:?}");
            assert!(obj.last().unwrap() < &obj[0]);
            let set = p.set;
            assert!(r.w_hat.data.iter().all(|&v| v.abs() <= set.m_cap));
            assert!(r.w_hat.data.slice(s![.., .., .., 0]).iter().all(|&v| v >= set.a0));
            assert!(r.tau_z_hat.data.iter().all(|&v| (1.0..=set.n0).contains(&v)));
            assert!(r.n_hat.data.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn flat_travel_time_gives_unit_index() {
        let g = small_grid();
        let tau = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, z, _| z);
        let (n, flagged) = recover_n(&tau);
        assert!(n.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(flagged.is_empty());
    }

    #[test]
    fn layered_index_recovered_to_second_order() {
        let index = |z: f64| 1.0 + 0.2 * crate::scalar::smoothstep(z).0;
        // Composite Simpson with 2000 panels per unit depth.
        let tau_of = |z: f64| {
            let m = ((z * 2000.0).ceil() as usize).max(2) & !1;
            let d = z / m as f64;
            let mut acc = index(0.0) + index(z);
            for q in 1..m {
                acc += if q % 2 == 1 { 4.0 } else { 2.0 } * index(q as f64 * d);
            }
            acc * d / 3.0
        };
        let err = |nz: usize| {
            let g = GridSpec {
                z_samples: nz,
                ..small_grid()
            };
            let tau = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, z, _| tau_of(z));
            let (n, _) = recover_n(&tau);
            (1..nz - 1)
                .map(|k| (n.data[[1, 1, k, 0]] - index(g.z(k))).abs())
                .fold(0.0f64, f64::max)
        };
        let (coarse, fine) = (err(21), err(41));
        assert!(coarse < 2e-3, "coarse error {coarse:e}");
        assert!(coarse / fine > 3.5, "ratio {}", coarse / fine);
    }

    #[test]
    fn zero_gradient_nodes_are_flagged() {
        let g = small_grid();
        let tau = SemiDiscreteField::zeros(&g, Domain::Omega);
        let (n, flagged) = recover_n(&tau);
        assert_eq!(flagged.len(), n.data.len());
        assert!(n.data.iter().all(|&v| v == 0.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn index_difference_bounded_by_gradient_difference(seed in 0u64..1_000_000) {
            let g = small_grid();
            let n0 = 1.2;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || State {
                w: Array4::zeros(g.shape(Domain::Q)),
                q: Array4::from_shape_fn(g.shape(Domain::Omega), |_| rng.gen_range(1.0..n0)),
            };
            let (a, b) = (draw(), draw());
            let field = |st: &State<f64>| SemiDiscreteField::from_array(&g, Domain::Omega, st.tau(g.dz())).unwrap();
            let qf = |st: &State<f64>| SemiDiscreteField::from_array(&g, Domain::Omega, st.q.clone()).unwrap();
            let (na, _) = recover_n_with(&field(&a), &qf(&a));
            let (nb, _) = recover_n_with(&field(&b), &qf(&b));
            let mut dtau = field(&a);
            dtau.data -= &field(&b).data;
            let dq = SemiDiscreteField::from_array(&g, Domain::Omega, &a.q - &b.q).unwrap();
            let (grad_gap, _) = recover_n_with(&dtau, &dq);
            for ((na, nb), gap) in na.data.iter().zip(nb.data.iter()).zip(grad_gap.data.iter()) {
                proptest::prop_assert!((na - nb).abs() <= n0 * gap + 1e-12);
            }
        }
    }

}
