//! Semi-discrete grid: finite differences in `(x, y)`, uniform samplings in
//! `z` and `t`, the partial-difference operators and the discrete norms.
//!
//! Fields are stored as 4-axis arrays indexed `(i, j, k, m)` with `i, j` the
//! transverse node indices `0..=N+1`, `k` the z-sample and `m` the t-sample.
//! Time independent fields have a t-axis of length one and traces on the
//! source plane have a z-axis of length one.

use ndarray::{Array4, Axis, Zip};
use serde::Serialize;

use crate::error::GridError;
use crate::scalar::{trapezoid_weights, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    /// Interior nodes per transverse axis.
    pub n: usize,
    /// Transverse half-width `X`.
    pub half_width: T,
    /// Lower bound on the transverse step.
    pub h0: T,
    pub z_samples: usize,
    pub t_samples: usize,
    /// Reduced horizon `T1`.
    pub t_horizon: T,
    /// Window end `t1 = 1 / alpha`.
    pub t_window: T,
}

impl<T: Real> GridSpec<T> {
    /// Default desk grid: `N = 8`, `h = 0.25`, 41 z-samples, 61 t-samples.
    pub fn desk(t_horizon: T, t_window: T) -> Self {
        Self {
            n: 8,
            half_width: T::lit(1.125),
            h0: T::lit(0.1),
            z_samples: 41,
            t_samples: 61,
            t_horizon,
            t_window,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::InvalidGrid(m));
        if self.n < 1 {
            return bad("N must be at least 1".into());
        }
        if !(self.h0 > T::zero()) {
            return bad("h0 must be positive".into());
        }
        if self.h() < self.h0 {
            return bad(format!("h = {} is below h0 = {}", self.h(), self.h0));
        }
        if self.z_samples < 4 {
            return bad("need at least 4 z-samples".into());
        }
        if self.t_samples < 4 {
            return bad("need at least 4 t-samples".into());
        }
        if !(self.t_horizon > T::zero()) {
            return bad("T1 must be positive".into());
        }
        if !(self.t_window > T::zero() && self.t_window <= self.t_horizon) {
            return bad("t1 must lie in (0, T1]".into());
        }
        Ok(())
    }

    #[inline]
    pub fn h(&self) -> T {
        T::lit(2.0) * self.half_width / T::of_usize(self.n + 1)
    }

    #[inline]
    pub fn dz(&self) -> T {
        T::one() / T::of_usize(self.z_samples - 1)
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.t_horizon / T::of_usize(self.t_samples - 1)
    }

    /// Number of transverse nodes per axis, boundary layers included.
    #[inline]
    pub fn nodes(&self) -> usize {
        self.n + 2
    }

    #[inline]
    pub fn x(&self, i: usize) -> T {
        -self.half_width + T::of_usize(i) * self.h()
    }

    #[inline]
    pub fn z(&self, k: usize) -> T {
        T::of_usize(k) * self.dz()
    }

    #[inline]
    pub fn t(&self, m: usize) -> T {
        T::of_usize(m) * self.dt()
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i >= 1 && i <= self.n && j >= 1 && j <= self.n
    }

    /// Number of t-samples covering `[0, t1]`, if `t1` falls on the sampling.
    pub fn window_samples(&self) -> Result<usize, GridError> {
        let steps = (self.t_window / self.dt()).as_f64();
        let r = steps.round();
        if (steps - r).abs() > 1e-9 * steps.max(1.0) {
            return Err(GridError::InvalidGrid(format!(
                "t1 = {} is not a multiple of dt = {}",
                self.t_window,
                self.dt()
            )));
        }
        Ok(r as usize + 1)
    }

    /// Same grid with the z and t samplings refined by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            z_samples: (self.z_samples - 1) * factor + 1,
            t_samples: (self.t_samples - 1) * factor + 1,
            ..*self
        }
    }

    pub fn shape(&self, domain: Domain) -> [usize; 4] {
        let nn = self.nodes();
        match domain {
            Domain::Q | Domain::Theta => [nn, nn, self.z_samples, self.t_samples],
            Domain::Omega => [nn, nn, self.z_samples, 1],
            Domain::Gamma => [nn, nn, 1, self.t_samples],
        }
    }
}

/// Which semi-discrete set a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Domain {
    /// `Q_{h,T1}`: nodes x z x t.
    Q,
    /// `Omega_h`: nodes x z.
    Omega,
    /// `Gamma_{h,T1}`: nodes on `z = 0` x t.
    Gamma,
    /// `Theta_{h,T1}`: lateral boundary layers x z x t; interior entries unused.
    Theta,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Q => "Q",
            Domain::Omega => "Omega",
            Domain::Gamma => "Gamma",
            Domain::Theta => "Theta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiDiscreteField<T> {
    pub domain: Domain,
    pub grid: GridSpec<T>,
    pub data: Array4<T>,
}

impl<T: Real> SemiDiscreteField<T> {
    pub fn zeros(grid: &GridSpec<T>, domain: Domain) -> Self {
        Self {
            domain,
            grid: *grid,
            data: Array4::zeros(grid.shape(domain)),
        }
    }

    pub fn from_array(grid: &GridSpec<T>, domain: Domain, data: Array4<T>) -> Result<Self, GridError> {
        let want = grid.shape(domain);
        if data.shape() != want {
            return Err(GridError::InvalidGrid(format!(
                "array shape {:?} does not match {} shape {:?}",
                data.shape(),
                domain.name(),
                want
            )));
        }
        Ok(Self {
            domain,
            grid: *grid,
            data,
        })
    }

    /// Samples `f(x, y, z, t)` on the nodes of `domain`. Unused coordinates are
    /// passed as zero.
    pub fn from_fn(grid: &GridSpec<T>, domain: Domain, f: impl Fn(T, T, T, T) -> T) -> Self {
        let data = Array4::from_shape_fn(grid.shape(domain), |(i, j, k, m)| {
            let z = if domain == Domain::Gamma { T::zero() } else { grid.z(k) };
            let t = if domain == Domain::Omega { T::zero() } else { grid.t(m) };
            f(grid.x(i), grid.x(j), z, t)
        });
        Self {
            domain,
            grid: *grid,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            domain: self.domain,
            grid: self.grid,
            data: self.data.mapv(f),
        }
    }

    fn with_data(&self, data: Array4<T>) -> Self {
        Self {
            domain: self.domain,
            grid: self.grid,
            data,
        }
    }

    pub fn require(&self, domains: &[Domain]) -> Result<(), GridError> {
        if domains.contains(&self.domain) {
            Ok(())
        } else {
            Err(GridError::DomainMismatch {
                expected: domains[0].name(),
                found: self.domain.name(),
            })
        }
    }

    /// Restriction of a Q field to its first `samples` time samples.
    pub fn t_prefix(&self, samples: usize) -> Result<Self, GridError> {
        self.require(&[Domain::Q, Domain::Gamma, Domain::Theta])?;
        if samples < 2 || samples > self.grid.t_samples {
            return Err(GridError::InvalidGrid(format!("cannot keep {samples} t-samples")));
        }
        let mut grid = self.grid;
        grid.t_horizon = self.grid.dt() * T::of_usize(samples - 1);
        grid.t_samples = samples;
        grid.t_window = grid.t_window.min(grid.t_horizon);
        let data = self
            .data
            .slice(ndarray::s![.., .., .., ..samples])
            .to_owned();
        Ok(Self {
            domain: self.domain,
            grid,
            data,
        })
    }

    /// Trace on `z = 0` of a Q field.
    pub fn gamma_trace(&self) -> Result<Self, GridError> {
        self.require(&[Domain::Q])?;
        let data = self.data.slice(ndarray::s![.., .., 0..1, ..]).to_owned();
        Ok(Self {
            domain: Domain::Gamma,
            grid: self.grid,
            data,
        })
    }

    /// Copy with the interior nodes zeroed, tagged as a Theta trace.
    pub fn theta_trace(&self) -> Result<Self, GridError> {
        self.require(&[Domain::Q, Domain::Theta])?;
        let mut data = self.data.clone();
        let n = self.grid.n;
        data.slice_mut(ndarray::s![1..=n, 1..=n, .., ..]).fill(T::zero());
        Ok(Self {
            domain: Domain::Theta,
            grid: self.grid,
            data,
        })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }
}

/// One-dimensional difference stencils along an array axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// Transverse central first difference, zero on boundary layers.
    TransverseD1,
    /// Transverse second difference, zero on boundary layers.
    TransverseD2,
    /// First derivative on a uniform sampling, one-sided second order at ends.
    SampledD1,
    /// Second derivative on a uniform sampling, one-sided second order at ends.
    SampledD2,
}

type Taps<T> = ([(isize, T); 4], usize);

#[inline]
fn taps<T: Real>(stencil: Stencil, len: usize, pos: usize, d: T) -> Taps<T> {
    let z = T::zero();
    let mut out = [(0isize, z); 4];
    let half = T::lit(0.5);
    let count = match stencil {
        Stencil::TransverseD1 => {
            if pos == 0 || pos + 1 >= len {
                0
            } else {
                out[0] = (-1, -half / d);
                out[1] = (1, half / d);
                2
            }
        }
        Stencil::TransverseD2 => {
            if pos == 0 || pos + 1 >= len {
                0
            } else {
                let c = T::one() / (d * d);
                out[0] = (-1, c);
                out[1] = (0, -T::lit(2.0) * c);
                out[2] = (1, c);
                3
            }
        }
        Stencil::SampledD1 => match len {
            0 | 1 => 0,
            2 => {
                let first = pos == 0;
                out[0] = (if first { 0 } else { -1 }, -T::one() / d);
                out[1] = (if first { 1 } else { 0 }, T::one() / d);
                2
            }
            _ => {
                if pos == 0 {
                    out[0] = (0, -T::lit(1.5) / d);
                    out[1] = (1, T::lit(2.0) / d);
                    out[2] = (2, -half / d);
                    3
                } else if pos + 1 == len {
                    out[0] = (0, T::lit(1.5) / d);
                    out[1] = (-1, -T::lit(2.0) / d);
                    out[2] = (-2, half / d);
                    3
                } else {
                    out[0] = (-1, -half / d);
                    out[1] = (1, half / d);
                    2
                }
            }
        },
        Stencil::SampledD2 => {
            let c = T::one() / (d * d);
            match len {
                0..=2 => 0,
                3 => {
                    let base = 1 - pos as isize;
                    out[0] = (base - 1, c);
                    out[1] = (base, -T::lit(2.0) * c);
                    out[2] = (base + 1, c);
                    3
                }
                _ => {
                    if pos == 0 {
                        out[0] = (0, T::lit(2.0) * c);
                        out[1] = (1, -T::lit(5.0) * c);
                        out[2] = (2, T::lit(4.0) * c);
                        out[3] = (3, -c);
                        4
                    } else if pos + 1 == len {
                        out[0] = (0, T::lit(2.0) * c);
                        out[1] = (-1, -T::lit(5.0) * c);
                        out[2] = (-2, T::lit(4.0) * c);
                        out[3] = (-3, -c);
                        4
                    } else {
                        out[0] = (-1, c);
                        out[1] = (0, -T::lit(2.0) * c);
                        out[2] = (1, c);
                        3
                    }
                }
            }
        }
    };
    (out, count)
}

/// Applies `stencil` with spacing `d` along `axis`.
pub fn apply_axis<T: Real>(input: &Array4<T>, axis: usize, stencil: Stencil, d: T) -> Array4<T> {
    let mut out = Array4::zeros(input.raw_dim());
    let len = input.len_of(Axis(axis));
    for pos in 0..len {
        let (tp, count) = taps(stencil, len, pos, d);
        let mut dst = out.index_axis_mut(Axis(axis), pos);
        for &(off, c) in &tp[..count] {
            dst.scaled_add(c, &input.index_axis(Axis(axis), (pos as isize + off) as usize));
        }
    }
    out
}

/// Accumulates the transpose of [`apply_axis`] applied to `bar_out` into `bar_in`.
pub fn apply_axis_transpose<T: Real>(
    bar_out: &Array4<T>,
    axis: usize,
    stencil: Stencil,
    d: T,
    bar_in: &mut Array4<T>,
) {
    let len = bar_out.len_of(Axis(axis));
    for pos in 0..len {
        let (tp, count) = taps(stencil, len, pos, d);
        let src = bar_out.index_axis(Axis(axis), pos);
        for &(off, c) in &tp[..count] {
            bar_in
                .index_axis_mut(Axis(axis), (pos as isize + off) as usize)
                .scaled_add(c, &src);
        }
    }
}

fn transverse<T: Real>(f: &SemiDiscreteField<T>, axis: usize, stencil: Stencil) -> SemiDiscreteField<T> {
    let d = f.grid.h();
    let mut data = apply_axis(&f.data, axis, stencil, d);
    // Only interior (i, j) nodes carry transverse differences.
    let n = f.grid.n;
    let other = 1 - axis;
    for b in [0, n + 1] {
        data.index_axis_mut(Axis(other), b).fill(T::zero());
    }
    f.with_data(data)
}

/// Central first difference in `x` at interior nodes.
pub fn dx<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    transverse(f, 0, Stencil::TransverseD1)
}

pub fn dy<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    transverse(f, 1, Stencil::TransverseD1)
}

pub fn dxx<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    transverse(f, 0, Stencil::TransverseD2)
}

pub fn dyy<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    transverse(f, 1, Stencil::TransverseD2)
}

pub fn dz<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    f.with_data(apply_axis(&f.data, 2, Stencil::SampledD1, f.grid.dz()))
}

pub fn dzz<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    f.with_data(apply_axis(&f.data, 2, Stencil::SampledD2, f.grid.dz()))
}

pub fn dt<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    f.with_data(apply_axis(&f.data, 3, Stencil::SampledD1, f.grid.dt()))
}

pub fn dtt<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    f.with_data(apply_axis(&f.data, 3, Stencil::SampledD2, f.grid.dt()))
}

/// `dxx + dyy + d_zz`, defined at interior transverse nodes.
pub fn laplacian_h<T: Real>(f: &SemiDiscreteField<T>) -> SemiDiscreteField<T> {
    let mut out = dxx(f);
    out.data += &dyy(f).data;
    let mut zz = dzz(f).data;
    let n = f.grid.n;
    for a in 0..2 {
        for b in [0, n + 1] {
            zz.index_axis_mut(Axis(a), b).fill(T::zero());
        }
    }
    out.data += &zz;
    out
}

/// `(dx, dy, d_z)`, with the z component zeroed on boundary layers.
pub fn grad_h<T: Real>(f: &SemiDiscreteField<T>) -> [SemiDiscreteField<T>; 3] {
    let mut z = dz(f);
    let n = f.grid.n;
    for a in 0..2 {
        for b in [0, n + 1] {
            z.data.index_axis_mut(Axis(a), b).fill(T::zero());
        }
    }
    [dx(f), dy(f), z]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Norm {
    H2hQ,
    H1hQ,
    L2hQ,
    H1hOmega,
    L2hOmega,
    H1hGamma,
    L2hGamma,
    L2hTheta,
    C2h,
    /// Max of `|d_z^m s|` for `m <= n`.
    Cnh(usize),
}

/// Sum over interior transverse nodes of `weight * integral(f)` where the
/// integral runs over the z and t samplings by trapezoid.
fn interior_integral<T: Real>(grid: &GridSpec<T>, data: &Array4<T>, transverse_weight: T) -> T {
    let shape = data.shape();
    let axis = |n: usize, d: T| if n == 1 { vec![T::one()] } else { trapezoid_weights(n, d) };
    integrate_columns(grid, data, &axis(shape[2], grid.dz()), &axis(shape[3], grid.dt())) * transverse_weight
}

/// `Σ_{i,j=1..N} w ∫∫ f e^{-cz z - ct t} dz dt`, with `f` piecewise quadratic
/// between samples and the exponential integrated exactly, so steep weights
/// stay accurate on coarse samplings. Zero rates give Simpson's rule.
pub fn weighted_interior_integral<T: Real>(
    grid: &GridSpec<T>,
    data: &Array4<T>,
    transverse_weight: T,
    cz: T,
    ct: T,
) -> T {
    let shape = data.shape();
    let axis = |n: usize, d: T, c: T| if n == 1 { vec![T::one()] } else { exponential_weights(n, d, c) };
    let wz = axis(shape[2], grid.dz(), cz);
    let wt = axis(shape[3], grid.dt(), ct);
    integrate_columns(grid, data, &wz, &wt) * transverse_weight
}

fn integrate_columns<T: Real>(grid: &GridSpec<T>, data: &Array4<T>, wz: &[T], wt: &[T]) -> T {
    let mut total = T::zero();
    for i in 1..=grid.n {
        for j in 1..=grid.n {
            for (k, &a) in wz.iter().enumerate() {
                let mut row = T::zero();
                for (m, &b) in wt.iter().enumerate() {
                    row += b * data[[i, j, k, m]];
                }
                total += a * row;
            }
        }
    }
    total
}

/// `∫_0^2 θ^p e^{-βθ} dθ` for `p = 0, 1, 2`.
fn exp_moments<T: Real>(beta: T) -> [T; 3] {
    if beta.abs() < T::lit(0.25) {
        let mut m = [T::zero(); 3];
        let mut coef = T::one();
        for n in 0..30 {
            for (p, mp) in m.iter_mut().enumerate() {
                let e = (p + n + 1) as i32;
                *mp += coef * T::lit(2.0).powi(e) / T::of_usize(p + n + 1);
            }
            coef = coef * (-beta) / T::of_usize(n + 1);
        }
        m
    } else {
        let e = (-T::lit(2.0) * beta).exp();
        let m0 = (T::one() - e) / beta;
        let m1 = (m0 - T::lit(2.0) * e) / beta;
        let m2 = (T::lit(2.0) * m1 - T::lit(4.0) * e) / beta;
        [m0, m1, m2]
    }
}

/// Weights of `∫_0^{(n-1)d} f(s) e^{-c s} ds` for `f` quadratic on each pair
/// of cells (linear on a trailing odd cell).
pub fn exponential_weights<T: Real>(n: usize, d: T, c: T) -> Vec<T> {
    let beta = c * d;
    let [m0, m1, m2] = exp_moments(beta);
    let half = T::lit(0.5);
    let pair = [
        (m2 - T::lit(3.0) * m1 + T::lit(2.0) * m0) * half,
        T::lit(2.0) * m1 - m2,
        (m2 - m1) * half,
    ];
    let mut w = vec![T::zero(); n];
    let mut k = 0;
    while k + 2 < n {
        let scale = d * (-c * d * T::of_usize(k)).exp();
        for q in 0..3 {
            w[k + q] += scale * pair[q];
        }
        k += 2;
    }
    if k + 1 < n {
        // ∫_0^1 (1 - θ, θ) e^{-βθ} dθ
        let (i0, i1) = if beta.abs() < T::lit(1e-3) {
            let b2 = beta * beta;
            (
                T::one() - beta / T::lit(2.0) + b2 / T::lit(6.0) - b2 * beta / T::lit(24.0),
                T::lit(0.5) - beta / T::lit(3.0) + b2 / T::lit(8.0) - b2 * beta / T::lit(30.0),
            )
        } else {
            let e = (-beta).exp();
            ((T::one() - e) / beta, (T::one() - (T::one() + beta) * e) / (beta * beta))
        };
        let scale = d * (-c * d * T::of_usize(k)).exp();
        w[k] += scale * (i0 - i1);
        w[k + 1] += scale * i1;
    }
    w
}

fn sq_sum<T: Real>(parts: &[&Array4<T>]) -> Array4<T> {
    let mut out = Array4::zeros(parts[0].raw_dim());
    for p in parts {
        Zip::from(&mut out).and(*p).for_each(|o, &v| *o += v * v);
    }
    out
}

/// Squared norm for the integral norms; the C-norms are returned as is.
pub fn norm_sq<T: Real>(f: &SemiDiscreteField<T>, which: Norm) -> Result<T, GridError> {
    let g = &f.grid;
    let h = g.h();
    let h2 = h * h;
    let v = &f.data;
    Ok(match which {
        Norm::H2hQ => {
            f.require(&[Domain::Q])?;
            let vz = dz(f);
            let vzz = dzz(f);
            let vt = dt(f);
            let vzt = dt(&vz);
            // The printed definition lists v^2 both in the z-derivative sum and
            // separately; it is kept twice.
            let e = sq_sum(&[v, &vz.data, &vzz.data, &vzt.data, &vt.data, v]);
            interior_integral(g, &e, h2)
        }
        Norm::H1hQ => {
            f.require(&[Domain::Q])?;
            let e = sq_sum(&[v, &dz(f).data, &dt(f).data]);
            interior_integral(g, &e, h2)
        }
        Norm::L2hQ => {
            f.require(&[Domain::Q])?;
            interior_integral(g, &sq_sum(&[v]), h2)
        }
        Norm::H1hOmega => {
            f.require(&[Domain::Omega])?;
            let e = sq_sum(&[v, &dz(f).data]);
            interior_integral(g, &e, h2)
        }
        Norm::L2hOmega => {
            f.require(&[Domain::Omega])?;
            interior_integral(g, &sq_sum(&[v]), h2)
        }
        Norm::H1hGamma => {
            f.require(&[Domain::Gamma])?;
            let e = sq_sum(&[v, &dt(f).data]);
            interior_integral(g, &e, h2)
        }
        Norm::L2hGamma => {
            f.require(&[Domain::Gamma])?;
            interior_integral(g, &sq_sum(&[v]), h)
        }
        Norm::L2hTheta => {
            f.require(&[Domain::Theta, Domain::Q])?;
            theta_integral(g, &sq_sum(&[v])) * h
        }
        Norm::C2h => {
            f.require(&[Domain::Q])?;
            let vz = dz(f);
            let parts = [f.data.clone(), vz.data.clone(), dzz(f).data, dt(&vz).data];
            parts
                .iter()
                .flat_map(|a| a.iter())
                .fold(T::zero(), |a, &b| a.max(b.abs()))
        }
        Norm::Cnh(order) => {
            f.require(&[Domain::Q, Domain::Omega])?;
            let mut cur = f.clone();
            let mut best = cur.max_abs();
            for _ in 0..order {
                cur = dz(&cur);
                best = best.max(cur.max_abs());
            }
            best
        }
    })
}

/// Norm value (square root of the integral norms).
pub fn norm<T: Real>(f: &SemiDiscreteField<T>, which: Norm) -> Result<T, GridError> {
    let v = norm_sq(f, which)?;
    Ok(match which {
        Norm::C2h | Norm::Cnh(_) => v,
        _ => v.sqrt(),
    })
}

/// Integral over the four lateral faces. Each face carries the nodes of its
/// boundary layer, so the corner columns belong to two faces and are counted
/// twice.
fn theta_integral<T: Real>(grid: &GridSpec<T>, data: &Array4<T>) -> T {
    let nn = grid.nodes();
    let shape = data.shape();
    let wz = trapezoid_weights(shape[2], grid.dz());
    let wt = if shape[3] == 1 {
        vec![T::one()]
    } else {
        trapezoid_weights(shape[3], grid.dt())
    };
    let column = |i: usize, j: usize| {
        let mut s = T::zero();
        for k in 0..shape[2] {
            for m in 0..shape[3] {
                s += wz[k] * wt[m] * data[[i, j, k, m]];
            }
        }
        s
    };
    let mut total = T::zero();
    for a in 0..nn {
        total += column(0, a) + column(nn - 1, a) + column(a, 0) + column(a, nn - 1);
    }
    total
}

/// Lateral boundary node list `(i, j)` in face order, corners repeated.
pub fn theta_nodes(n: usize) -> Vec<(usize, usize)> {
    let nn = n + 2;
    let mut out = Vec::with_capacity(4 * nn);
    for a in 0..nn {
        out.push((0, a));
    }
    for a in 0..nn {
        out.push((nn - 1, a));
    }
    for a in 0..nn {
        out.push((a, 0));
    }
    for a in 0..nn {
        out.push((a, nn - 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> GridSpec<f64> {
        GridSpec::desk(3.0, 1.0)
    }

    fn interior_max_err(f: &SemiDiscreteField<f64>, exact: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let g = f.grid;
        let mut worst: f64 = 0.0;
        for i in 1..=g.n {
            for j in 1..=g.n {
                for k in 0..g.z_samples {
                    let e = (f.data[[i, j, k, 0]] - exact(g.x(i), g.x(j), g.z(k))).abs();
                    worst = worst.max(e);
                }
            }
        }
        worst
    }

    #[test]
    fn default_grid_step() {
        let g = grid();
        assert!((g.h() - 0.25).abs() < 1e-15);
        assert_eq!(g.x(0), -1.125);
        assert!((g.x(9) - 1.125).abs() < 1e-15);
        g.validate().unwrap();
    }

    #[test]
    fn grid_rejects_small_step() {
        let mut g = grid();
        g.n = 30;
        assert!(g.validate().is_err());
    }

    #[test]
    fn dx_of_linear_and_constant() {
        let g = grid();
        let f = SemiDiscreteField::from_fn(&g, Domain::Omega, |x, _, _, _| x);
        assert!(interior_max_err(&dx(&f), |_, _, _| 1.0) < 1e-14);
        let c = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, _, _| 3.0);
        assert_eq!(dx(&c).max_abs(), 0.0);
    }

    #[test]
    fn dx_of_sine_within_taylor_bound() {
        let g = grid();
        let f = SemiDiscreteField::from_fn(&g, Domain::Omega, |x, _, _, _| x.sin());
        let err = interior_max_err(&dx(&f), |x, _, _| x.cos());
        assert!(err <= 0.25f64.powi(2) / 6.0 + 1e-12, "{err}");
        assert!(err > 1e-3);
    }

    #[test]
    fn second_differences() {
        let g = grid();
        let f = SemiDiscreteField::from_fn(&g, Domain::Omega, |x, _, _, _| x * x);
        assert!(interior_max_err(&dxx(&f), |_, _, _| 2.0) < 1e-12);
        let c = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, y, _, _| y.cos());
        let err = interior_max_err(&dyy(&c), |_, y, _| -y.cos());
        assert!(err <= 5.3e-3, "{err}");
    }

    #[test]
    fn dx_twice_is_not_dxx_on_quadratics() {
        let g = grid();
        let f = SemiDiscreteField::from_fn(&g, Domain::Omega, |x, _, _, _| x * x);
        let twice = dx(&dx(&f));
        // The composed stencil is wrong next to the boundary layers.
        assert!(interior_max_err(&twice, |_, _, _| 2.0) > 0.5);
    }

    #[test]
    fn laplacian_and_gradient() {
        let g = grid();
        let f = SemiDiscreteField::from_fn(&g, Domain::Omega, |x, y, z, _| x * x + y * y + z * z);
        assert!(interior_max_err(&laplacian_h(&f), |_, _, _| 6.0) < 1e-9);
        let hpoly = SemiDiscreteField::from_fn(&g, Domain::Omega, |x, y, _, _| x * x - y * y);
        assert!(interior_max_err(&laplacian_h(&hpoly), |_, _, _| 0.0) < 1e-12);
        let tau = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, z, _| z);
        let gr = grad_h(&tau);
        assert!(interior_max_err(&gr[0], |_, _, _| 0.0) < 1e-15);
        assert!(interior_max_err(&gr[1], |_, _, _| 0.0) < 1e-15);
        assert!(interior_max_err(&gr[2], |_, _, _| 1.0) < 1e-12);
    }

    #[test]
    fn sampled_stencils_exact_on_low_polynomials() {
        let g = grid();
        let f = SemiDiscreteField::from_fn(&g, Domain::Q, |_, _, z, t| z * z * t + t * t);
        let fz = dz(&f);
        let ftt = dtt(&f);
        for k in 0..g.z_samples {
            for m in 0..g.t_samples {
                let (z, t) = (g.z(k), g.t(m));
                assert!((fz.data[[2, 3, k, m]] - 2.0 * z * t).abs() < 1e-10);
                assert!((ftt.data[[2, 3, k, m]] - 2.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn norm_examples() {
        let g = grid();
        let c = SemiDiscreteField::from_fn(&g, Domain::Omega, |_, _, _, _| 0.7);
        let v = norm_sq(&c, Norm::L2hOmega).unwrap();
        assert!((v - 0.49 * (8.0 * 0.25f64).powi(2)).abs() < 1e-12);
        let half = SemiDiscreteField::from_fn(&g, Domain::Gamma, |_, _, _, _| 0.5);
        assert!((norm_sq(&half, Norm::L2hGamma).unwrap() - 12.0).abs() < 1e-12);
        for which in [Norm::H2hQ, Norm::H1hQ, Norm::L2hTheta, Norm::C2h] {
            let z = SemiDiscreteField::<f64>::zeros(&g, Domain::Q);
            assert_eq!(norm(&z, which).unwrap(), 0.0);
        }
    }

    #[test]
    fn theta_counts_corners_twice() {
        let g = grid();
        let one = SemiDiscreteField::from_fn(&g, Domain::Q, |_, _, _, _| 1.0);
        let v = norm_sq(&one, Norm::L2hTheta).unwrap();
        assert!((v - 4.0 * 10.0 * 0.25 * 3.0).abs() < 1e-10);
        assert_eq!(theta_nodes(8).len(), 40);
    }

    #[test]
    fn domain_mismatch_is_reported() {
        let g = grid();
        let f = SemiDiscreteField::<f64>::zeros(&g, Domain::Omega);
        assert_eq!(
            norm(&f, Norm::L2hGamma).unwrap_err(),
            GridError::DomainMismatch {
                expected: "Gamma",
                found: "Omega"
            }
        );
    }

    #[test]
    fn transpose_is_adjoint() {
        let g = GridSpec {
            z_samples: 7,
            t_samples: 5,
            ..grid()
        };
        let shape = g.shape(Domain::Q);
        let a = Array4::from_shape_fn(shape, |(i, j, k, m)| ((i * 7 + j * 3 + k * 5 + m) as f64 * 0.37).sin());
        let b = Array4::from_shape_fn(shape, |(i, j, k, m)| ((i + 2 * j + 3 * k + 5 * m) as f64 * 0.71).cos());
        for (axis, st) in [
            (0, Stencil::TransverseD1),
            (1, Stencil::TransverseD2),
            (2, Stencil::SampledD1),
            (3, Stencil::SampledD2),
            (2, Stencil::SampledD2),
        ] {
            let la = apply_axis(&a, axis, st, 0.3);
            let lhs: f64 = (&la * &b).sum();
            let mut bar = Array4::zeros(shape);
            apply_axis_transpose(&b, axis, st, 0.3, &mut bar);
            let rhs: f64 = (&a * &bar).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn window_prefix() {
        let g = GridSpec {
            t_samples: 61,
            ..GridSpec::desk(4.5, 1.5)
        };
        assert_eq!(g.window_samples().unwrap(), 21);
        let f = SemiDiscreteField::<f64>::zeros(&g, Domain::Q);
        let w = f.t_prefix(21).unwrap();
        assert!((w.grid.t_horizon - 1.5).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn operators_are_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let g = GridSpec { z_samples: 6, t_samples: 5, ..grid() };
            let s = seed as f64;
            let f = SemiDiscreteField::from_fn(&g, Domain::Q, |x, y, z, t| (x * 1.3 + s).sin() * (y + z * t).cos());
            let h = SemiDiscreteField::from_fn(&g, Domain::Q, |x, y, z, t| (x * y + s * 0.1).cos() + z * t);
            let combo = SemiDiscreteField { data: &f.data * a + &h.data * b, ..f.clone() };
            for op in [dx::<f64>, dy, dxx, dyy, dz, dzz, dt, laplacian_h] {
                let lhs = op(&combo).data;
                let rhs = &op(&f).data * a + &op(&h).data * b;
                let err = (&lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                prop_assert!(err < 1e-9);
            }
        }

        #[test]
        fn norms_are_ordered(seed in 0u64..1000) {
            let g = GridSpec { z_samples: 9, t_samples: 7, ..grid() };
            let s = seed as f64 * 0.01;
            let f = SemiDiscreteField::from_fn(&g, Domain::Q, |x, y, z, t| (x + s).sin() * (2.0 * z + y).cos() * (1.0 + t * s));
            let l2 = norm(&f, Norm::L2hQ).unwrap();
            let h1 = norm(&f, Norm::H1hQ).unwrap();
            let h2 = norm(&f, Norm::H2hQ).unwrap();
            prop_assert!(l2 <= h1 + 1e-12 && h1 <= h2 + 1e-12);
            let o = SemiDiscreteField::from_fn(&g, Domain::Omega, |x, y, z, _| (x * s + y).cos() * z);
            prop_assert!(norm(&o, Norm::L2hOmega).unwrap() <= norm(&o, Norm::H1hOmega).unwrap() + 1e-12);
        }
    }
}
