//! One-dimensional time-series tools that respect a sharp wavefront: samples
//! before the front are never mixed with samples after it.

use crate::scalar::Real;

/// Whether sample `m` lies on or behind the front `tau`. Shared by the data
/// generator and the transform chain so both classify samples identically.
#[inline]
pub fn is_post_front<T: Real>(m: usize, dt: T, tau: T) -> bool {
    T::of_usize(m) * dt >= tau
}

/// First sample on or behind the front.
pub fn first_post_front<T: Real>(len: usize, dt: T, tau: T) -> usize {
    (0..len).find(|&m| is_post_front(m, dt, tau)).unwrap_or(len)
}

/// Integral over `[m, m + 1]` (unit spacing) of the cubic through four
/// consecutive samples starting `shift` samples before `m`.
fn cubic_interval_weights<T: Real>(shift: usize) -> [T; 4] {
    let w = match shift {
        0 => [9.0, 19.0, -5.0, 1.0],
        1 => [-1.0, 13.0, 13.0, -1.0],
        _ => [1.0, -5.0, 19.0, 9.0],
    };
    [T::lit(w[0] / 24.0), T::lit(w[1] / 24.0), T::lit(w[2] / 24.0), T::lit(w[3] / 24.0)]
}

/// `v(t_m) = ∫_0^{t_m} u`. With a sharp front `tau`, `v = 0` up to the front
/// and the integral starts at `tau`, the partial first interval using the
/// quadratic through the first three post-front samples.
pub fn cumulative_integral<T: Real>(u: &[T], dt: T, front: Option<T>) -> Vec<T> {
    let len = u.len();
    let mut v = vec![T::zero(); len];
    let (m0, head) = match front {
        None => (0, T::zero()),
        Some(tau) => {
            let m0 = first_post_front(len, dt, tau);
            if m0 >= len {
                return v;
            }
            let a = (T::of_usize(m0) * dt - tau) / dt;
            (m0, dt * head_integral(&u[m0..], a))
        }
    };
    if m0 >= len {
        return v;
    }
    v[m0] = head;
    let avail = len - m0;
    for m in m0..len - 1 {
        let step = if avail >= 4 {
            let local = m - m0;
            let shift = if local == 0 {
                0
            } else if m + 2 < len {
                1
            } else {
                2
            };
            let w = cubic_interval_weights::<T>(shift);
            let start = m - shift;
            (0..4).fold(T::zero(), |acc, q| acc + w[q] * u[start + q])
        } else {
            T::lit(0.5) * (u[m] + u[m + 1])
        };
        v[m + 1] = v[m] + dt * step;
    }
    v
}

/// `∫_{-a}^{0} q(r) dr` for the polynomial through the first (up to three)
/// samples at `r = 0, 1, 2`.
fn head_integral<T: Real>(u: &[T], a: T) -> T {
    if a <= T::zero() {
        return T::zero();
    }
    let r = -a;
    let (r2, r3) = (r * r, r * r * r);
    let three = T::lit(3.0);
    let half = T::lit(0.5);
    match u.len() {
        0 => T::zero(),
        1 => u[0] * a,
        2 => {
            // Line through r = 0, 1.
            let f0 = r - r2 * half;
            let f1 = r2 * half;
            -(u[0] * f0 + u[1] * f1)
        }
        _ => {
            let f0 = (r3 / three - T::lit(1.5) * r2 + T::lit(2.0) * r) * half;
            let f1 = -(r3 / three - r2);
            let f2 = (r3 / three - r2 * half) * half;
            -(u[0] * f0 + u[1] * f1 + u[2] * f2)
        }
    }
}

/// Interpolation support: abscissae and values usable on one side of a front.
#[derive(Debug, Clone)]
pub struct Support<T> {
    pub t: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Real> Support<T> {
    /// Samples of `series` (spacing `dt`) on or behind `front`, optionally
    /// preceded by the known front value `anchor` at `t = front`.
    pub fn new(series: &[T], dt: T, front: Option<T>, anchor: Option<T>) -> Self {
        let m0 = front.map_or(0, |tau| first_post_front(series.len(), dt, tau));
        let mut t = Vec::with_capacity(series.len() - m0 + 1);
        let mut y = Vec::with_capacity(series.len() - m0 + 1);
        if let (Some(tau), Some(a)) = (front, anchor) {
            let gap = if m0 < series.len() {
                T::of_usize(m0) * dt - tau
            } else {
                T::infinity()
            };
            if gap > T::lit(1e-9) * dt {
                t.push(tau);
                y.push(a);
            }
        }
        for (m, &v) in series.iter().enumerate().skip(m0) {
            t.push(T::of_usize(m) * dt);
            y.push(v);
        }
        Self { t, y }
    }

    /// Value and derivative at `x` of the cubic through the four support
    /// points around `x` (fewer if the support is short).
    pub fn eval(&self, x: T) -> (T, T) {
        let len = self.t.len();
        match len {
            0 => (T::zero(), T::zero()),
            1 => (self.y[0], T::zero()),
            _ => {
                let q = match self.t.iter().position(|&tq| tq > x) {
                    Some(0) => 0,
                    Some(p) => p - 1,
                    None => len - 1,
                };
                let width = len.min(4);
                let start = q.saturating_sub(1).min(len - width);
                lagrange(&self.t[start..start + width], &self.y[start..start + width], x)
            }
        }
    }
}

/// Lagrange interpolant through the given points: value and derivative at `x`.
pub fn lagrange<T: Real>(ts: &[T], ys: &[T], x: T) -> (T, T) {
    let n = ts.len();
    let mut value = T::zero();
    let mut deriv = T::zero();
    for a in 0..n {
        let mut denom = T::one();
        for b in 0..n {
            if b != a {
                denom *= ts[a] - ts[b];
            }
        }
        let mut prod = T::one();
        for b in 0..n {
            if b != a {
                prod *= x - ts[b];
            }
        }
        let mut dprod = T::zero();
        for c in 0..n {
            if c == a {
                continue;
            }
            let mut p = T::one();
            for b in 0..n {
                if b != a && b != c {
                    p *= x - ts[b];
                }
            }
            dprod += p;
        }
        value += ys[a] * prod / denom;
        deriv += ys[a] * dprod / denom;
    }
    (value, deriv)
}
