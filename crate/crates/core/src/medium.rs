//! Analytic refractive-index models and their admissibility checks.
//!
//! Every model has the form `1 + a * s(z / L) * w(x) * w(y)` where `s` is the
//! polynomial smoothstep and `w` a transverse window. The layered model uses
//! `w = 1` and is therefore only a diagnostic medium: it is not equal to one
//! near the lateral faces.

use serde::Serialize;

use crate::error::MediumError;
use crate::scalar::{smoothstep, Real};

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MediumModel<T> {
    Constant,
    /// `1 + amplitude * s(z / ramp)`.
    Layered { amplitude: T, ramp: T },
    /// `1 + amplitude * s(z / ramp) * w(x) * w(y)` with `w = 1` for
    /// `|x| <= inner` and `w = 0` for `|x| >= outer`.
    WindowedBump {
        amplitude: T,
        ramp: T,
        inner: T,
        outer: T,
    },
}

impl<T: Real> MediumModel<T> {
    pub fn name(&self) -> &'static str {
        match self {
            MediumModel::Constant => "constant",
            MediumModel::Layered { .. } => "layered",
            MediumModel::WindowedBump { .. } => "bump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumSpec<T> {
    pub model: MediumModel<T>,
    pub n0: T,
    pub n00: T,
    /// Half-width `X` of the transverse box.
    pub half_width: T,
    /// Declares membership in the monotone class (`n_z >= 0`).
    pub monotone_z: bool,
}

/// Value, gradient and Hessian of `n` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMedium<T> {
    pub n: T,
    pub grad: Vec3<T>,
    pub hess: Mat3<T>,
}

#[inline]
fn window<T: Real>(x: T, inner: T, outer: T) -> (T, T, T) {
    let width = outer - inner;
    let r = x.abs();
    let (s, ds, d2s) = smoothstep((r - inner) / width);
    let sign = if x < T::zero() { -T::one() } else { T::one() };
    (T::one() - s, -ds * sign / width, -d2s / (width * width))
}

impl<T: Real> MediumSpec<T> {
    pub fn new(model: MediumModel<T>, n0: T, n00: T, half_width: T, monotone_z: bool) -> Self {
        Self {
            model,
            n0,
            n00,
            half_width,
            monotone_z,
        }
    }

    pub fn constant(half_width: T) -> Self {
        Self::new(MediumModel::Constant, T::lit(1.2), T::lit(1.5), half_width, true)
    }

    /// Checks parameter sanity that does not need sampling.
    pub fn check_parameters(&self) -> Result<(), MediumError> {
        let bad = |name, reason: &str| {
            Err(MediumError::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.half_width > T::zero()) {
            return bad("half_width", "must be positive");
        }
        if !(self.n0 > T::one() && self.n00 > self.n0) {
            return bad("n0", "class constants need 1 < n0 < n00");
        }
        match self.model {
            MediumModel::Constant => {}
            MediumModel::Layered { ramp, .. } => {
                if !(ramp > T::zero()) {
                    return bad("ramp", "must be positive");
                }
            }
            MediumModel::WindowedBump {
                ramp, inner, outer, ..
            } => {
                if !(ramp > T::zero()) {
                    return bad("ramp", "must be positive");
                }
                if !(inner >= T::zero() && outer > inner) {
                    return bad("outer", "window needs 0 <= inner < outer");
                }
            }
        }
        Ok(())
    }

    /// Whether the model is allowed to differ from one near the lateral faces.
    pub fn is_diagnostic(&self) -> bool {
        matches!(self.model, MediumModel::Layered { .. })
    }

    #[inline]
    pub fn eval_n(&self, x: &Vec3<T>) -> T {
        match self.model {
            MediumModel::Constant => T::one(),
            MediumModel::Layered { amplitude, ramp } => {
                T::one() + amplitude * smoothstep(x[2] / ramp).0
            }
            MediumModel::WindowedBump {
                amplitude,
                ramp,
                inner,
                outer,
            } => {
                let sz = smoothstep(x[2] / ramp).0;
                if sz == T::zero() {
                    return T::one();
                }
                let wx = window(x[0], inner, outer).0;
                let wy = window(x[1], inner, outer).0;
                T::one() + amplitude * sz * wx * wy
            }
        }
    }

    pub fn eval_grad_n(&self, x: &Vec3<T>) -> Vec3<T> {
        self.eval_local(x).grad
    }

    pub fn eval_hess_n(&self, x: &Vec3<T>) -> Mat3<T> {
        self.eval_local(x).hess
    }

    /// Value, gradient and Hessian in one pass.
    #[inline]
    pub fn eval_local(&self, x: &Vec3<T>) -> LocalMedium<T> {
        let z = T::zero();
        let mut out = LocalMedium {
            n: T::one(),
            grad: [z; 3],
            hess: [[z; 3]; 3],
        };
        match self.model {
            MediumModel::Constant => {}
            MediumModel::Layered { amplitude, ramp } => {
                let (s, ds, d2s) = smoothstep(x[2] / ramp);
                out.n = T::one() + amplitude * s;
                out.grad[2] = amplitude * ds / ramp;
                out.hess[2][2] = amplitude * d2s / (ramp * ramp);
            }
            MediumModel::WindowedBump {
                amplitude,
                ramp,
                inner,
                outer,
            } => {
                let (s, ds, d2s) = smoothstep(x[2] / ramp);
                if s == z && ds == z && d2s == z {
                    return out;
                }
                let (sz, dsz, d2sz) = (s, ds / ramp, d2s / (ramp * ramp));
                let (wx, dwx, d2wx) = window(x[0], inner, outer);
                let (wy, dwy, d2wy) = window(x[1], inner, outer);
                let a = amplitude;
                out.n = T::one() + a * sz * wx * wy;
                out.grad = [a * sz * dwx * wy, a * sz * wx * dwy, a * dsz * wx * wy];
                let hxy = a * sz * dwx * dwy;
                let hxz = a * dsz * dwx * wy;
                let hyz = a * dsz * wx * dwy;
                out.hess = [
                    [a * sz * d2wx * wy, hxy, hxz],
                    [hxy, a * sz * wx * d2wy, hyz],
                    [hxz, hyz, a * d2sz * wx * wy],
                ];
            }
        }
        out
    }

    /// Largest value of `n` attained by the model (closed form).
    pub fn n_max(&self) -> T {
        match self.model {
            MediumModel::Constant => T::one(),
            MediumModel::Layered { amplitude, .. } | MediumModel::WindowedBump { amplitude, .. } => {
                T::one() + amplitude.max(T::zero())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Not enforced for diagnostic media; the worst sample is still reported.
    Waived,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub condition: &'static str,
    pub status: CheckStatus,
    /// Signed margin; negative means violated.
    pub worst_margin: f64,
    pub worst_location: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: &'static str,
    pub samples: usize,
    pub diagnostic_mode: bool,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ValidationReport {
    /// Converts the first failing check into an error.
    pub fn into_result(self) -> Result<ValidationReport, MediumError> {
        match self.checks.iter().find(|c| c.status == CheckStatus::Fail) {
            Some(c) => Err(MediumError::ValidationFailure {
                condition: c.condition.to_string(),
                location: c.worst_location,
                value: c.worst_margin,
            }),
            None => Ok(self),
        }
    }

    pub fn check(&self, condition: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.condition == condition)
    }
}

struct Tracker {
    condition: &'static str,
    worst: f64,
    at: [f64; 3],
}

impl Tracker {
    fn new(condition: &'static str) -> Self {
        Self {
            condition,
            worst: f64::INFINITY,
            at: [0.0; 3],
        }
    }

    fn record(&mut self, margin: f64, at: [f64; 3]) {
        if margin < self.worst {
            self.worst = margin;
            self.at = at;
        }
    }

    fn finish(self, tol: f64, waived: bool) -> CheckResult {
        let ok = self.worst >= -tol;
        CheckResult {
            condition: self.condition,
            status: match (ok, waived) {
                (true, _) => CheckStatus::Pass,
                (false, true) => CheckStatus::Waived,
                (false, false) => CheckStatus::Fail,
            },
            worst_margin: if self.worst.is_finite() { self.worst } else { 0.0 },
            worst_location: self.at,
        }
    }
}

fn axis_samples(lo: f64, hi: f64, density: usize) -> Vec<f64> {
    let count = ((hi - lo) * density as f64).ceil() as usize + 1;
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Samples the model on a box enclosing the slab and checks every admissibility
/// condition. The sampled box extends a quarter unit beyond `X` laterally and
/// covers `z` in `[-0.5, 1.5]`.
pub fn validate_medium<T: Real>(
    medium: &MediumSpec<T>,
    sample_density: usize,
) -> Result<ValidationReport, MediumError> {
    if sample_density < 8 {
        return Err(MediumError::SampleDensity(sample_density));
    }
    let tol = 1e-12;
    let xw = medium.half_width.as_f64();
    let n0 = medium.n0.as_f64();
    let n00 = medium.n00.as_f64();
    let lateral = axis_samples(-xw - 0.25, xw + 0.25, sample_density);
    let depth = axis_samples(-0.5, 1.5, sample_density);

    let mut class = Tracker::new("1 < n0 < n00");
    class.record((n0 - 1.0).min(n00 - n0), [0.0; 3]);
    let mut lower = Tracker::new("n >= 1");
    let mut upper = Tracker::new("n <= n0");
    let mut below = Tracker::new("n = 1 for z <= 0");
    let mut lateral_support = Tracker::new("n = 1 for max(|x|,|y|) >= X");
    let mut c2 = Tracker::new("|D n|, |D^2 n| <= n00");
    let mut mono = Tracker::new("n_z >= 0");
    let mut flat = Tracker::new("n_z(x, y, 0) = 0");

    let mut samples = 0usize;
    for &x in &lateral {
        for &y in &lateral {
            let at0 = [x, y, 0.0];
            let g0 = medium.eval_grad_n(&to_t(at0));
            flat.record(-g0[2].as_f64().abs(), at0);
            for &z in &depth {
                samples += 1;
                let at = [x, y, z];
                let loc = medium.eval_local(&to_t(at));
                let n = loc.n.as_f64();
                lower.record(n - 1.0, at);
                upper.record(n0 - n, at);
                if z <= 0.0 {
                    below.record(-(n - 1.0).abs(), at);
                }
                if x.abs().max(y.abs()) >= xw {
                    lateral_support.record(-(n - 1.0).abs(), at);
                }
                let mut worst = 0.0f64;
                for a in 0..3 {
                    worst = worst.max(loc.grad[a].as_f64().abs());
                    for b in 0..3 {
                        worst = worst.max(loc.hess[a][b].as_f64().abs());
                    }
                }
                c2.record(n00 - worst, at);
                if medium.monotone_z {
                    mono.record(loc.grad[2].as_f64(), at);
                }
            }
        }
    }

    let diagnostic = medium.is_diagnostic();
    let mut checks = vec![
        class.finish(0.0, false),
        lower.finish(tol, false),
        upper.finish(tol, false),
        below.finish(tol, false),
        lateral_support.finish(tol, diagnostic),
        c2.finish(tol, false),
    ];
    if medium.monotone_z {
        checks.push(mono.finish(tol, false));
    }
    checks.push(flat.finish(tol, false));
    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(ValidationReport {
        model: medium.model.name(),
        samples,
        diagnostic_mode: diagnostic,
        checks,
        passed,
    })
}

#[inline]
fn to_t<T: Real>(p: [f64; 3]) -> Vec3<T> {
    [T::lit(p[0]), T::lit(p[1]), T::lit(p[2])]
}
