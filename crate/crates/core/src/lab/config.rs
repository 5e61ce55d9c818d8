//! Flat `key = value` experiment configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment; lists are comma
//! separated. Every key is optional. Unknown or repeated keys are errors.
//!
//! | key | default |
//! |-----|---------|
//! | `medium.model` | `bump` (`constant`, `layered`, `bump`) |
//! | `medium.amplitude` | `0.1` (`0.2` for `layered`) |
//! | `medium.ramp` | `1.5` (`1.0` for `layered`) |
//! | `medium.inner`, `medium.outer` | `0.2`, `1.0` |
//! | `medium.n0`, `medium.n00` | `1.2`, `1.5` |
//! | `medium.half_width` | `1.125` |
//! | `medium.monotone_z` | `true` |
//! | `medium.sample_density` | `16` |
//! | `grid.n`, `grid.h0` | `8`, `0.1` |
//! | `grid.z_samples`, `grid.t_samples` | `41`, `61` |
//! | `grid.t_horizon` | `3 / alpha`; any other value is rejected |
//! | `carleman.alpha` | `2 / (3 n0)` |
//! | `carleman.lambda` | `2` |
//! | `carleman.suite_alpha`, `carleman.suite_xi` | `2/3`, `1` |
//! | `carleman.lambdas` | `5, 10, 20, 40` |
//! | `forward.horizon` | `T1 + n0` |
//! | `forward.r_trunc` | `2` |
//! | `forward.fdtd_horizon`, `forward.eps` | `1.4`, `0.0375` |
//! | `forward.spacing`, `forward.cfl` | `0.025`, `0.5` |
//! | `forward.refinements` | `1, 2, 4` |
//! | `geodesics.fan` | `32` (a `fan x fan` set of launch points) |
//! | `solver.method` | `gauss-newton` (or `lbfgs`) |
//! | `solver.init` | `flat` (or `data-extension`) |
//! | `solver.max_iter` | `40` |
//! | `solver.m_cap` | `10` |
//! | `solver.grad_tol`, `solver.ftol` | `1e-12`, `1e-10` |
//! | `solver.cg_max`, `solver.cg_tol` | `150`, `1e-3` |
//! | `solver.memory` | `10` |
//! | `sweep.deltas` | `0.1, 0.01, 0.001, 0.0001` |
//! | `sweep.seed` | `1` |
//! | `sweep.lambda_cap` | `10` |
//! | `sweep.floor_subtraction` | `true` |
//! | `sweep.clean_iter`, `sweep.noisy_iter` | `40`, `10` |
//! | `output.dir` | `out` |

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::LabError;
use crate::fdgrid::GridSpec;
use crate::forward::FdtdOptions;
use crate::inversion::{Initialization, Method, SolverOptions};
use crate::medium::{MediumModel, MediumSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSettings {
    pub alpha: f64,
    pub xi: f64,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub deltas: Vec<f64>,
    pub lambda_cap: f64,
    pub floor_subtraction: bool,
    /// Iterations of the noiseless run at the first `λ`; later `λ` continue
    /// from the previous solution with `noisy_iter` more.
    pub clean_iter: usize,
    pub noisy_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub medium: MediumSpec<f64>,
    pub sample_density: usize,
    pub grid: GridSpec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub suite: SuiteSettings,
    /// Forward-data horizon `T`.
    pub horizon: f64,
    pub r_trunc: usize,
    pub fdtd: FdtdOptions<f64>,
    pub refinements: Vec<usize>,
    pub fan: usize,
    pub solver: SolverOptions,
    pub init: Initialization,
    pub m_cap: f64,
    pub sweep: SweepSettings,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// `T1 = 3 / α`.
    pub fn t1(&self) -> f64 {
        self.grid.t_horizon
    }

    pub fn parse(text: &str) -> Result<Self, LabError> {
        Keys::read(text)?.build()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Model name plus parameter map, as written into reports.
    pub fn medium_parameters(&self) -> BTreeMap<&'static str, f64> {
        let m = &self.medium;
        let mut out = BTreeMap::from([("n0", m.n0), ("n00", m.n00), ("half_width", m.half_width)]);
        match m.model {
            MediumModel::Constant => {}
            MediumModel::Layered { amplitude, ramp } => {
                out.insert("amplitude", amplitude);
                out.insert("ramp", ramp);
            }
            MediumModel::WindowedBump {
                amplitude,
                ramp,
                inner,
                outer,
            } => {
                out.insert("amplitude", amplitude);
                out.insert("ramp", ramp);
                out.insert("inner", inner);
                out.insert("outer", outer);
            }
        }
        out
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::parse("").expect("defaults are valid")
    }
}

const KNOWN: &[&str] = &[
    "medium.model",
    "medium.amplitude",
    "medium.ramp",
    "medium.inner",
    "medium.outer",
    "medium.n0",
    "medium.n00",
    "medium.half_width",
    "medium.monotone_z",
    "medium.sample_density",
    "grid.n",
    "grid.h0",
    "grid.z_samples",
    "grid.t_samples",
    "grid.t_horizon",
    "carleman.alpha",
    "carleman.lambda",
    "carleman.suite_alpha",
    "carleman.suite_xi",
    "carleman.lambdas",
    "forward.horizon",
    "forward.r_trunc",
    "forward.fdtd_horizon",
    "forward.eps",
    "forward.spacing",
    "forward.cfl",
    "forward.refinements",
    "geodesics.fan",
    "solver.method",
    "solver.init",
    "solver.max_iter",
    "solver.m_cap",
    "solver.grad_tol",
    "solver.ftol",
    "solver.cg_max",
    "solver.cg_tol",
    "solver.memory",
    "sweep.deltas",
    "sweep.seed",
    "sweep.lambda_cap",
    "sweep.floor_subtraction",
    "sweep.clean_iter",
    "sweep.noisy_iter",
    "output.dir",
];

struct Keys {
    values: BTreeMap<String, String>,
}

fn invalid(key: &str, reason: impl Into<String>) -> LabError {
    LabError::InvalidKey {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl Keys {
    fn read(text: &str) -> Result<Self, LabError> {
        let mut values = BTreeMap::new();
        let known: BTreeSet<&str> = KNOWN.iter().copied().collect();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(LabError::Syntax {
                    line: idx + 1,
                    reason: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = key.trim();
            if !known.contains(key) {
                return Err(LabError::UnknownKey(key.to_string()));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(invalid(key, "given more than once"));
            }
        }
        Ok(Self { values })
    }

    fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn get<V: FromStr>(&self, key: &str, default: V) -> Result<V, LabError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| invalid(key, format!("cannot parse `{s}`"))),
        }
    }

    fn list<V: FromStr + Clone>(&self, key: &str, default: &[V]) -> Result<Vec<V>, LabError> {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(s) => {
                let items = s
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse()
                            .map_err(|_| invalid(key, format!("cannot parse list entry `{}`", p.trim())))
                    })
                    .collect::<Result<Vec<V>, _>>()?;
                if items.is_empty() {
                    return Err(invalid(key, "empty list"));
                }
                Ok(items)
            }
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, LabError> {
        let v: f64 = self.get(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    fn build(self) -> Result<ExperimentConfig, LabError> {
        let model_name: String = self.get("medium.model", "bump".to_string())?;
        let layered = model_name == "layered";
        let amplitude = self.get("medium.amplitude", if layered { 0.2 } else { 0.1 })?;
        let ramp = self.positive("medium.ramp", if layered { 1.0 } else { 1.5 })?;
        let model = match model_name.as_str() {
            "constant" => MediumModel::Constant,
            "layered" => MediumModel::Layered { amplitude, ramp },
            "bump" => MediumModel::WindowedBump {
                amplitude,
                ramp,
                inner: self.get("medium.inner", 0.2)?,
                outer: self.get("medium.outer", 1.0)?,
            },
            other => {
                return Err(invalid(
                    "medium.model",
                    format!("unknown model `{other}` (constant, layered, bump)"),
                ))
            }
        };
        let n0 = self.positive("medium.n0", 1.2)?;
        let n00 = self.positive("medium.n00", 1.5)?;
        let half_width = self.positive("medium.half_width", 1.125)?;
        let medium = MediumSpec::new(model, n0, n00, half_width, self.get("medium.monotone_z", true)?);
        medium.check_parameters().map_err(|e| match e {
            crate::error::MediumError::InvalidParameter { name, reason } => {
                invalid(&format!("medium.{name}"), reason)
            }
            other => invalid("medium.model", other.to_string()),
        })?;

        let alpha = self.positive("carleman.alpha", 2.0 / (3.0 * n0))?;
        let t1 = 3.0 / alpha;
        if self.has("grid.t_horizon") {
            let given: f64 = self.get("grid.t_horizon", t1)?;
            if (given - t1).abs() > 1e-9 * t1 {
                return Err(invalid(
                    "grid.t_horizon",
                    format!("must equal 3 / alpha = {t1}, got {given}"),
                ));
            }
        }
        let grid = GridSpec {
            n: self.get("grid.n", 8)?,
            half_width,
            h0: self.positive("grid.h0", 0.1)?,
            z_samples: self.get("grid.z_samples", 41)?,
            t_samples: self.get("grid.t_samples", 61)?,
            t_horizon: t1,
            t_window: 1.0 / alpha,
        };
        grid.validate().map_err(|e| invalid("grid.n", e.to_string()))?;
        grid.window_samples()
            .map_err(|e| invalid("grid.t_samples", e.to_string()))?;

        let lambda = self.get("carleman.lambda", 2.0)?;
        if lambda < 1.0 {
            return Err(invalid("carleman.lambda", "must be at least 1"));
        }
        let suite = SuiteSettings {
            alpha: self.positive("carleman.suite_alpha", 2.0 / 3.0)?,
            xi: self.positive("carleman.suite_xi", 1.0)?,
            lambdas: self.list("carleman.lambdas", &[5.0, 10.0, 20.0, 40.0])?,
        };
        if suite.lambdas.windows(2).any(|w| w[1] <= w[0]) || suite.lambdas[0] < 1.0 {
            return Err(invalid("carleman.lambdas", "must be ascending and at least 1"));
        }

        let horizon = self.positive("forward.horizon", t1 + n0)?;
        if horizon <= n0 {
            return Err(invalid("forward.horizon", format!("T = {horizon} must exceed n0 = {n0}")));
        }
        if horizon < t1 + n0 - 1e-9 {
            return Err(invalid(
                "forward.horizon",
                format!("T = {horizon} must cover T1 + n0 = {}", t1 + n0),
            ));
        }
        let r_trunc = self.get("forward.r_trunc", 2)?;
        if r_trunc > 2 {
            return Err(invalid("forward.r_trunc", "supported orders are 0, 1, 2"));
        }
        let mut fdtd = FdtdOptions::new(
            self.positive("forward.fdtd_horizon", 1.4)?,
            self.positive("forward.eps", 0.0375)?,
        );
        fdtd.spacing = self.positive("forward.spacing", fdtd.spacing)?;
        fdtd.cfl = self.positive("forward.cfl", fdtd.cfl)?;
        let refinements = self.list("forward.refinements", &[1usize, 2, 4])?;
        if refinements.len() < 3 || refinements.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(invalid("forward.refinements", "need at least three successive doublings"));
        }

        let method = match self.get("solver.method", "gauss-newton".to_string())?.as_str() {
            "gauss-newton" => Method::GaussNewton,
            "lbfgs" => Method::Lbfgs,
            other => return Err(invalid("solver.method", format!("unknown method `{other}`"))),
        };
        let init = match self.get("solver.init", "flat".to_string())?.as_str() {
            "flat" => Initialization::Flat,
            "data-extension" => Initialization::DataExtension,
            other => return Err(invalid("solver.init", format!("unknown initialization `{other}`"))),
        };
        let d = SolverOptions::default();
        let solver = SolverOptions {
            method,
            max_iter: self.get("solver.max_iter", 40)?,
            memory: self.get("solver.memory", d.memory)?,
            grad_tol: self.get("solver.grad_tol", d.grad_tol)?,
            ftol: self.get("solver.ftol", d.ftol)?,
            cg_max: self.get("solver.cg_max", d.cg_max)?,
            cg_tol: self.get("solver.cg_tol", d.cg_tol)?,
            ..d
        };
        let m_cap = self.positive("solver.m_cap", 10.0)?;
        if m_cap <= n0 {
            return Err(invalid("solver.m_cap", "must exceed n0"));
        }

        let deltas = self.list("sweep.deltas", &[1e-1, 1e-2, 1e-3, 1e-4])?;
        if let Some(bad) = deltas.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
            return Err(invalid("sweep.deltas", format!("delta = {bad} is outside (0, 1)")));
        }
        let sweep = SweepSettings {
            deltas,
            lambda_cap: self.get("sweep.lambda_cap", 10.0)?,
            floor_subtraction: self.get("sweep.floor_subtraction", true)?,
            clean_iter: self.get("sweep.clean_iter", 40)?,
            noisy_iter: self.get("sweep.noisy_iter", 10)?,
        };
        if sweep.lambda_cap < 1.0 {
            return Err(invalid("sweep.lambda_cap", "must be at least 1"));
        }

        Ok(ExperimentConfig {
            medium,
            sample_density: self.get("medium.sample_density", 16)?,
            grid,
            alpha,
            lambda,
            suite,
            horizon,
            r_trunc,
            fdtd,
            refinements,
            fan: self.get("geodesics.fan", 32)?,
            solver,
            init,
            m_cap,
            sweep,
            seed: self.get("sweep.seed", 1)?,
            output_dir: PathBuf::from(self.get("output.dir", "out".to_string())?),
        })
    }
}
