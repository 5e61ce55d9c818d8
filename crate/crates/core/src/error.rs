use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MediumError {
    #[error("medium violates `{condition}` at ({}, {}, {}): value {value}", location[0], location[1], location[2])]
    ValidationFailure {
        condition: String,
        location: [f64; 3],
        value: f64,
    },
    #[error("sample density {0} is below the minimum of 8 points per unit length")]
    SampleDensity(usize),
    #[error("invalid medium parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesicError {
    #[error("eikonal defect {defect:e} exceeds tolerance {tolerance:e} at s = {s}")]
    StepFailure { s: f64, defect: f64, tolerance: f64 },
    #[error("Riccati entry {value:e} exceeds cap {cap:e} at s = {s} on ray from ({}, {})", origin[0], origin[1])]
    BlowupDetected {
        origin: [f64; 2],
        s: f64,
        value: f64,
        cap: f64,
    },
    #[error("shooting failed at node ({}, {}, {}): {reason}", node[0], node[1], node[2])]
    RegularityViolation { node: [f64; 3], reason: String },
    #[error("amplitude {value:e} below floor A0 = {floor:e} at ({}, {}, {})", node[0], node[1], node[2])]
    AmplitudeFloor { node: [f64; 3], value: f64, floor: f64 },
    #[error("invalid ray argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("field domain {found} does not match required domain {expected}")]
    DomainMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error("CFL number {0} exceeds 0.5")]
    CflViolation(f64),
    #[error("FDTD work {cells} cells x {steps} steps exceeds budget {budget}")]
    BudgetExceeded {
        cells: usize,
        steps: usize,
        budget: f64,
    },
    #[error("horizon T = {t} must exceed n0 = {n0}")]
    HorizonTooShort { t: f64, n0: f64 },
    #[error("invalid forward parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CarlemanError {
    #[error("invalid Carleman parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InversionError {
    #[error("w(., 0) = {value:e} below floor A0 = {floor:e} at node ({i}, {j}, {k})")]
    FloorViolation {
        i: usize,
        j: usize,
        k: usize,
        value: f64,
        floor: f64,
    },
    #[error("line search failed to decrease the objective at iteration {iteration} (J = {value:e})")]
    NonDecrease { iteration: usize, value: f64 },
    #[error("invalid inversion problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Errors of the experiment harness. Configuration errors name the key.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("config key `{key}`: {reason}")]
    InvalidKey { key: String, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("field dump {path}: {reason}")]
    Dump { path: String, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Carleman(#[from] CarlemanError),
    #[error(transparent)]
    Inversion(#[from] InversionError),
}
