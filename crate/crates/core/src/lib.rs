//! Numerical laboratory for the plane-wave coefficient inverse problem of the
//! wave equation `n^2 u_tt = Δu`.
//!
//! The pipeline runs from analytic media ([`medium`]) through ray tracing and
//! travel times ([`geodesics`]), forward data and the travel-time change of
//! variables ([`forward`]), the semi-discrete grid ([`fdgrid`]), Carleman
//! functionals ([`carleman`]), the weighted least-squares inversion
//! ([`inversion`]) and the experiment harness ([`lab`]).

pub mod carleman;
pub mod error;
pub mod fdgrid;
pub mod forward;
pub mod geodesics;
pub mod inversion;
pub mod lab;
pub mod medium;
pub mod scalar;

pub use scalar::Real;

pub type Medium = medium::MediumSpec<f64>;
pub type Grid = fdgrid::GridSpec<f64>;
pub type Field = fdgrid::SemiDiscreteField<f64>;

pub type Medium32 = medium::MediumSpec<f32>;
pub type Grid32 = fdgrid::GridSpec<f32>;
pub type Field32 = fdgrid::SemiDiscreteField<f32>;
