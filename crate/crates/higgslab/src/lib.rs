//! Numerical lab for the Yang–Mills–Higgs gradient flow on rank-r Higgs bundles
//! over a flat square torus.
//!
//! * [`geometry`]: lattice, matrix fields, discrete ∂̄ / ∂, pairings.
//! * [`fields`]: Higgs pairs, moment maps, YMH and its gradient, gauge actions.
//! * [`flow`]: gradient flow, metric heat flow, gauge-fixing ODE and their comparison.
//! * [`critical`]: critical points, Harder–Narasimhan types, degrees, exponents.
//! * [`mmflow`]: finite-dimensional hyperkähler sandbox.
//! * [`initial`], [`config`], [`snapshot`], [`experiment`]: plumbing used by the CLI.

pub mod config;
pub mod critical;
pub mod error;
pub mod experiment;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod initial;
pub mod mat;
pub mod mmflow;
pub mod par;
pub mod snapshot;

pub use error::{LabError, Result};
pub use geometry::{FormDegree, MatrixField, Stencil, TorusGrid};
pub use fields::HiggsPair;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
