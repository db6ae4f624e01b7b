//! Sound, proximate and near-complete symbolic models of bounded-input,
//! locally stabilizable linear control systems.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: small dense matrices, the matrix exponential, eigenvalues and
//!   the induced L∞ norm.
//! * [`trimming`]: open boxes and the trimming operation on input sets.
//! * [`system`]: the plant, exact reach computation, supervisory feedback
//!   simulation and feedback quantization.
//! * [`abstraction`]: parameter synthesis and the state-time quantized
//!   symbolic model.
//! * [`bisim`]: finite metric transition systems and the simulation,
//!   trimmed bisimulation and near-completeness checkers.
//! * [`stability`]: local stabilizability and divergence radii.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); box arithmetic
//! is generic over [`BoxScalar`] so that exact rationals can be used where
//! bit-exact bound arithmetic matters. Concrete aliases for the common
//! instantiations live at the crate root.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
pub mod bisim;
mod error;
pub mod format;
pub mod linalg;
pub mod report;
mod scalar;
pub mod stability;
pub mod system;
pub mod trimming;

pub use error::{Error, Result};
pub use scalar::{BoxScalar, Scalar};

pub use abstraction::{AbstractionParams, BuildOptions, Region, SymbolicModel};
pub use bisim::{FiniteMts, Relation};
pub use linalg::{ComplexScalar, Matrix};
pub use report::CheckReport;
pub use system::{InputGrid, LinearSystem, PiecewiseConstantInput, TrajectoryTrace};
pub use trimming::OpenBox;

/// Double-precision matrix.
pub type Matrix64 = Matrix<f64>;
/// Single-precision matrix.
pub type Matrix32 = Matrix<f32>;
pub type OpenBox64 = OpenBox<f64>;
/// Open box with exact rational bounds.
pub type RationalBox = OpenBox<num_rational::BigRational>;
pub type LinearSystem64 = LinearSystem<f64>;
pub type InputGrid64 = InputGrid<f64>;
pub type PiecewiseConstantInput64 = PiecewiseConstantInput<f64>;
pub type TrajectoryTrace64 = TrajectoryTrace<f64>;
pub type Region64 = Region<f64>;
pub type AbstractionParams64 = AbstractionParams<f64>;
pub type SymbolicModel64 = SymbolicModel<f64>;
pub type FiniteMts64 = FiniteMts<f64>;
