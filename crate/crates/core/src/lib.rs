//! Stability analysis for autonomous nonlinear systems with a single
//! equilibrium point.
//!
//! The central verdict follows the extended-Jacobian method: when a system
//! has exactly one equilibrium in the region of interest, the sign pattern of
//! the Jacobian spectrum at that point is taken to decide global behavior.
//! The claim is a conjecture, so every verdict is reported "per
//! extended-Jacobian method" together with its uniqueness evidence, and is
//! corroborated by Popov and Bendixson checks and by simulation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eig;
pub mod expr;
pub mod greitzer;
pub mod sim;
pub mod stability;
pub mod system;

pub use eig::Spectrum;
pub use expr::Expr;
pub use system::DynamicalSystem;
