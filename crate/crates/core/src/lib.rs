// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Vector fields that make a prescribed submanifold attracting and invariant,
//! with a prescribed asymptotic phase and prescribed dynamics on it.
//!
//! Start with [`systems`] for ready-made examples or [`AnchorSystem::new`]
//! for your own `(G, P, g)`; [`verify`] holds the numerical checks.

pub mod anchor;
pub mod calculus;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod systems;
pub mod verify;

pub use anchor::{AnchorSystem, AssumptionReport, FieldEvaluation, Gain, SecondOrderState};
pub use calculus::{fd_crosscheck, grad_v, jacobian, DifferentiableMap, FdConfig};
pub use error::{Error, Result};
pub use integrate::{
    integrate, integrate_variational, IntegratorConfig, TerminalStatus, Trajectory, VariationalTrajectory, VectorField,
};
pub use linalg::{Matrix, Vector};
pub use systems::{DoublePendulumParams, SystemDescriptor};
pub use verify::VerificationReport;
