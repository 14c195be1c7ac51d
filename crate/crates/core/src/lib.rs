//! Distributed real-time pricing on a lossless swing-equation power network.
//!
//! The physical network is modelled in port-Hamiltonian form with energy
//! variables `(eta, p)` (line angle differences and nodal momenta). Two
//! distributed price controllers can be interconnected with it:
//!
//! * [`internal_model::InternalModelController`]: price consensus through the
//!   communication Laplacian, valid for quadratic cost and utility.
//! * [`gradient::GradientController`]: primal-dual gradient dynamics on the
//!   social welfare Lagrangian, valid for general strictly convex welfare.
//!
//! [`closed_loop`] couples either controller to the network, integrates the
//! result with a fixed-step RK4 scheme and monitors energy, passivity and
//! optimality along the way. [`scenario`], [`report`] and [`export`] back the
//! `gridprice` command line tool.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_loop;
pub mod export;
pub mod gradient;
pub mod graph;
pub mod integrator;
pub mod internal_model;
pub mod physics;
pub mod report;
pub mod scenario;
pub mod welfare;

mod linalg;

pub use closed_loop::{
    ClosedLoopSystem, ControllerKind, ControllerState, Event, FullState, MonitorChannels,
    Trajectory,
};
pub use gradient::{GradientController, GradientControllerState, TimeConstants};
pub use graph::{GraphError, NetworkGraph};
pub use internal_model::{InternalModelController, InternalModelState};
pub use physics::{PhysicalParams, PhysicalState};
pub use welfare::{ConvexWelfare, Dispatch, QuadraticWelfare, Welfare, WelfareModel};

use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: entry {index} must be strictly positive (got {value})")]
    NotPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{what} must be symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("{what} contains a non-finite entry")]
    NonFinite { what: &'static str },

    #[error("the internal-model controller requires quadratic welfare")]
    WelfareKindMismatch,

    #[error("controller state does not match the configured controller kind")]
    ControllerKindMismatch,

    #[error(
        "infeasible line flow on edge {edge}: |f/gamma| = {ratio:.6} exceeds the security threshold"
    )]
    InfeasibleFlow { edge: usize, ratio: f64 },

    #[error("{what} did not converge (residual {residual:e})")]
    NoConvergence { what: &'static str, residual: f64 },

    #[error("non-finite derivative encountered at t = {time}")]
    NonFiniteDerivative { time: f64 },

    #[error("trajectory needs at least 2 samples, got {0}")]
    ShortTrajectory(usize),

    #[error("invalid integration settings: {0}")]
    Integration(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn check_positive(what: &'static str, values: &nalgebra::DVector<f64>) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NotPositive { what, index, value });
        }
    }
    Ok(())
}

pub(crate) fn check_finite(what: &'static str, values: &nalgebra::DVector<f64>) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}
