//! Internal-model price controller.
//!
//! Each area holds a price `λ_i`. Price differences between neighbours in
//! the communication graph are damped through the Laplacian, and local
//! frequency deviations push prices through the inverse cost and utility
//! curvatures:
//!
//! ```text
//! λ' = −L_c λ + Q_g⁻¹ u_λ,g − Q_d⁻¹ u_λ,d
//! (u_g, u_d) = (Q_g⁻¹(λ − c), Q_d⁻¹(b − λ))
//! ```
//!
//! Under the closed-loop interconnection `u_λ = (−ω, ω)`.

use nalgebra::{DMatrix, DVector};

use crate::graph::NetworkGraph;
use crate::welfare::{QuadraticWelfare, Welfare, WelfareModel};
use crate::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InternalModelState {
    pub lam: DVector<f64>,
}

impl InternalModelState {
    /// `H_c(λ) = ½ λᵀλ`.
    pub fn hamiltonian(&self) -> f64 {
        0.5 * self.lam.norm_squared()
    }
}

#[derive(Debug, Clone)]
pub struct InternalModelController {
    welfare: QuadraticWelfare,
    comm: NetworkGraph,
    laplacian: DMatrix<f64>,
}

impl InternalModelController {
    /// Fails with [`Error::WelfareKindMismatch`] unless the welfare is
    /// quadratic.
    pub fn new(welfare: &WelfareModel, comm: NetworkGraph) -> Result<Self> {
        match welfare {
            WelfareModel::Quadratic(w) => Self::from_quadratic(w.clone(), comm),
            WelfareModel::Convex(_) => Err(Error::WelfareKindMismatch),
        }
    }

    pub fn from_quadratic(welfare: QuadraticWelfare, comm: NetworkGraph) -> Result<Self> {
        check_dim("communication nodes", welfare.dim(), comm.node_count())?;
        let laplacian = comm.laplacian();
        Ok(Self {
            welfare,
            comm,
            laplacian,
        })
    }

    pub fn welfare(&self) -> &QuadraticWelfare {
        &self.welfare
    }

    pub fn comm(&self) -> &NetworkGraph {
        &self.comm
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Price dynamics for port input `u_λ = (u_λ,g, u_λ,d)`.
    pub fn rhs(
        &self,
        state: &InternalModelState,
        u_lambda: (&DVector<f64>, &DVector<f64>),
    ) -> Result<DVector<f64>> {
        let n = self.welfare.dim();
        check_dim("lambda", n, state.lam.len())?;
        check_dim("u_lambda (generation)", n, u_lambda.0.len())?;
        check_dim("u_lambda (demand)", n, u_lambda.1.len())?;
        Ok(-(&self.laplacian * &state.lam) + self.welfare.qg_inv() * u_lambda.0
            - self.welfare.qd_inv() * u_lambda.1)
    }

    /// Port output `(u_g, u_d)` at the current prices.
    pub fn output(&self, state: &InternalModelState) -> (DVector<f64>, DVector<f64>) {
        self.welfare.response(&state.lam)
    }
}
