//! Primal-dual gradient price controller.
//!
//! State is stored in co-energy variables `z = (u_g, u_d, v, λ)`:
//!
//! ```text
//! τ_g u_g' = −∇C(u_g) + λ + w_g
//! τ_d u_d' =  ∇U(u_d) − λ + w_d
//! τ_v v'   = −D_cᵀ λ
//! τ_λ λ'   =  D_c v − u_g + u_d
//! ```
//!
//! `v` carries the integrated price differences along communication edges.
//! The output is `(u_g, u_d)` and the closed loop feeds back `w = (−ω, ω)`.

use nalgebra::{DMatrix, DVector};

use crate::graph::NetworkGraph;
use crate::welfare::{Welfare, WelfareModel};
use crate::{check_dim, check_positive, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientControllerState {
    pub ug: DVector<f64>,
    pub ud: DVector<f64>,
    pub v: DVector<f64>,
    pub lam: DVector<f64>,
}

impl GradientControllerState {
    pub fn zeros(n: usize, mc: usize) -> Self {
        Self {
            ug: DVector::zeros(n),
            ud: DVector::zeros(n),
            v: DVector::zeros(mc),
            lam: DVector::zeros(n),
        }
    }
}

/// Diagonal time constants of the four controller blocks, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeConstants {
    pub tau_g: DVector<f64>,
    pub tau_d: DVector<f64>,
    pub tau_v: DVector<f64>,
    pub tau_lambda: DVector<f64>,
}

impl TimeConstants {
    pub fn new(
        tau_g: DVector<f64>,
        tau_d: DVector<f64>,
        tau_v: DVector<f64>,
        tau_lambda: DVector<f64>,
    ) -> Result<Self> {
        check_positive("tau_g", &tau_g)?;
        check_positive("tau_d", &tau_d)?;
        check_positive("tau_v", &tau_v)?;
        check_positive("tau_lambda", &tau_lambda)?;
        Ok(Self {
            tau_g,
            tau_d,
            tau_v,
            tau_lambda,
        })
    }

    /// All time constants equal to one second.
    pub fn unit(n: usize, mc: usize) -> Self {
        Self {
            tau_g: DVector::from_element(n, 1.0),
            tau_d: DVector::from_element(n, 1.0),
            tau_v: DVector::from_element(mc, 1.0),
            tau_lambda: DVector::from_element(n, 1.0),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            tau_g: &self.tau_g * factor,
            tau_d: &self.tau_d * factor,
            tau_v: &self.tau_v * factor,
            tau_lambda: &self.tau_lambda * factor,
        }
    }

    fn check(&self, n: usize, mc: usize) -> Result<()> {
        check_dim("tau_g", n, self.tau_g.len())?;
        check_dim("tau_d", n, self.tau_d.len())?;
        check_dim("tau_v", mc, self.tau_v.len())?;
        check_dim("tau_lambda", n, self.tau_lambda.len())
    }

    /// `½ zᵀ τ z`, equal to `½ xᵀ τ⁻¹ x` in energy variables `x = τ z`.
    pub fn controller_hamiltonian(&self, s: &GradientControllerState) -> f64 {
        let quad = |tau: &DVector<f64>, z: &DVector<f64>| z.dot(&tau.component_mul(z));
        0.5 * (quad(&self.tau_g, &s.ug)
            + quad(&self.tau_d, &s.ud)
            + quad(&self.tau_v, &s.v)
            + quad(&self.tau_lambda, &s.lam))
    }
}

#[derive(Debug, Clone)]
pub struct GradientController {
    welfare: WelfareModel,
    comm: NetworkGraph,
    tau: TimeConstants,
    incidence: DMatrix<f64>,
}

impl GradientController {
    pub fn new(welfare: WelfareModel, comm: NetworkGraph, tau: TimeConstants) -> Result<Self> {
        check_dim("communication nodes", welfare.dim(), comm.node_count())?;
        tau.check(comm.node_count(), comm.edge_count())?;
        let incidence = comm.incidence();
        Ok(Self {
            welfare,
            comm,
            tau,
            incidence,
        })
    }

    pub fn welfare(&self) -> &WelfareModel {
        &self.welfare
    }

    pub fn comm(&self) -> &NetworkGraph {
        &self.comm
    }

    pub fn time_constants(&self) -> &TimeConstants {
        &self.tau
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn check_state(&self, s: &GradientControllerState) -> Result<()> {
        let (n, mc) = (self.comm.node_count(), self.comm.edge_count());
        check_dim("u_g", n, s.ug.len())?;
        check_dim("u_d", n, s.ud.len())?;
        check_dim("v", mc, s.v.len())?;
        check_dim("lambda", n, s.lam.len())
    }

    /// Co-energy time derivative for port input `w = (w_g, w_d)`.
    pub fn rhs(
        &self,
        s: &GradientControllerState,
        wg: &DVector<f64>,
        wd: &DVector<f64>,
    ) -> Result<GradientControllerState> {
        self.check_state(s)?;
        check_dim("w_g", s.ug.len(), wg.len())?;
        check_dim("w_d", s.ud.len(), wd.len())?;
        let dug = (-self.welfare.cost_gradient(&s.ug) + &s.lam + wg).component_div(&self.tau.tau_g);
        let dud = (self.welfare.utility_gradient(&s.ud) - &s.lam + wd).component_div(&self.tau.tau_d);
        let dv = -self.incidence.tr_mul(&s.lam).component_div(&self.tau.tau_v);
        let dlam = (&self.incidence * &s.v - &s.ug + &s.ud).component_div(&self.tau.tau_lambda);
        Ok(GradientControllerState {
            ug: dug,
            ud: dud,
            v: dv,
            lam: dlam,
        })
    }

    /// Port output: the dispatch slice of the state.
    pub fn output(&self, s: &GradientControllerState) -> (DVector<f64>, DVector<f64>) {
        (s.ug.clone(), s.ud.clone())
    }

    pub fn hamiltonian(&self, s: &GradientControllerState) -> f64 {
        self.tau.controller_hamiltonian(s)
    }

    /// Skew-symmetric interconnection of the controller on
    /// `(x_g, x_d, x_v, x_λ)`, with blocks `±I` and `±D_c`.
    pub fn structure_matrix(&self) -> DMatrix<f64> {
        let (n, mc) = (self.comm.node_count(), self.comm.edge_count());
        let size = 3 * n + mc;
        let (g, d, v, l) = (0, n, 2 * n, 2 * n + mc);
        let mut j = DMatrix::zeros(size, size);
        j.view_mut((g, l), (n, n)).fill_diagonal(1.0);
        j.view_mut((d, l), (n, n)).fill_diagonal(-1.0);
        j.view_mut((v, l), (mc, n))
            .copy_from(&(-self.incidence.transpose()));
        j.view_mut((l, g), (n, n)).fill_diagonal(-1.0);
        j.view_mut((l, d), (n, n)).fill_diagonal(1.0);
        j.view_mut((l, v), (n, mc)).copy_from(&self.incidence);
        j
    }
}
