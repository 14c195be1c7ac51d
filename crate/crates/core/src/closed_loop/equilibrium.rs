use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use super::{ClosedLoopSystem, ControllerKind, ControllerState, FullState};
use crate::gradient::GradientControllerState;
use crate::internal_model::InternalModelState;
use crate::linalg::{max_norm, pseudo_inverse};
use crate::physics::{PhysicalParams, PhysicalState};
use crate::{Error, Result};

/// Largest admissible `|f_k / γ_k|`, i.e. `sin(0.999 π/2)`.
pub(crate) fn flow_threshold() -> f64 {
    (0.999 * FRAC_PI_2).sin()
}

const BALANCE_TOL: f64 = 1e-9;

impl ClosedLoopSystem {
    /// Optimal zero-frequency operating point with line angles inside the
    /// security region and no circulating angle around any cycle.
    pub fn solve_equilibrium(&self) -> Result<FullState> {
        self.solve_equilibrium_with(None)
    }

    /// Like [`Self::solve_equilibrium`], but keeps the cycle-space components
    /// of `reference` (angle sums around physical loops, price flows around
    /// communication loops). These are conserved by the dynamics, so the
    /// result is the equilibrium a trajectory through `reference` can reach.
    pub fn solve_equilibrium_near(&self, reference: &FullState) -> Result<FullState> {
        self.check_state(reference)?;
        self.solve_equilibrium_with(Some(reference))
    }

    fn solve_equilibrium_with(&self, reference: Option<&FullState>) -> Result<FullState> {
        let dispatch = self.welfare().optimal_dispatch()?;
        let injection = &dispatch.ug - &dispatch.ud;
        let eta_ref = reference.map(|r| &r.physical.eta);
        let eta = equilibrium_angles(self.physics(), &injection, eta_ref)?;
        let physical = PhysicalState {
            eta,
            p: DVector::zeros(self.node_count()),
        };
        let controller = match self.kind() {
            ControllerKind::InternalModel => ControllerState::InternalModel(InternalModelState {
                lam: dispatch.lambda,
            }),
            ControllerKind::Gradient(_) => {
                let mut v = self.comm_pinv() * &injection;
                if let Some(ControllerState::Gradient(r)) = reference.map(|r| &r.controller) {
                    let d = self.comm_incidence();
                    // component of the reference in ker(D_c)
                    v += &r.v - self.comm_pinv() * (d * &r.v);
                }
                ControllerState::Gradient(GradientControllerState {
                    ug: dispatch.ug,
                    ud: dispatch.ud,
                    v,
                    lam: dispatch.lambda,
                })
            }
        };
        Ok(FullState {
            physical,
            controller,
        })
    }
}

/// Line angles `eta` with `D Γ sin(eta) = injection`, `|eta_k| < π/2`.
///
/// Starts from the arcsine of the minimum-norm line flow. On meshed
/// networks that point generally violates the loop condition (angles
/// around a cycle must sum to the reference's cycle component), so a damped
/// Newton iteration on bus angles refines it.
pub(crate) fn equilibrium_angles(
    physics: &PhysicalParams,
    injection: &DVector<f64>,
    eta_ref: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let graph = physics.graph();
    let d = physics.incidence();
    let gamma = physics.line_gains();
    let flow = graph.min_norm_flow(injection);
    let threshold = flow_threshold();
    let mut eta0 = DVector::zeros(graph.edge_count());
    for k in 0..graph.edge_count() {
        let ratio = flow[k] / gamma[k];
        if !(ratio.abs() <= threshold) {
            return Err(Error::InfeasibleFlow {
                edge: k,
                ratio: ratio.abs(),
            });
        }
        eta0[k] = ratio.asin();
    }

    let residual_of = |eta: &DVector<f64>| max_norm(&(d * physics.line_flows(eta) - injection));

    if graph.cycle_rank() == 0 {
        let residual = residual_of(&eta0);
        return if residual < BALANCE_TOL {
            Ok(eta0)
        } else {
            Err(Error::NoConvergence {
                what: "equilibrium line angles",
                residual,
            })
        };
    }

    let dt_pinv = pseudo_inverse(&d.transpose());
    let cycle_part = match eta_ref {
        Some(r) => r - d.transpose() * (&dt_pinv * r),
        None => DVector::zeros(graph.edge_count()),
    };
    let mut delta = &dt_pinv * &eta0;
    let angles = |delta: &DVector<f64>| d.tr_mul(delta) + &cycle_part;

    let mut eta = angles(&delta);
    let mut residual = residual_of(&eta);
    for _ in 0..100 {
        if residual < 1e-13 {
            break;
        }
        let weights = gamma.component_mul(&eta.map(f64::cos));
        let jacobian: DMatrix<f64> = d * DMatrix::from_diagonal(&weights) * d.transpose();
        let mismatch = d * physics.line_flows(&eta) - injection;
        let step = -pseudo_inverse(&jacobian) * mismatch;
        let mut alpha = 1.0;
        loop {
            let candidate = &delta + &step * alpha;
            let candidate_eta = angles(&candidate);
            let r = residual_of(&candidate_eta);
            if r < residual || alpha < 1e-10 {
                delta = candidate;
                eta = candidate_eta;
                residual = r;
                break;
            }
            alpha *= 0.5;
        }
    }

    if residual >= BALANCE_TOL {
        return Err(Error::NoConvergence {
            what: "equilibrium line angles",
            residual,
        });
    }
    // the refinement must stay on the principal branch
    if let Some(edge) = eta.iter().position(|e| e.abs() >= 0.999 * FRAC_PI_2) {
        return Err(Error::InfeasibleFlow {
            edge,
            ratio: eta[edge].sin().abs(),
        });
    }
    Ok(eta)
}
