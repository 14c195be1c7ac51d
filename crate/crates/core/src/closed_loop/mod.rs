//! Power-preserving interconnection of the swing network with a price
//! controller.
//!
//! The network output `y = (ω, −ω)` is fed to the controller as `−y` and the
//! controller output `(u_g, u_d)` is injected back into the network. The
//! resulting system is again port-Hamiltonian, with total energy
//! `H = H_p + H_c`.

mod equilibrium;
mod monitor;
mod simulate;

pub use monitor::{lyapunov_descent_check, segment_passivity, DescentReport};
pub use simulate::{simulate, Event, MonitorChannels, Segment, Trajectory};

use nalgebra::{DMatrix, DVector};

use crate::gradient::{GradientController, GradientControllerState, TimeConstants};
use crate::graph::NetworkGraph;
use crate::integrator;
use crate::internal_model::{InternalModelController, InternalModelState};
use crate::linalg::{max_norm, pseudo_inverse};
use crate::physics::{PhysicalParams, PhysicalState};
use crate::welfare::{kkt_residual_with_incidence, Welfare, WelfareModel};
use crate::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    InternalModel,
    Gradient(TimeConstants),
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::InternalModel => "internal-model",
            ControllerKind::Gradient(_) => "gradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerState {
    InternalModel(InternalModelState),
    Gradient(GradientControllerState),
}

impl ControllerState {
    pub fn lam(&self) -> &DVector<f64> {
        match self {
            ControllerState::InternalModel(s) => &s.lam,
            ControllerState::Gradient(s) => &s.lam,
        }
    }
}

/// Physical and controller state of the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub physical: PhysicalState,
    pub controller: ControllerState,
}

#[derive(Debug, Clone)]
enum Controller {
    InternalModel(InternalModelController),
    Gradient(GradientController),
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    physics: PhysicalParams,
    comm: NetworkGraph,
    welfare: WelfareModel,
    kind: ControllerKind,
    controller: Controller,
    comm_incidence: DMatrix<f64>,
    comm_pinv: DMatrix<f64>,
    structure: DMatrix<f64>,
}

impl ClosedLoopSystem {
    /// Fails when the graphs disagree on the node set, when dimensions are
    /// inconsistent, or when the internal-model controller is paired with
    /// non-quadratic welfare.
    pub fn new(
        physics: PhysicalParams,
        comm: NetworkGraph,
        welfare: WelfareModel,
        kind: ControllerKind,
    ) -> Result<Self> {
        check_dim(
            "communication graph nodes",
            physics.node_count(),
            comm.node_count(),
        )?;
        check_dim("welfare dimension", physics.node_count(), welfare.dim())?;
        let controller = match &kind {
            ControllerKind::InternalModel => {
                Controller::InternalModel(InternalModelController::new(&welfare, comm.clone())?)
            }
            ControllerKind::Gradient(tau) => Controller::Gradient(GradientController::new(
                welfare.clone(),
                comm.clone(),
                tau.clone(),
            )?),
        };
        let comm_incidence = comm.incidence();
        let comm_pinv = pseudo_inverse(&comm_incidence);
        let mut sys = Self {
            physics,
            comm,
            welfare,
            kind,
            controller,
            comm_incidence,
            comm_pinv,
            structure: DMatrix::zeros(0, 0),
        };
        sys.structure = sys.assemble_structure();
        Ok(sys)
    }

    /// Same network and controller with replaced welfare parameters.
    pub fn with_welfare(&self, welfare: WelfareModel) -> Result<Self> {
        Self::new(
            self.physics.clone(),
            self.comm.clone(),
            welfare,
            self.kind.clone(),
        )
    }

    /// Same system with communication edge `k` reversed.
    pub fn with_comm_edge_flipped(&self, k: usize) -> Result<Self> {
        Self::new(
            self.physics.clone(),
            self.comm.with_edge_flipped(k),
            self.welfare.clone(),
            self.kind.clone(),
        )
    }

    pub fn physics(&self) -> &PhysicalParams {
        &self.physics
    }

    pub fn comm(&self) -> &NetworkGraph {
        &self.comm
    }

    pub fn welfare(&self) -> &WelfareModel {
        &self.welfare
    }

    pub fn kind(&self) -> &ControllerKind {
        &self.kind
    }

    pub fn node_count(&self) -> usize {
        self.physics.node_count()
    }

    /// Length of the flattened state vector.
    pub fn state_len(&self) -> usize {
        let (n, m) = (self.physics.node_count(), self.physics.edge_count());
        m + n + self.controller_len()
    }

    fn controller_len(&self) -> usize {
        let n = self.physics.node_count();
        match self.kind {
            ControllerKind::InternalModel => n,
            ControllerKind::Gradient(_) => 3 * n + self.comm.edge_count(),
        }
    }

    pub fn check_state(&self, s: &FullState) -> Result<()> {
        self.physics.check_state(&s.physical)?;
        match (&self.controller, &s.controller) {
            (Controller::InternalModel(_), ControllerState::InternalModel(c)) => {
                check_dim("lambda", self.node_count(), c.lam.len())
            }
            (Controller::Gradient(ctl), ControllerState::Gradient(c)) => ctl.check_state(c),
            _ => Err(Error::ControllerKindMismatch),
        }
    }

    /// Generation and demand currently injected into the network.
    pub fn dispatch(&self, s: &FullState) -> Result<(DVector<f64>, DVector<f64>)> {
        match (&self.controller, &s.controller) {
            (Controller::InternalModel(ctl), ControllerState::InternalModel(c)) => {
                Ok(ctl.output(c))
            }
            (Controller::Gradient(ctl), ControllerState::Gradient(c)) => Ok(ctl.output(c)),
            _ => Err(Error::ControllerKindMismatch),
        }
    }

    /// Closed-loop vector field, computed by passing port signals between
    /// the two subsystems.
    pub fn rhs(&self, s: &FullState) -> Result<FullState> {
        self.check_state(s)?;
        let omega = self.physics.frequency_deviation(&s.physical);
        let neg_omega = -&omega;
        let (controller, ug, ud) = match (&self.controller, &s.controller) {
            (Controller::InternalModel(ctl), ControllerState::InternalModel(c)) => {
                let dlam = ctl.rhs(c, (&neg_omega, &omega))?;
                let (ug, ud) = ctl.output(c);
                (
                    ControllerState::InternalModel(InternalModelState { lam: dlam }),
                    ug,
                    ud,
                )
            }
            (Controller::Gradient(ctl), ControllerState::Gradient(c)) => {
                let d = ctl.rhs(c, &neg_omega, &omega)?;
                let (ug, ud) = ctl.output(c);
                (ControllerState::Gradient(d), ug, ud)
            }
            _ => return Err(Error::ControllerKindMismatch),
        };
        let physical = self.physics.rhs(&s.physical, &ug, &ud)?;
        let d = FullState {
            physical,
            controller,
        };
        #[cfg(debug_assertions)]
        {
            let direct = self.to_vector(&d);
            let assembled = self.to_vector(&self.rhs_assembled(s)?);
            let scale = 1.0 + max_norm(&direct);
            debug_assert!(
                max_norm(&(&direct - &assembled)) <= 1e-14 * scale,
                "port and assembled closed-loop fields disagree"
            );
        }
        Ok(d)
    }

    /// Closed-loop vector field from the assembled structure matrix,
    /// `x' = (J − R)∇H(x) − offset` for the internal-model loop and
    /// `x' = (J − R)∇H(x) − ∇R_w(z)` for the gradient loop.
    pub fn rhs_assembled(&self, s: &FullState) -> Result<FullState> {
        self.check_state(s)?;
        let (n, m) = (self.physics.node_count(), self.physics.edge_count());
        let grad = self.co_energy(s);
        let mut dx = &self.structure * &grad;
        match (&self.controller, &s.controller) {
            (Controller::InternalModel(ctl), _) => {
                let w = ctl.welfare();
                let offset = w.qg_inv() * w.c() + w.qd_inv() * w.b();
                let mut rows = dx.rows_mut(m, n);
                rows -= offset;
            }
            (Controller::Gradient(ctl), ControllerState::Gradient(c)) => {
                let tau = ctl.time_constants();
                let off = m + n;
                let cost = self.welfare.cost_gradient(&c.ug);
                let util = self.welfare.utility_gradient(&c.ud);
                {
                    let mut rows = dx.rows_mut(off, n);
                    rows -= cost;
                }
                {
                    let mut rows = dx.rows_mut(off + n, n);
                    rows += util;
                }
                // energy to co-energy rates
                let mc = self.comm.edge_count();
                let taus = [
                    (off, n, &tau.tau_g),
                    (off + n, n, &tau.tau_d),
                    (off + 2 * n, mc, &tau.tau_v),
                    (off + 2 * n + mc, n, &tau.tau_lambda),
                ];
                for (start, len, t) in taus {
                    let mut rows = dx.rows_mut(start, len);
                    rows.component_div_assign(t);
                }
            }
            _ => return Err(Error::ControllerKindMismatch),
        }
        Ok(self.from_vector(&dx))
    }

    /// `J − R` of the closed loop on `(eta, p, controller energy variables)`.
    pub fn structure_matrix(&self) -> &DMatrix<f64> {
        &self.structure
    }

    /// Skew-symmetric and negated symmetric parts of
    /// [`Self::structure_matrix`].
    pub fn interconnection_and_dissipation(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = &self.structure;
        let j = (s - s.transpose()) * 0.5;
        let r = -(s + s.transpose()) * 0.5;
        (j, r)
    }

    fn assemble_structure(&self) -> DMatrix<f64> {
        let (n, m) = (self.physics.node_count(), self.physics.edge_count());
        let d = self.physics.incidence();
        let size = self.state_len();
        let mut s = DMatrix::zeros(size, size);
        let (eta, p, ctl) = (0, m, m + n);
        s.view_mut((eta, p), (m, n)).copy_from(&d.transpose());
        s.view_mut((p, eta), (n, m)).copy_from(&(-d));
        s.view_mut((p, p), (n, n))
            .copy_from(&(-DMatrix::from_diagonal(self.physics.damping())));
        match &self.controller {
            Controller::InternalModel(c) => {
                let gain = c.welfare().qg_inv() + c.welfare().qd_inv();
                s.view_mut((p, ctl), (n, n)).copy_from(&gain);
                s.view_mut((ctl, p), (n, n)).copy_from(&(-gain));
                s.view_mut((ctl, ctl), (n, n))
                    .copy_from(&(-c.laplacian()));
            }
            Controller::Gradient(c) => {
                let k = self.controller_len();
                s.view_mut((p, ctl), (n, n)).fill_diagonal(1.0);
                s.view_mut((p, ctl + n), (n, n)).fill_diagonal(-1.0);
                s.view_mut((ctl, p), (n, n)).fill_diagonal(-1.0);
                s.view_mut((ctl + n, p), (n, n)).fill_diagonal(1.0);
                s.view_mut((ctl, ctl), (k, k))
                    .copy_from(&c.structure_matrix());
            }
        }
        s
    }

    /// `∇H` of the closed loop: `(Γ sin eta, ω, controller co-energy)`.
    fn co_energy(&self, s: &FullState) -> DVector<f64> {
        let (flows, omega) = self.physics.hamiltonian_gradient(&s.physical);
        let mut z = DVector::zeros(self.state_len());
        let (n, m) = (self.physics.node_count(), self.physics.edge_count());
        z.rows_mut(0, m).copy_from(&flows);
        z.rows_mut(m, n).copy_from(&omega);
        z.rows_mut(m + n, self.controller_len())
            .copy_from(&self.controller_vector(&s.controller));
        z
    }

    fn controller_vector(&self, c: &ControllerState) -> DVector<f64> {
        match c {
            ControllerState::InternalModel(c) => c.lam.clone(),
            ControllerState::Gradient(c) => DVector::from_iterator(
                self.controller_len(),
                c.ug.iter().chain(&c.ud).chain(&c.v).chain(&c.lam).copied(),
            ),
        }
    }

    /// Flattens `(eta, p, controller)` into one vector.
    pub fn to_vector(&self, s: &FullState) -> DVector<f64> {
        let (n, m) = (self.physics.node_count(), self.physics.edge_count());
        let mut x = DVector::zeros(self.state_len());
        x.rows_mut(0, m).copy_from(&s.physical.eta);
        x.rows_mut(m, n).copy_from(&s.physical.p);
        x.rows_mut(m + n, self.controller_len())
            .copy_from(&self.controller_vector(&s.controller));
        x
    }

    pub fn from_vector(&self, x: &DVector<f64>) -> FullState {
        let (n, m) = (self.physics.node_count(), self.physics.edge_count());
        let physical = PhysicalState {
            eta: x.rows(0, m).into_owned(),
            p: x.rows(m, n).into_owned(),
        };
        let off = m + n;
        let controller = match self.kind {
            ControllerKind::InternalModel => ControllerState::InternalModel(InternalModelState {
                lam: x.rows(off, n).into_owned(),
            }),
            ControllerKind::Gradient(_) => {
                let mc = self.comm.edge_count();
                ControllerState::Gradient(GradientControllerState {
                    ug: x.rows(off, n).into_owned(),
                    ud: x.rows(off + n, n).into_owned(),
                    v: x.rows(off + 2 * n, mc).into_owned(),
                    lam: x.rows(off + 2 * n + mc, n).into_owned(),
                })
            }
        };
        FullState {
            physical,
            controller,
        }
    }

    /// One classical RK4 step of the closed loop.
    pub fn rk4_step(&self, s: &FullState, dt: f64) -> Result<FullState> {
        self.check_state(s)?;
        let x = self.to_vector(s);
        let next = self.rk4_step_vector(&x, 0.0, dt)?;
        Ok(self.from_vector(&next))
    }

    pub(crate) fn rk4_step_vector(&self, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>> {
        integrator::rk4_step(
            |_, state| {
                let d = self.rhs(&self.from_vector(state))?;
                Ok(self.to_vector(&d))
            },
            t,
            x,
            dt,
        )
    }

    /// True iff `‖rhs(s)‖∞ < tol`.
    pub fn detect_steady_state(&self, s: &FullState, tol: f64) -> Result<bool> {
        Ok(self.rhs_norm(s)? < tol)
    }

    pub fn rhs_norm(&self, s: &FullState) -> Result<f64> {
        let d = self.rhs(s)?;
        Ok(max_norm(&self.to_vector(&d)))
    }

    /// Total stored energy `H_p + H_c`.
    pub fn hamiltonian(&self, s: &FullState) -> Result<f64> {
        let hp = self.physics.hamiltonian(&s.physical)?;
        let hc = match (&self.controller, &s.controller) {
            (Controller::InternalModel(_), ControllerState::InternalModel(c)) => c.hamiltonian(),
            (Controller::Gradient(ctl), ControllerState::Gradient(c)) => ctl.hamiltonian(c),
            _ => return Err(Error::ControllerKindMismatch),
        };
        Ok(hp + hc)
    }

    /// `uᵀy + u_cᵀy_c` across the interconnection; zero for a
    /// power-preserving coupling.
    pub fn interconnection_power(&self, s: &FullState) -> Result<f64> {
        let (ug, ud) = self.dispatch(s)?;
        let omega = self.physics.frequency_deviation(&s.physical);
        // network port: u = (u_g, u_d), y = (ω, −ω)
        let network = ug.dot(&omega) - ud.dot(&omega);
        // controller port: input −y, output (u_g, u_d)
        let controller = (-&omega).dot(&ug) + omega.dot(&ud);
        Ok(network + controller)
    }

    /// KKT residual of the dispatch implied by the state. For the
    /// internal-model controller, which has no `v`, the minimum-norm `v`
    /// with `D_c v = u_g − u_d` is used.
    pub fn kkt_residual(&self, s: &FullState) -> Result<f64> {
        let (ug, ud) = self.dispatch(s)?;
        let v = match &s.controller {
            ControllerState::InternalModel(_) => &self.comm_pinv * (&ug - &ud),
            ControllerState::Gradient(c) => c.v.clone(),
        };
        kkt_residual_with_incidence(
            &self.welfare,
            &self.comm_incidence,
            &ug,
            &ud,
            &v,
            s.controller.lam(),
        )
    }

    pub(crate) fn comm_incidence(&self) -> &DMatrix<f64> {
        &self.comm_incidence
    }

    pub(crate) fn comm_pinv(&self) -> &DMatrix<f64> {
        &self.comm_pinv
    }

    pub(crate) fn laplacian(&self) -> Option<&DMatrix<f64>> {
        match &self.controller {
            Controller::InternalModel(c) => Some(c.laplacian()),
            Controller::Gradient(_) => None,
        }
    }
}
