//! Shifted-Hamiltonian (Lyapunov) and passivity monitors.

use nalgebra::DVector;

use super::{ClosedLoopSystem, ControllerState, FullState};
use crate::physics::{passivity_residual, PassivityReport, PortSample};
use crate::welfare::Welfare;
use crate::{Error, Result};

impl ClosedLoopSystem {
    /// `H(x) − (x − x̄)ᵀ∇H(x̄) − H(x̄)` around the equilibrium `sbar`.
    pub fn shifted_hamiltonian(&self, s: &FullState, sbar: &FullState) -> Result<f64> {
        self.check_state(s)?;
        self.check_state(sbar)?;
        let physics = self.physics();
        let gamma = physics.line_gains();
        let (eta, eta_bar) = (&s.physical.eta, &sbar.physical.eta);
        let omega = physics.frequency_deviation(&s.physical);
        let kinetic = 0.5 * s.physical.p.dot(&omega);
        let potential = -gamma.dot(&eta.map(f64::cos))
            - (eta - eta_bar).dot(&physics.line_flows(eta_bar))
            + gamma.dot(&eta_bar.map(f64::cos));
        let controller = match (&s.controller, &sbar.controller) {
            (ControllerState::InternalModel(c), ControllerState::InternalModel(cb)) => {
                0.5 * (&c.lam - &cb.lam).norm_squared()
            }
            (ControllerState::Gradient(c), ControllerState::Gradient(cb)) => {
                let tau = match self.kind() {
                    super::ControllerKind::Gradient(tau) => tau,
                    super::ControllerKind::InternalModel => return Err(Error::ControllerKindMismatch),
                };
                let quad = |t: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>| {
                    let diff = a - b;
                    diff.dot(&t.component_mul(&diff))
                };
                0.5 * (quad(&tau.tau_g, &c.ug, &cb.ug)
                    + quad(&tau.tau_d, &c.ud, &cb.ud)
                    + quad(&tau.tau_v, &c.v, &cb.v)
                    + quad(&tau.tau_lambda, &c.lam, &cb.lam))
            }
            _ => return Err(Error::ControllerKindMismatch),
        };
        Ok(kinetic + potential + controller)
    }

    /// Analytic rate of the shifted Hamiltonian along the closed loop:
    /// `−ωᵀAω − (λ − λ̄)ᵀL_c(λ − λ̄)` for the internal-model loop and
    /// `−ωᵀAω − (z − z̄)ᵀ(∇R(z) − ∇R(z̄))` for the gradient loop.
    pub fn dissipation_rate(&self, s: &FullState, sbar: &FullState) -> Result<f64> {
        self.check_state(s)?;
        self.check_state(sbar)?;
        let damping = self.physics().damping_power(&s.physical);
        let controller = match (&s.controller, &sbar.controller) {
            (ControllerState::InternalModel(c), ControllerState::InternalModel(cb)) => {
                let diff = &c.lam - &cb.lam;
                let l = self.laplacian().ok_or(Error::ControllerKindMismatch)?;
                diff.dot(&(l * &diff))
            }
            (ControllerState::Gradient(c), ControllerState::Gradient(cb)) => {
                let w = self.welfare();
                let gen = (&c.ug - &cb.ug).dot(&(w.cost_gradient(&c.ug) - w.cost_gradient(&cb.ug)));
                let dem = (&c.ud - &cb.ud)
                    .dot(&(w.utility_gradient(&cb.ud) - w.utility_gradient(&c.ud)));
                gen + dem
            }
            _ => return Err(Error::ControllerKindMismatch),
        };
        Ok(-damping - controller)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentReport {
    /// Largest increase of the shifted Hamiltonian between consecutive
    /// samples, clipped at zero.
    pub max_increment: f64,
    /// Largest `|ΔH̄/Δt − ⟨analytic rate⟩|` with the analytic rate averaged
    /// over each interval by the trapezoidal rule.
    pub max_rate_mismatch: f64,
}

/// Checks that the shifted Hamiltonian around `sbar` decreases along a
/// sampled trajectory and that its finite-difference rate matches the
/// analytic dissipation.
pub fn lyapunov_descent_check(
    sys: &ClosedLoopSystem,
    times: &[f64],
    states: &[FullState],
    sbar: &FullState,
) -> Result<DescentReport> {
    if states.len() < 2 || times.len() != states.len() {
        return Err(Error::ShortTrajectory(states.len().min(times.len())));
    }
    let mut values = Vec::with_capacity(states.len());
    let mut rates = Vec::with_capacity(states.len());
    for s in states {
        values.push(sys.shifted_hamiltonian(s, sbar)?);
        rates.push(sys.dissipation_rate(s, sbar)?);
    }
    let mut report = DescentReport {
        max_increment: 0.0,
        max_rate_mismatch: 0.0,
    };
    for k in 0..states.len() - 1 {
        let increment = values[k + 1] - values[k];
        report.max_increment = report.max_increment.max(increment);
        let fd_rate = increment / (times[k + 1] - times[k]);
        let mean_rate = 0.5 * (rates[k] + rates[k + 1]);
        report.max_rate_mismatch = report.max_rate_mismatch.max((fd_rate - mean_rate).abs());
    }
    Ok(report)
}

/// Passivity of the network part of a closed-loop segment, with the
/// controller output as the port input.
pub fn segment_passivity(
    sys: &ClosedLoopSystem,
    times: &[f64],
    states: &[FullState],
) -> Result<PassivityReport> {
    let samples = times
        .iter()
        .zip(states)
        .map(|(&t, s)| {
            let (ug, ud) = sys.dispatch(s)?;
            Ok(PortSample {
                t,
                state: s.physical.clone(),
                ug,
                ud,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    passivity_residual(sys.physics(), &samples)
}
