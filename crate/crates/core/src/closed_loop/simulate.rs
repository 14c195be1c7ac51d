use std::ops::Range;

use super::{ClosedLoopSystem, FullState};
use crate::linalg::max_norm;
use crate::welfare::{price_disagreement, WelfareModel};
use crate::{Error, Result};

/// Replacement of the welfare parameters at a given time. The state is
/// continuous across the event.
#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub welfare: WelfareModel,
}

/// Monitor values recorded with every sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorChannels {
    pub hamiltonian: f64,
    /// NaN when no equilibrium could be solved for the segment.
    pub shifted_hamiltonian: f64,
    pub omega_norm: f64,
    pub kkt_residual: f64,
    pub price_disagreement: f64,
    pub security_margin: f64,
}

impl MonitorChannels {
    pub const NAMES: [&'static str; 6] = [
        "hamiltonian",
        "shifted_hamiltonian",
        "omega_norm",
        "kkt_residual",
        "price_disagreement",
        "security_margin",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.hamiltonian,
            self.shifted_hamiltonian,
            self.omega_norm,
            self.kkt_residual,
            self.price_disagreement,
            self.security_margin,
        ]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self {
            hamiltonian: v[0],
            shifted_hamiltonian: v[1],
            omega_norm: v[2],
            kkt_residual: v[3],
            price_disagreement: v[4],
            security_margin: v[5],
        }
    }
}

/// Interval between events, with the parameters active on it.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start_time: f64,
    pub end_time: f64,
    /// Sample indices covered. Consecutive segments share the sample taken
    /// at the event time; its channels use the earlier segment's parameters.
    pub samples: Range<usize>,
    pub system: ClosedLoopSystem,
    /// Lyapunov anchor, re-solved at the start of the segment.
    pub equilibrium: Option<FullState>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub sample_every: usize,
    pub times: Vec<f64>,
    pub states: Vec<FullState>,
    pub channels: Vec<MonitorChannels>,
    pub segments: Vec<Segment>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &FullState {
        self.states.last().expect("a trajectory always holds the initial sample")
    }

    pub fn final_system(&self) -> &ClosedLoopSystem {
        &self.segments.last().expect("at least one segment").system
    }

    /// Index of the last sample with time `<= t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times
            .partition_point(|&s| s <= t + 1e-12)
            .saturating_sub(1)
    }

    /// Total variation `Σ |λ_i(t_{k+1}) − λ_i(t_k)|` of each price over the
    /// samples with `t >= from`.
    pub fn lambda_total_variation(&self, from: f64) -> Vec<f64> {
        let start = self.index_at(from);
        let n = self.states[0].controller.lam().len();
        let mut tv = vec![0.0; n];
        for w in self.states[start..].windows(2) {
            let (a, b) = (w[0].controller.lam(), w[1].controller.lam());
            for i in 0..n {
                tv[i] += (b[i] - a[i]).abs();
            }
        }
        tv
    }
}

fn step_index(t: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = t / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-6 {
        return Err(Error::Integration(format!(
            "{what} = {t} is not a multiple of dt = {dt}"
        )));
    }
    Ok(steps as usize)
}

fn channels(sys: &ClosedLoopSystem, s: &FullState, anchor: Option<&FullState>) -> Result<MonitorChannels> {
    let shifted = match anchor {
        Some(bar) => sys.shifted_hamiltonian(s, bar)?,
        None => f64::NAN,
    };
    Ok(MonitorChannels {
        hamiltonian: sys.hamiltonian(s)?,
        shifted_hamiltonian: shifted,
        omega_norm: max_norm(&sys.physics().frequency_deviation(&s.physical)),
        kkt_residual: sys.kkt_residual(s)?,
        price_disagreement: price_disagreement(s.controller.lam()),
        security_margin: sys.physics().security_margin(&s.physical.eta),
    })
}

/// Integrates the closed loop with fixed-step RK4 from `t = 0` to `t_end`.
///
/// Samples are recorded at step 0, at every `sample_every`-th step, at
/// every event step and at the final step (each step at most once). Events
/// swap the welfare parameters exactly at their (step-aligned) times.
pub fn simulate(
    sys: &ClosedLoopSystem,
    s0: &FullState,
    t_end: f64,
    dt: f64,
    events: &[Event],
    sample_every: usize,
) -> Result<Trajectory> {
    sys.check_state(s0)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Integration(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Integration(format!("t_end must be non-negative, got {t_end}")));
    }
    if sample_every == 0 {
        return Err(Error::Integration("sample_every must be at least 1".into()));
    }
    let total = step_index(t_end, dt, "t_end")?;
    let mut event_steps = Vec::with_capacity(events.len());
    for (i, event) in events.iter().enumerate() {
        if !(event.time >= 0.0) {
            return Err(Error::Integration(format!("event {i} has negative time {}", event.time)));
        }
        if event.time > t_end {
            return Err(Error::Integration(format!(
                "event {i} at t = {} lies beyond t_end = {t_end}",
                event.time
            )));
        }
        if i > 0 && event.time <= events[i - 1].time {
            return Err(Error::Integration("event times must be strictly increasing".into()));
        }
        event_steps.push(step_index(event.time, dt, "event time")?);
    }

    let anchor = |system: &ClosedLoopSystem, s: &FullState| system.solve_equilibrium_near(s).ok();

    let mut system = sys.clone();
    let mut equilibrium = anchor(&system, s0);
    let mut trajectory = Trajectory {
        dt,
        sample_every,
        times: vec![0.0],
        states: vec![s0.clone()],
        channels: vec![channels(&system, s0, equilibrium.as_ref())?],
        segments: Vec::with_capacity(events.len() + 1),
    };
    let mut segment_start = (0.0, 0usize);
    let mut next_event = 0;
    let mut x = system.to_vector(s0);

    let close_segment = |trajectory: &mut Trajectory,
                             system: &ClosedLoopSystem,
                             equilibrium: &Option<FullState>,
                             start: (f64, usize),
                             end_time: f64| {
        trajectory.segments.push(Segment {
            start_time: start.0,
            end_time,
            samples: start.1..trajectory.times.len(),
            system: system.clone(),
            equilibrium: equilibrium.clone(),
        });
    };

    for step in 0..=total {
        while next_event < events.len() && event_steps[next_event] == step {
            let t = step as f64 * dt;
            close_segment(&mut trajectory, &system, &equilibrium, segment_start, t);
            system = system.with_welfare(events[next_event].welfare.clone())?;
            let current = trajectory.states.last().expect("sample recorded at event step");
            equilibrium = anchor(&system, current);
            segment_start = (t, trajectory.times.len() - 1);
            next_event += 1;
        }
        if step == total {
            break;
        }
        let t = step as f64 * dt;
        x = system.rk4_step_vector(&x, t, dt).map_err(|e| match e {
            Error::NonFiniteDerivative { .. } => Error::NonFiniteDerivative { time: t },
            other => other,
        })?;
        let next = step + 1;
        let is_sample = next % sample_every == 0
            || next == total
            || event_steps.binary_search(&next).is_ok();
        if is_sample {
            let s = system.from_vector(&x);
            trajectory.times.push(next as f64 * dt);
            trajectory
                .channels
                .push(channels(&system, &s, equilibrium.as_ref())?);
            trajectory.states.push(s);
        }
    }
    close_segment(
        &mut trajectory,
        &system,
        &equilibrium,
        segment_start,
        total as f64 * dt,
    );
    Ok(trajectory)
}
