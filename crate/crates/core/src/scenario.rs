//! Scenario files.
//!
//! A scenario is a TOML document with the sections `[physical]`,
//! `[communication]`, `[welfare]`, `[controller]`, `[integration]` and the
//! optional `[initial]`, `[[events]]` and `[output]`. See
//! `scenarios/four_area.scenario` for a complete example. Every field is
//! validated before a run; errors name the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::closed_loop::{ClosedLoopSystem, ControllerKind, ControllerState, Event, FullState};
use crate::gradient::{GradientControllerState, TimeConstants};
use crate::graph::{GraphError, NetworkGraph};
use crate::internal_model::InternalModelState;
use crate::physics::{PhysicalParams, PhysicalState};
use crate::welfare::{QuadraticWelfare, QuarticWelfareParams, WelfareModel};

/// The four-area benchmark shipped with the crate.
pub const FOUR_AREA: &str = include_str!("../scenarios/four_area.scenario");

/// Four-area benchmark with quartic generation costs.
pub const FOUR_AREA_QUARTIC: &str = include_str!("../scenarios/four_area_quartic.scenario");

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    Io { path: PathBuf, message: String },
    Parse(String),
    Invalid { field: String, message: String },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io { path, message } => {
                write!(f, "cannot read {}: {message}", path.display())
            }
            ScenarioError::Parse(message) => write!(f, "parse error: {message}"),
            ScenarioError::Invalid { field, message } => write!(f, "invalid {field}: {message}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn invalid(field: &str, message: impl fmt::Display) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerChoice {
    InternalModel,
    Gradient,
}

impl ControllerChoice {
    pub fn name(self) -> &'static str {
        match self {
            ControllerChoice::InternalModel => "internal-model",
            ControllerChoice::Gradient => "gradient",
        }
    }
}

impl std::str::FromStr for ControllerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal-model" => Ok(ControllerChoice::InternalModel),
            "gradient" => Ok(ControllerChoice::Gradient),
            other => Err(format!(
                "unknown controller '{other}', expected internal-model or gradient"
            )),
        }
    }
}

// ---- raw file layout -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    physical: RawPhysical,
    communication: RawCommunication,
    welfare: RawWelfare,
    controller: RawController,
    initial: Option<RawInitial>,
    #[serde(default)]
    events: Vec<RawEvent>,
    integration: RawIntegration,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysical {
    nodes: usize,
    edges: Vec<[usize; 2]>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
    line_gains: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCommunication {
    edges: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    same_as_physical: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWelfare {
    qg: RawMatrix,
    qd: RawMatrix,
    c: Vec<f64>,
    b: Vec<f64>,
    quartic_g: Option<Vec<f64>>,
    quartic_d: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    kind: ControllerChoice,
    tau_g: Option<Vec<f64>>,
    tau_d: Option<Vec<f64>>,
    tau_v: Option<Vec<f64>>,
    tau_lambda: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    kind: String,
    eta: Option<Vec<f64>>,
    p: Option<Vec<f64>>,
    lam: Option<Vec<f64>>,
    ug: Option<Vec<f64>>,
    ud: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    time: f64,
    b: Option<Vec<f64>>,
    c: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegration {
    t_end: f64,
    dt: f64,
    sample_every: usize,
    steady_tol: Option<f64>,
    target_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

// ---- validated scenario ----------------------------------------------------

/// Welfare parameters as configured; rebuilt per event segment.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareSpec {
    pub qg: DMatrix<f64>,
    pub qd: DMatrix<f64>,
    pub c: DVector<f64>,
    pub b: DVector<f64>,
    /// Quartic coefficients `(generation, demand)` of the
    /// quadratic-plus-quartic family, if selected.
    pub quartic: Option<(DVector<f64>, DVector<f64>)>,
}

impl WelfareSpec {
    pub fn build(&self) -> crate::Result<WelfareModel> {
        let quadratic =
            QuadraticWelfare::new(self.qg.clone(), self.qd.clone(), self.c.clone(), self.b.clone())?;
        match &self.quartic {
            None => Ok(WelfareModel::Quadratic(quadratic)),
            Some((kg, kd)) => {
                if !quadratic.is_separable() {
                    return Err(crate::Error::NotPositiveDefinite {
                        what: "diagonal Q_g/Q_d (quartic family is separable)",
                    });
                }
                let params = QuarticWelfareParams {
                    qg: self.qg.diagonal(),
                    qd: self.qd.diagonal(),
                    c: self.c.clone(),
                    b: self.b.clone(),
                    kg: kg.clone(),
                    kd: kd.clone(),
                };
                Ok(WelfareModel::Convex(params.build()?))
            }
        }
    }

    fn with_event(&self, event: &EventSpec) -> Self {
        let mut next = self.clone();
        if let Some(b) = &event.b {
            next.b = b.clone();
        }
        if let Some(c) = &event.c {
            next.c = c.clone();
        }
        next
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventSpec {
    pub time: f64,
    pub b: Option<DVector<f64>>,
    pub c: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Optimal steady operation for the parameters active at `t = 0`.
    Equilibrium,
    Explicit {
        eta: DVector<f64>,
        p: DVector<f64>,
        lam: Option<DVector<f64>>,
        ug: Option<DVector<f64>>,
        ud: Option<DVector<f64>>,
        v: Option<DVector<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSettings {
    pub t_end: f64,
    pub dt: f64,
    pub sample_every: usize,
    pub steady_tol: f64,
    pub target_tol: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub physics: PhysicalParams,
    pub comm: NetworkGraph,
    pub welfare: WelfareSpec,
    pub controller: ControllerChoice,
    pub time_constants: TimeConstants,
    pub initial: InitialCondition,
    pub events: Vec<EventSpec>,
    pub settings: IntegrationSettings,
    pub output_dir: PathBuf,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    Scenario::parse(&text, &default_name)
}

fn vector(field: &str, values: &[f64], len: usize) -> Result<DVector<f64>, ScenarioError> {
    if values.len() != len {
        return Err(invalid(
            field,
            format!("expected {len} entries, found {}", values.len()),
        ));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(invalid(field, format!("entry {i} is not finite")));
    }
    Ok(DVector::from_column_slice(values))
}

fn positive(field: &str, values: &[f64], len: usize) -> Result<DVector<f64>, ScenarioError> {
    let v = vector(field, values, len)?;
    if let Some(i) = v.iter().position(|&x| x <= 0.0) {
        return Err(invalid(
            field,
            format!("entry {i} must be strictly positive (got {})", v[i]),
        ));
    }
    Ok(v)
}

fn matrix(field: &str, raw: &RawMatrix, n: usize) -> Result<DMatrix<f64>, ScenarioError> {
    match raw {
        RawMatrix::Diagonal(d) => Ok(DMatrix::from_diagonal(&positive(field, d, n)?)),
        RawMatrix::Dense(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(invalid(field, format!("expected a {n}x{n} matrix")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            if flat.iter().any(|x| !x.is_finite()) {
                return Err(invalid(field, "entries must be finite"));
            }
            Ok(DMatrix::from_row_slice(n, n, &flat))
        }
    }
}

fn graph(field: &str, n: usize, edges: &[[usize; 2]]) -> Result<NetworkGraph, ScenarioError> {
    let label = if field.starts_with("communication") {
        "communication graph"
    } else {
        "physical graph"
    };
    NetworkGraph::new(n, edges.iter().map(|e| (e[0], e[1])).collect()).map_err(|e| match e {
        GraphError::Disconnected => invalid(field, format!("{label} not connected")),
        other => invalid(field, other),
    })
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.iter().enumerate().all(|(k, &x)| k / m.nrows() == k % m.nrows() || x == 0.0)
}

fn welfare_error(field: &str, e: crate::Error) -> ScenarioError {
    invalid(field, e)
}

impl Scenario {
    pub fn parse(text: &str, default_name: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::from_raw(raw, default_name)
    }

    /// The bundled four-area benchmark.
    pub fn four_area() -> Self {
        Self::parse(FOUR_AREA, "four_area").expect("bundled scenario is valid")
    }

    /// The bundled quartic-cost variant of the four-area benchmark.
    pub fn four_area_quartic() -> Self {
        Self::parse(FOUR_AREA_QUARTIC, "four_area_quartic").expect("bundled scenario is valid")
    }

    fn from_raw(raw: RawScenario, default_name: &str) -> Result<Self, ScenarioError> {
        let n = raw.physical.nodes;
        if n == 0 {
            return Err(invalid("physical.nodes", "must be at least 1"));
        }
        let physical_graph = graph("physical.edges", n, &raw.physical.edges)?;
        let m = physical_graph.edge_count();
        let inertia = positive("physical.inertia", &raw.physical.inertia, n)?;
        let damping = positive("physical.damping", &raw.physical.damping, n)?;
        let gains = positive("physical.line_gains", &raw.physical.line_gains, m)?;
        let physics = PhysicalParams::new(physical_graph.clone(), inertia, damping, gains)
            .map_err(|e| invalid("physical", e))?;

        let comm = match (&raw.communication.edges, raw.communication.same_as_physical) {
            (Some(_), true) => {
                return Err(invalid(
                    "communication",
                    "give either edges or same_as_physical, not both",
                ))
            }
            (Some(edges), false) => graph("communication.edges", n, edges)?,
            (None, true) => physical_graph.clone(),
            (None, false) => return Err(invalid("communication.edges", "missing")),
        };
        let mc = comm.edge_count();

        let w = &raw.welfare;
        let quartic = match (&w.quartic_g, &w.quartic_d) {
            (None, None) => None,
            (kg, kd) => {
                let zeros = vec![0.0; n];
                let kg = vector("welfare.quartic_g", kg.as_deref().unwrap_or(&zeros), n)?;
                let kd = vector("welfare.quartic_d", kd.as_deref().unwrap_or(&zeros), n)?;
                for (field, k) in [("welfare.quartic_g", &kg), ("welfare.quartic_d", &kd)] {
                    if let Some(i) = k.iter().position(|&x| x < 0.0) {
                        return Err(invalid(field, format!("entry {i} must be non-negative")));
                    }
                }
                Some((kg, kd))
            }
        };
        let welfare = WelfareSpec {
            qg: matrix("welfare.qg", &w.qg, n)?,
            qd: matrix("welfare.qd", &w.qd, n)?,
            c: vector("welfare.c", &w.c, n)?,
            b: vector("welfare.b", &w.b, n)?,
            quartic,
        };
        if welfare.quartic.is_some() && !(is_diagonal(&welfare.qg) && is_diagonal(&welfare.qd)) {
            return Err(invalid("welfare.qg", "the quartic family needs diagonal qg and qd"));
        }
        let base_model = welfare.build().map_err(|e| welfare_error("welfare", e))?;

        let ctl = &raw.controller;
        let tau_or_unit = |field: &str, v: &Option<Vec<f64>>, len: usize| match v {
            Some(v) => positive(field, v, len),
            None => Ok(DVector::from_element(len, 1.0)),
        };
        let time_constants = TimeConstants {
            tau_g: tau_or_unit("controller.tau_g", &ctl.tau_g, n)?,
            tau_d: tau_or_unit("controller.tau_d", &ctl.tau_d, n)?,
            tau_v: tau_or_unit("controller.tau_v", &ctl.tau_v, mc)?,
            tau_lambda: tau_or_unit("controller.tau_lambda", &ctl.tau_lambda, n)?,
        };
        if ctl.kind == ControllerChoice::InternalModel && base_model.as_quadratic().is_none() {
            return Err(invalid(
                "controller.kind",
                "the internal-model controller requires quadratic welfare",
            ));
        }

        let initial = match &raw.initial {
            None => InitialCondition::Equilibrium,
            Some(init) => match init.kind.as_str() {
                "equilibrium" => InitialCondition::Equilibrium,
                "explicit" => {
                    let opt = |field: &str, v: &Option<Vec<f64>>, len: usize| {
                        v.as_ref().map(|v| vector(field, v, len)).transpose()
                    };
                    InitialCondition::Explicit {
                        eta: vector("initial.eta", init.eta.as_deref().unwrap_or(&vec![0.0; m]), m)?,
                        p: vector("initial.p", init.p.as_deref().unwrap_or(&vec![0.0; n]), n)?,
                        lam: opt("initial.lam", &init.lam, n)?,
                        ug: opt("initial.ug", &init.ug, n)?,
                        ud: opt("initial.ud", &init.ud, n)?,
                        v: opt("initial.v", &init.v, mc)?,
                    }
                }
                other => {
                    return Err(invalid(
                        "initial.kind",
                        format!("expected 'equilibrium' or 'explicit', got '{other}'"),
                    ))
                }
            },
        };

        let mut events = Vec::with_capacity(raw.events.len());
        for (i, e) in raw.events.iter().enumerate() {
            let field = |name: &str| format!("events[{i}].{name}");
            if !(e.time >= 0.0) || !e.time.is_finite() {
                return Err(invalid(&field("time"), "must be a finite non-negative time"));
            }
            if e.b.is_none() && e.c.is_none() {
                return Err(invalid(&field("b"), "an event must change b or c"));
            }
            let spec = EventSpec {
                time: e.time,
                b: e.b.as_ref().map(|b| vector(&field("b"), b, n)).transpose()?,
                c: e.c.as_ref().map(|c| vector(&field("c"), c, n)).transpose()?,
            };
            events.push(spec);
        }

        let r = &raw.integration;
        let settings = IntegrationSettings {
            t_end: r.t_end,
            dt: r.dt,
            sample_every: r.sample_every,
            steady_tol: r.steady_tol.unwrap_or(1e-6),
            target_tol: r.target_tol.unwrap_or(1e-3),
        };

        let scenario = Scenario {
            name: raw.name.unwrap_or_else(|| default_name.to_string()),
            physics,
            comm,
            welfare,
            controller: ctl.kind,
            time_constants,
            initial,
            events,
            settings,
            output_dir: PathBuf::from(
                raw.output
                    .and_then(|o| o.dir)
                    .unwrap_or_else(|| "out".to_string()),
            ),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Checks everything that depends on several sections at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let s = &self.settings;
        if !(s.dt > 0.0) || !s.dt.is_finite() {
            return Err(invalid("integration.dt", "must be positive"));
        }
        if !(s.t_end >= 0.0) || !s.t_end.is_finite() {
            return Err(invalid("integration.t_end", "must be non-negative"));
        }
        if s.sample_every == 0 {
            return Err(invalid("integration.sample_every", "must be at least 1"));
        }
        if !(s.steady_tol > 0.0) {
            return Err(invalid("integration.steady_tol", "must be positive"));
        }
        if !(s.target_tol > 0.0) {
            return Err(invalid("integration.target_tol", "must be positive"));
        }
        let aligned = |t: f64| ((t / s.dt) - (t / s.dt).round()).abs() <= 1e-6;
        if !aligned(s.t_end) {
            return Err(invalid("integration.t_end", "must be a multiple of dt"));
        }
        let mut spec = self.welfare.clone();
        let mut previous = None;
        for (i, e) in self.events.iter().enumerate() {
            let field = format!("events[{i}].time");
            if e.time > s.t_end {
                return Err(invalid(&field, format!("{} lies beyond t_end = {}", e.time, s.t_end)));
            }
            if !aligned(e.time) {
                return Err(invalid(&field, "must be a multiple of dt"));
            }
            if previous.is_some_and(|p| e.time <= p) {
                return Err(invalid(&field, "event times must be strictly increasing"));
            }
            previous = Some(e.time);
            spec = spec.with_event(e);
            spec.build()
                .map_err(|err| invalid(&format!("events[{i}]"), err))?;
        }
        if let InitialCondition::Explicit { ug, ud, .. } = &self.initial {
            if self.controller == ControllerChoice::Gradient && (ug.is_none() || ud.is_none()) {
                return Err(invalid(
                    "initial.ug",
                    "explicit gradient-controller starts need ug and ud",
                ));
            }
        }
        Ok(())
    }

    pub fn with_controller(mut self, controller: ControllerChoice) -> Result<Self, ScenarioError> {
        self.controller = controller;
        if controller == ControllerChoice::InternalModel {
            let model = self.welfare.build().map_err(|e| welfare_error("welfare", e))?;
            if model.as_quadratic().is_none() {
                return Err(invalid(
                    "controller.kind",
                    "the internal-model controller requires quadratic welfare",
                ));
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self, ScenarioError> {
        self.settings.dt = dt;
        self.validate()?;
        Ok(self)
    }

    pub fn with_t_end(mut self, t_end: f64) -> Result<Self, ScenarioError> {
        self.settings.t_end = t_end;
        self.validate()?;
        Ok(self)
    }

    pub fn controller_kind(&self) -> ControllerKind {
        match self.controller {
            ControllerChoice::InternalModel => ControllerKind::InternalModel,
            ControllerChoice::Gradient => ControllerKind::Gradient(self.time_constants.clone()),
        }
    }

    /// Closed-loop system with the welfare active at `t = 0`.
    pub fn system(&self) -> crate::Result<ClosedLoopSystem> {
        ClosedLoopSystem::new(
            self.physics.clone(),
            self.comm.clone(),
            self.welfare.build()?,
            self.controller_kind(),
        )
    }

    /// Events with fully rebuilt welfare models.
    pub fn events(&self) -> crate::Result<Vec<Event>> {
        let mut spec = self.welfare.clone();
        self.events
            .iter()
            .map(|e| {
                spec = spec.with_event(e);
                Ok(Event {
                    time: e.time,
                    welfare: spec.build()?,
                })
            })
            .collect()
    }

    pub fn initial_state(&self, sys: &ClosedLoopSystem) -> crate::Result<FullState> {
        match &self.initial {
            InitialCondition::Equilibrium => sys.solve_equilibrium(),
            InitialCondition::Explicit {
                eta,
                p,
                lam,
                ug,
                ud,
                v,
            } => {
                let physical = PhysicalState {
                    eta: eta.clone(),
                    p: p.clone(),
                };
                let default_lam = || -> crate::Result<DVector<f64>> {
                    Ok(sys.welfare().optimal_dispatch()?.lambda)
                };
                let lam = match lam {
                    Some(l) => l.clone(),
                    None => default_lam()?,
                };
                let controller = match self.controller {
                    ControllerChoice::InternalModel => {
                        ControllerState::InternalModel(InternalModelState { lam })
                    }
                    ControllerChoice::Gradient => {
                        let n = sys.node_count();
                        let ug = ug.clone().unwrap_or_else(|| DVector::zeros(n));
                        let ud = ud.clone().unwrap_or_else(|| DVector::zeros(n));
                        let v = match v {
                            Some(v) => v.clone(),
                            None => default_flow(&self.comm, &ug, &ud),
                        };
                        ControllerState::Gradient(GradientControllerState { ug, ud, v, lam })
                    }
                };
                let s = FullState {
                    physical,
                    controller,
                };
                sys.check_state(&s)?;
                Ok(s)
            }
        }
    }
}

/// Minimum-norm `v` with `D_c v = u_g − u_d` when the dispatch is balanced,
/// zero otherwise.
pub fn default_flow(comm: &NetworkGraph, ug: &DVector<f64>, ud: &DVector<f64>) -> DVector<f64> {
    let imbalance = ug - ud;
    if imbalance.sum().abs() <= 1e-12 * (1.0 + imbalance.amax()) {
        comm.min_norm_flow(&imbalance)
    } else {
        DVector::zeros(comm.edge_count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_loads() {
        let s = Scenario::four_area();
        assert_eq!(s.physics.node_count(), 4);
        assert_eq!(s.physics.edge_count(), 4);
        assert_eq!(s.comm.edge_count(), 4);
        assert_eq!(s.welfare.qg, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])));
        assert_eq!(s.welfare.qd, DMatrix::identity(4, 4));
        assert_eq!(s.welfare.c, DVector::zeros(4));
        assert_eq!(s.welfare.b, DVector::from_vec(vec![1.0, 1.25, 1.5, 1.75]));
        assert_eq!(s.physics.inertia(), &DVector::from_element(4, 1.0));
        assert_eq!(s.physics.damping(), &DVector::from_element(4, 2.0));
        assert_eq!(s.physics.line_gains(), &DVector::from_element(4, 1.0));
        assert_eq!(s.time_constants, TimeConstants::unit(4, 4));
        assert_eq!(s.events.len(), 1);
        assert_eq!(s.events[0].time, 1.0);
        assert_eq!(s.events[0].b, Some(DVector::from_vec(vec![1.0, 1.25, 1.5, 2.0])));
        assert_eq!(s.comm, s.physics.graph().clone());
        Scenario::four_area_quartic();
    }

    fn replace(text: &str, from: &str, to: &str) -> String {
        assert!(text.contains(from), "bundled scenario lacks {from:?}");
        text.replacen(from, to, 1)
    }

    #[test]
    fn disconnected_communication_graph() {
        let text = replace(
            FOUR_AREA,
            "same_as_physical = true",
            "edges = [[0, 1], [2, 3]]",
        );
        let err = Scenario::parse(&text, "x").unwrap_err();
        assert!(err.to_string().contains("communication graph not connected"), "{err}");
    }

    #[test]
    fn negative_inertia_names_field() {
        let text = replace(FOUR_AREA, "inertia = [1.0, 1.0, 1.0, 1.0]", "inertia = [1.0, -1.0, 1.0, 1.0]");
        let err = Scenario::parse(&text, "x").unwrap_err();
        assert!(matches!(&err, ScenarioError::Invalid { field, .. } if field == "physical.inertia"), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = Scenario::parse("[physical]\nnodes = \"four\"\n", "x").unwrap_err();
        let ScenarioError::Parse(message) = err else { panic!("expected parse error") };
        assert!(message.contains("line 2"), "{message}");
        let err = Scenario::parse(&format!("{FOUR_AREA}\nbogus = 1\n"), "x").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn event_beyond_t_end_is_rejected() {
        let err = Scenario::four_area().with_t_end(0.5).unwrap_err();
        assert!(matches!(&err, ScenarioError::Invalid { field, .. } if field == "events[0].time"));
    }

    #[test]
    fn internal_model_refuses_quartic_welfare() {
        let err = Scenario::four_area_quartic()
            .with_controller(ControllerChoice::InternalModel)
            .unwrap_err();
        assert!(matches!(&err, ScenarioError::Invalid { field, .. } if field == "controller.kind"));
    }

    #[test]
    fn dense_matrices_and_explicit_start() {
        let text = replace(FOUR_AREA, "qd = [1.0, 1.0, 1.0, 1.0]",
            "qd = [[2.0, 0.5, 0.0, 0.0], [0.5, 2.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]");
        let text = replace(&text, "kind = \"equilibrium\"",
            "kind = \"explicit\"\neta = [0.1, 0.0, 0.0, -0.1]\nlam = [1.0, 0.9, 0.8, 0.7]\nug = [0.5, 0.5, 0.5, 0.5]\nud = [0.5, 0.5, 0.5, 0.5]");
        let s = Scenario::parse(&text, "x").unwrap();
        assert_eq!(s.welfare.qd[(0, 1)], 0.5);
        let sys = s.system().unwrap();
        let s0 = s.initial_state(&sys).unwrap();
        assert_eq!(s0.controller.lam()[3], 0.7);
        assert_eq!(s0.physical.p, DVector::zeros(4));

        let bad = replace(FOUR_AREA, "qd = [1.0, 1.0, 1.0, 1.0]",
            "qd = [[1.0, 2.0, 0.0, 0.0], [2.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]");
        let err = Scenario::parse(&bad, "x").unwrap_err();
        assert!(matches!(&err, ScenarioError::Invalid { field, .. } if field == "welfare"), "{err}");
    }

    #[test]
    fn default_flow_only_for_balanced_dispatch() {
        let comm = NetworkGraph::ring(4).unwrap();
        let ug = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let ud = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let v = default_flow(&comm, &ug, &ud);
        assert!((comm.incidence() * v - (&ug - &ud)).amax() < 1e-12);
        assert_eq!(default_flow(&comm, &ug, &DVector::zeros(4)), DVector::zeros(4));
    }
}
