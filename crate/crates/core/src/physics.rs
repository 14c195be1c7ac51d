//! Swing-equation network in port-Hamiltonian form.
//!
//! State is kept in energy variables: `eta` holds the voltage-angle
//! difference across each line and `p = M ω` the angular momentum at each
//! bus. The Hamiltonian is
//!
//! ```text
//! H_p(eta, p) = ½ pᵀ M⁻¹ p − Σ_k γ_k cos(eta_k)
//! ```
//!
//! and the dynamics read `eta' = Dᵀ M⁻¹ p`,
//! `p' = −D Γ sin(eta) − A M⁻¹ p + u_g − u_d` with output `y = (ω, −ω)`.
//! Frequencies are deviations from nominal in per-unit.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};

use crate::graph::NetworkGraph;
use crate::integrator::rk4_step;
use crate::{check_dim, check_finite, check_positive, Error, Result};

/// Inertia, damping and line gains of the physical network.
#[derive(Debug, Clone)]
pub struct PhysicalParams {
    graph: NetworkGraph,
    inertia: DVector<f64>,
    damping: DVector<f64>,
    line_gains: DVector<f64>,
    incidence: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalState {
    pub eta: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhysicalState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            eta: DVector::zeros(m),
            p: DVector::zeros(n),
        }
    }
}

impl PhysicalParams {
    /// `line_gains[k]` is `γ_k = V_i V_j B_ij` for edge `k` of `graph`.
    pub fn new(
        graph: NetworkGraph,
        inertia: DVector<f64>,
        damping: DVector<f64>,
        line_gains: DVector<f64>,
    ) -> Result<Self> {
        let n = graph.node_count();
        check_dim("inertia", n, inertia.len())?;
        check_dim("damping", n, damping.len())?;
        check_dim("line gains", graph.edge_count(), line_gains.len())?;
        check_positive("inertia", &inertia)?;
        check_positive("damping", &damping)?;
        check_positive("line gains", &line_gains)?;
        let incidence = graph.incidence();
        Ok(Self {
            graph,
            inertia,
            damping,
            line_gains,
            incidence,
        })
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn inertia(&self) -> &DVector<f64> {
        &self.inertia
    }

    pub fn damping(&self) -> &DVector<f64> {
        &self.damping
    }

    pub fn line_gains(&self) -> &DVector<f64> {
        &self.line_gains
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// Same parameters with physical edge `k` reversed. States must negate
    /// `eta[k]` to describe the same physical situation.
    pub fn with_edge_flipped(&self, k: usize) -> Self {
        let graph = self.graph.with_edge_flipped(k);
        let incidence = graph.incidence();
        Self {
            graph,
            incidence,
            ..self.clone()
        }
    }

    pub fn check_state(&self, state: &PhysicalState) -> Result<()> {
        check_dim("eta", self.edge_count(), state.eta.len())?;
        check_dim("p", self.node_count(), state.p.len())
    }

    pub fn hamiltonian(&self, state: &PhysicalState) -> Result<f64> {
        self.check_state(state)?;
        let omega = self.frequency_deviation(state);
        let kinetic = 0.5 * state.p.dot(&omega);
        let potential = -self.line_gains.dot(&state.eta.map(f64::cos));
        Ok(kinetic + potential)
    }

    /// `(∇_eta H_p, ∇_p H_p) = (Γ sin eta, M⁻¹ p)`.
    pub fn hamiltonian_gradient(&self, state: &PhysicalState) -> (DVector<f64>, DVector<f64>) {
        (
            self.line_flows(&state.eta),
            self.frequency_deviation(state),
        )
    }

    /// `ω = M⁻¹ p`.
    pub fn frequency_deviation(&self, state: &PhysicalState) -> DVector<f64> {
        state.p.component_div(&self.inertia)
    }

    /// Active power carried by each line, `Γ sin eta`.
    pub fn line_flows(&self, eta: &DVector<f64>) -> DVector<f64> {
        self.line_gains.component_mul(&eta.map(f64::sin))
    }

    /// Time derivative of the state under injections `u_g` (generation) and
    /// `u_d` (demand).
    pub fn rhs(
        &self,
        state: &PhysicalState,
        ug: &DVector<f64>,
        ud: &DVector<f64>,
    ) -> Result<PhysicalState> {
        self.check_state(state)?;
        check_dim("u_g", self.node_count(), ug.len())?;
        check_dim("u_d", self.node_count(), ud.len())?;
        let omega = self.frequency_deviation(state);
        let deta = self.incidence.tr_mul(&omega);
        let dp = -(&self.incidence * self.line_flows(&state.eta))
            - self.damping.component_mul(&omega)
            + ug
            - ud;
        Ok(PhysicalState { eta: deta, p: dp })
    }

    /// Supplied power `uᵀy = ωᵀ(u_g − u_d)`.
    pub fn supply_rate(
        &self,
        state: &PhysicalState,
        ug: &DVector<f64>,
        ud: &DVector<f64>,
    ) -> f64 {
        self.frequency_deviation(state).dot(&(ug - ud))
    }

    /// `ωᵀ A ω`, the power dissipated by damping.
    pub fn damping_power(&self, state: &PhysicalState) -> f64 {
        let omega = self.frequency_deviation(state);
        omega.dot(&self.damping.component_mul(&omega))
    }

    /// Smallest distance `π/2 − |eta_k|` to the edge of the security region.
    /// Negative when some line has left it.
    pub fn security_margin(&self, eta: &DVector<f64>) -> f64 {
        eta.iter()
            .map(|e| FRAC_PI_2 - e.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Interconnection `J` and dissipation `R` of `x' = (J − R)∇H + G u` on
    /// the stacked state `(eta, p)`.
    pub fn structure_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.node_count(), self.edge_count());
        let mut j = DMatrix::zeros(m + n, m + n);
        j.view_mut((0, m), (m, n))
            .copy_from(&self.incidence.transpose());
        j.view_mut((m, 0), (n, m)).copy_from(&(-&self.incidence));
        let mut r = DMatrix::zeros(m + n, m + n);
        r.view_mut((m, m), (n, n))
            .copy_from(&DMatrix::from_diagonal(&self.damping));
        (j, r)
    }

    /// Input matrix `G` mapping `(u_g, u_d)` into `(eta', p')`.
    pub fn input_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.node_count(), self.edge_count());
        let mut g = DMatrix::zeros(m + n, 2 * n);
        g.view_mut((m, 0), (n, n)).fill_diagonal(1.0);
        g.view_mut((m, n), (n, n)).fill_diagonal(-1.0);
        g
    }

    pub(crate) fn to_vector(&self, state: &PhysicalState) -> DVector<f64> {
        let mut x = DVector::zeros(self.edge_count() + self.node_count());
        x.rows_mut(0, self.edge_count()).copy_from(&state.eta);
        x.rows_mut(self.edge_count(), self.node_count())
            .copy_from(&state.p);
        x
    }

    pub(crate) fn state_from_vector(&self, x: &DVector<f64>) -> PhysicalState {
        let m = self.edge_count();
        PhysicalState {
            eta: x.rows(0, m).into_owned(),
            p: x.rows(m, self.node_count()).into_owned(),
        }
    }
}

/// State and port values at one instant of an open or closed-loop run.
#[derive(Debug, Clone)]
pub struct PortSample {
    pub t: f64,
    pub state: PhysicalState,
    pub ug: DVector<f64>,
    pub ud: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassivityReport {
    /// `max_k ΔH_p/Δt − ⟨uᵀy⟩` over consecutive samples, with the supply rate
    /// averaged by the trapezoidal rule. Non-positive up to `O(Δt²)` for a
    /// passive system.
    pub supply_rate_residual: f64,
    /// `max_k |ΔH_p/Δt − ⟨−ωᵀAω + ωᵀ(u_g − u_d)⟩|`, the integration accuracy
    /// of the energy balance.
    pub energy_balance_error: f64,
}

/// Numerical passivity certificate for a sampled physical trajectory.
pub fn passivity_residual(
    params: &PhysicalParams,
    segment: &[PortSample],
) -> Result<PassivityReport> {
    if segment.len() < 2 {
        return Err(Error::ShortTrajectory(segment.len()));
    }
    let mut energy = Vec::with_capacity(segment.len());
    let mut supply = Vec::with_capacity(segment.len());
    let mut balance = Vec::with_capacity(segment.len());
    for sample in segment {
        energy.push(params.hamiltonian(&sample.state)?);
        let s = params.supply_rate(&sample.state, &sample.ug, &sample.ud);
        supply.push(s);
        balance.push(s - params.damping_power(&sample.state));
    }

    let mut report = PassivityReport {
        supply_rate_residual: f64::NEG_INFINITY,
        energy_balance_error: 0.0,
    };
    for k in 0..segment.len() - 1 {
        let dt = segment[k + 1].t - segment[k].t;
        let rate = (energy[k + 1] - energy[k]) / dt;
        let mean_supply = 0.5 * (supply[k] + supply[k + 1]);
        let mean_balance = 0.5 * (balance[k] + balance[k + 1]);
        report.supply_rate_residual = report.supply_rate_residual.max(rate - mean_supply);
        report.energy_balance_error = report
            .energy_balance_error
            .max((rate - mean_balance).abs());
    }
    Ok(report)
}

/// Integrates the uncontrolled network under prescribed inputs
/// `inputs(t) = (u_g(t), u_d(t))`, recording every step.
pub fn simulate_open_loop<F>(
    params: &PhysicalParams,
    initial: &PhysicalState,
    inputs: F,
    t_end: f64,
    dt: f64,
) -> Result<Vec<PortSample>>
where
    F: Fn(f64) -> (DVector<f64>, DVector<f64>),
{
    params.check_state(initial)?;
    check_finite("initial state", &initial.p)?;
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Integration(format!(
            "need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let steps = (t_end / dt).round() as usize;
    let mut x = params.to_vector(initial);
    let mut samples = Vec::with_capacity(steps + 1);
    let sample_at = |t: f64, x: &DVector<f64>| {
        let (ug, ud) = inputs(t);
        PortSample {
            t,
            state: params.state_from_vector(x),
            ug,
            ud,
        }
    };
    samples.push(sample_at(0.0, &x));
    for i in 0..steps {
        let t = i as f64 * dt;
        x = rk4_step(
            |time, state| {
                let (ug, ud) = inputs(time);
                let d = params.rhs(&params.state_from_vector(state), &ug, &ud)?;
                Ok(params.to_vector(&d))
            },
            t,
            &x,
            dt,
        )?;
        samples.push(sample_at((i + 1) as f64 * dt, &x));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn four_area() -> PhysicalParams {
        PhysicalParams::new(
            NetworkGraph::ring(4).unwrap(),
            DVector::from_element(4, 1.0),
            DVector::from_element(4, 2.0),
            DVector::from_element(4, 1.0),
        )
        .unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PhysicalState {
        PhysicalState {
            eta: DVector::from_fn(m, |_, _| rng.random_range(-1.2..1.2)),
            p: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn hamiltonian_known_values() {
        let params = four_area();
        assert_eq!(params.hamiltonian(&PhysicalState::zeros(4, 4)).unwrap(), -4.0);
        let state = PhysicalState {
            eta: DVector::zeros(4),
            p: DVector::from_element(4, 1.0),
        };
        assert_eq!(params.hamiltonian(&state).unwrap(), -2.0);
        let bad = PhysicalState::zeros(4, 3);
        assert!(matches!(
            params.hamiltonian(&bad),
            Err(Error::DimensionMismatch { what: "eta", .. })
        ));
    }

    #[test]
    fn hamiltonian_matches_scalar_loop() {
        let params = PhysicalParams::new(
            NetworkGraph::new(3, vec![(0, 1), (2, 1), (0, 2)]).unwrap(),
            DVector::from_vec(vec![1.5, 0.7, 2.0]),
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            DVector::from_vec(vec![0.8, 1.3, 0.4]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let s = random_state(&mut rng, 3, 3);
            let mut oracle = 0.0;
            for i in 0..3 {
                oracle += 0.5 * s.p[i] * s.p[i] / params.inertia()[i];
            }
            for k in 0..3 {
                oracle -= params.line_gains()[k] * s.eta[k].cos();
            }
            assert!((params.hamiltonian(&s).unwrap() - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn frequency_deviation_divides_by_inertia() {
        let params = PhysicalParams::new(
            NetworkGraph::ring(2).unwrap(),
            DVector::from_vec(vec![2.0, 4.0]),
            DVector::from_element(2, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = PhysicalState {
            eta: DVector::zeros(1),
            p: DVector::from_vec(vec![2.0, 4.0]),
        };
        assert_eq!(params.frequency_deviation(&s), DVector::from_element(2, 1.0));

        let four = four_area();
        let s = PhysicalState {
            eta: DVector::zeros(4),
            p: DVector::from_vec(vec![0.1, 0.0, 0.0, 0.0]),
        };
        assert_eq!(four.frequency_deviation(&s), s.p);
        assert_eq!(
            four.frequency_deviation(&PhysicalState::zeros(4, 4)),
            DVector::zeros(4)
        );
    }

    #[test]
    fn rhs_equilibrium_and_injection() {
        let params = four_area();
        let zero = DVector::zeros(4);
        let d = params.rhs(&PhysicalState::zeros(4, 4), &zero, &zero).unwrap();
        assert_eq!(d, PhysicalState::zeros(4, 4));

        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let d = params.rhs(&PhysicalState::zeros(4, 4), &e1, &zero).unwrap();
        assert_eq!(d.eta, DVector::zeros(4));
        assert_eq!(d.p, e1);
    }

    #[test]
    fn structure_split_is_skew_plus_psd() {
        let params = four_area();
        let (j, r) = params.structure_matrices();
        assert_eq!(&j + j.transpose(), DMatrix::zeros(8, 8));
        assert_eq!(r, r.transpose());
        assert!(r.symmetric_eigenvalues().iter().all(|&l| l >= 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&mut rng, 4, 4);
        let (ge, gp) = params.hamiltonian_gradient(&s);
        let mut grad = DVector::zeros(8);
        grad.rows_mut(0, 4).copy_from(&ge);
        grad.rows_mut(4, 4).copy_from(&gp);
        let ug = DVector::from_vec(vec![0.2, 0.1, -0.3, 0.0]);
        let ud = DVector::from_vec(vec![0.0, 0.4, 0.1, 0.2]);
        let mut u = DVector::zeros(8);
        u.rows_mut(0, 4).copy_from(&ug);
        u.rows_mut(4, 4).copy_from(&ud);
        let assembled = (&j - &r) * grad + params.input_matrix() * u;
        let direct = params.to_vector(&params.rhs(&s, &ug, &ud).unwrap());
        assert!((assembled - direct).amax() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let params = PhysicalParams::new(
            NetworkGraph::ring(4).unwrap(),
            DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0]),
            DVector::from_element(4, 1.0),
            DVector::from_vec(vec![1.0, 0.3, 2.0, 0.9]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_state(&mut rng, 4, 4);
        let (ge, gp) = params.hamiltonian_gradient(&s);
        let x = params.to_vector(&s);
        let h = 1e-6;
        for i in 0..8 {
            let mut plus = x.clone();
            plus[i] += h;
            let mut minus = x.clone();
            minus[i] -= h;
            let fd = (params.hamiltonian(&params.state_from_vector(&plus)).unwrap()
                - params.hamiltonian(&params.state_from_vector(&minus)).unwrap())
                / (2.0 * h);
            let analytic = if i < 4 { ge[i] } else { gp[i - 4] };
            assert!(
                (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1.0),
                "component {i}: {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn orientation_covariance() {
        let params = four_area();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng, 4, 4);
        let ug = DVector::from_vec(vec![0.3, 0.0, 0.1, 0.2]);
        let ud = DVector::from_vec(vec![0.1, 0.2, 0.0, 0.4]);
        let base = params.rhs(&s, &ug, &ud).unwrap();
        for k in 0..4 {
            let flipped = params.with_edge_flipped(k);
            let mut fs = s.clone();
            fs.eta[k] = -fs.eta[k];
            let d = flipped.rhs(&fs, &ug, &ud).unwrap();
            let mut expected_eta = base.eta.clone();
            expected_eta[k] = -expected_eta[k];
            assert!((d.eta - expected_eta).amax() < 1e-15);
            assert!((d.p - &base.p).amax() < 1e-15);
        }
    }

    #[test]
    fn passivity_of_trivial_trajectories() {
        let params = four_area();
        let zero = DVector::zeros(4);
        let samples =
            simulate_open_loop(&params, &PhysicalState::zeros(4, 4), |_| (zero.clone(), zero.clone()), 1.0, 0.1)
                .unwrap();
        let report = passivity_residual(&params, &samples).unwrap();
        assert_eq!(report.supply_rate_residual, 0.0);
        assert_eq!(report.energy_balance_error, 0.0);

        let start = PhysicalState {
            eta: DVector::from_vec(vec![0.3, -0.2, 0.1, -0.2]),
            p: DVector::from_vec(vec![0.5, -0.1, 0.0, 0.2]),
        };
        let dt = 1e-2;
        let samples =
            simulate_open_loop(&params, &start, |_| (zero.clone(), zero.clone()), 5.0, dt).unwrap();
        let report = passivity_residual(&params, &samples).unwrap();
        assert!(report.supply_rate_residual <= 10.0 * dt * dt);
        for w in samples.windows(2) {
            assert!(params.hamiltonian(&w[1].state).unwrap() <= params.hamiltonian(&w[0].state).unwrap() + 1e-12);
        }
        assert!(matches!(
            passivity_residual(&params, &samples[..1]),
            Err(Error::ShortTrajectory(1))
        ));
    }

    #[test]
    fn energy_balance_is_second_order() {
        let params = four_area();
        let start = PhysicalState {
            eta: DVector::from_vec(vec![0.4, -0.2, 0.1, -0.3]),
            p: DVector::from_vec(vec![0.5, -0.1, 0.0, 0.2]),
        };
        let inputs = |t: f64| {
            (
                DVector::from_vec(vec![0.3 * t.sin(), 0.1, 0.0, 0.2]),
                DVector::from_vec(vec![0.1, 0.2 * (2.0 * t).cos(), 0.1, 0.0]),
            )
        };
        let err = |dt: f64| {
            let samples = simulate_open_loop(&params, &start, inputs, 2.0, dt).unwrap();
            passivity_residual(&params, &samples).unwrap().energy_balance_error
        };
        let (coarse, fine) = (err(2e-2), err(1e-2));
        let order = (coarse / fine).log2();
        assert!((1.7..2.3).contains(&order), "order {order}");
    }
}
