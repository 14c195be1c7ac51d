//! Generation cost, consumer utility and the social welfare problem
//!
//! ```text
//! minimize   C(u_g) − U(u_d)
//! subject to D_c v − u_g + u_d = 0
//! ```
//!
//! whose first-order conditions are
//! `∇C(u_g) = λ`, `∇U(u_d) = λ`, `D_cᵀ λ = 0`, `D_c v = u_g − u_d`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::graph::NetworkGraph;
use crate::linalg::{max_norm, spd_inverse};
use crate::{check_dim, check_finite, check_positive, Error, Result};

/// Marginal cost and marginal utility of a welfare model.
pub trait Welfare: Send + Sync {
    fn dim(&self) -> usize;

    /// `∇C(u_g)`.
    fn cost_gradient(&self, ug: &DVector<f64>) -> DVector<f64>;

    /// `∇U(u_d)`.
    fn utility_gradient(&self, ud: &DVector<f64>) -> DVector<f64>;

    fn cost(&self, _ug: &DVector<f64>) -> Option<f64> {
        None
    }

    fn utility(&self, _ud: &DVector<f64>) -> Option<f64> {
        None
    }
}

/// Optimal generation, demand and nodal prices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub ug: DVector<f64>,
    pub ud: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// `C(u) = ½ uᵀQ_g u + cᵀu`, `U(u) = −½ uᵀQ_d u + bᵀu`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticWelfare {
    qg: DMatrix<f64>,
    qd: DMatrix<f64>,
    c: DVector<f64>,
    b: DVector<f64>,
    qg_inv: DMatrix<f64>,
    qd_inv: DMatrix<f64>,
}

impl QuadraticWelfare {
    pub fn new(
        qg: DMatrix<f64>,
        qd: DMatrix<f64>,
        c: DVector<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let n = c.len();
        check_dim("Q_g rows", n, qg.nrows())?;
        check_dim("Q_g columns", n, qg.ncols())?;
        check_dim("Q_d rows", n, qd.nrows())?;
        check_dim("Q_d columns", n, qd.ncols())?;
        check_dim("b", n, b.len())?;
        check_finite("c", &c)?;
        check_finite("b", &b)?;
        let qg_inv = spd_inverse(&qg).ok_or(Error::NotPositiveDefinite { what: "Q_g" })?;
        let qd_inv = spd_inverse(&qd).ok_or(Error::NotPositiveDefinite { what: "Q_d" })?;
        Ok(Self {
            qg,
            qd,
            c,
            b,
            qg_inv,
            qd_inv,
        })
    }

    /// Separable welfare with diagonal `Q_g`, `Q_d`.
    pub fn diagonal(
        qg: DVector<f64>,
        qd: DVector<f64>,
        c: DVector<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        check_positive("Q_g diagonal", &qg)?;
        check_positive("Q_d diagonal", &qd)?;
        Self::new(
            DMatrix::from_diagonal(&qg),
            DMatrix::from_diagonal(&qd),
            c,
            b,
        )
    }

    pub fn qg(&self) -> &DMatrix<f64> {
        &self.qg
    }

    pub fn qd(&self) -> &DMatrix<f64> {
        &self.qd
    }

    pub fn qg_inv(&self) -> &DMatrix<f64> {
        &self.qg_inv
    }

    pub fn qd_inv(&self) -> &DMatrix<f64> {
        &self.qd_inv
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// True when both quadratic forms are diagonal, i.e. each area only
    /// needs its own cost and utility.
    pub fn is_separable(&self) -> bool {
        let off_diagonal_zero = |q: &DMatrix<f64>| {
            q.iter()
                .enumerate()
                .all(|(idx, &x)| idx % q.nrows() == idx / q.nrows() || x == 0.0)
        };
        off_diagonal_zero(&self.qg) && off_diagonal_zero(&self.qd)
    }

    /// Same quadratic forms with new linear cost and utility coefficients.
    pub fn with_linear_terms(&self, c: DVector<f64>, b: DVector<f64>) -> Result<Self> {
        check_dim("c", self.c.len(), c.len())?;
        check_dim("b", self.b.len(), b.len())?;
        check_finite("c", &c)?;
        check_finite("b", &b)?;
        Ok(Self {
            c,
            b,
            ..self.clone()
        })
    }

    /// The common clearing price
    /// `1ᵀ(Q_g⁻¹c + Q_d⁻¹b) / 1ᵀ(Q_g⁻¹ + Q_d⁻¹)1`.
    pub fn lambda_star(&self) -> f64 {
        let numerator = (&self.qg_inv * &self.c + &self.qd_inv * &self.b).sum();
        let denominator = (&self.qg_inv + &self.qd_inv).sum();
        numerator / denominator
    }

    /// Generation and demand where marginal cost and marginal utility both
    /// equal the common price.
    pub fn optimal_dispatch(&self) -> Dispatch {
        let lambda = DVector::from_element(self.c.len(), self.lambda_star());
        let (ug, ud) = self.response(&lambda);
        Dispatch { ug, ud, lambda }
    }

    /// Price response `(Q_g⁻¹(λ − c), Q_d⁻¹(b − λ))`.
    pub fn response(&self, lambda: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            &self.qg_inv * (lambda - &self.c),
            &self.qd_inv * (&self.b - lambda),
        )
    }
}

impl Welfare for QuadraticWelfare {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn cost_gradient(&self, ug: &DVector<f64>) -> DVector<f64> {
        &self.qg * ug + &self.c
    }

    fn utility_gradient(&self, ud: &DVector<f64>) -> DVector<f64> {
        -(&self.qd * ud) + &self.b
    }

    fn cost(&self, ug: &DVector<f64>) -> Option<f64> {
        Some(0.5 * ug.dot(&(&self.qg * ug)) + self.c.dot(ug))
    }

    fn utility(&self, ud: &DVector<f64>) -> Option<f64> {
        Some(-0.5 * ud.dot(&(&self.qd * ud)) + self.b.dot(ud))
    }
}

pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Strictly convex cost and strictly concave utility given through their
/// gradients.
#[derive(Clone)]
pub struct ConvexWelfare {
    n: usize,
    cost_gradient: GradientFn,
    utility_gradient: GradientFn,
    cost: Option<ValueFn>,
    utility: Option<ValueFn>,
}

impl fmt::Debug for ConvexWelfare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexWelfare")
            .field("n", &self.n)
            .field("has_values", &(self.cost.is_some() && self.utility.is_some()))
            .finish()
    }
}

impl ConvexWelfare {
    pub fn new(n: usize, cost_gradient: GradientFn, utility_gradient: GradientFn) -> Self {
        Self {
            n,
            cost_gradient,
            utility_gradient,
            cost: None,
            utility: None,
        }
    }

    /// Attaches value functions used for reporting only.
    pub fn with_values(mut self, cost: ValueFn, utility: ValueFn) -> Self {
        self.cost = Some(cost);
        self.utility = Some(utility);
        self
    }

    pub fn from_quadratic(w: &QuadraticWelfare) -> Self {
        let (wc, wu) = (w.clone(), w.clone());
        let (vc, vu) = (w.clone(), w.clone());
        Self::new(
            w.dim(),
            Arc::new(move |u| wc.cost_gradient(u)),
            Arc::new(move |u| wu.utility_gradient(u)),
        )
        .with_values(
            Arc::new(move |u| vc.cost(u).unwrap_or(f64::NAN)),
            Arc::new(move |u| vu.utility(u).unwrap_or(f64::NAN)),
        )
    }

    /// Spot check of monotonicity of `∇C` and `−∇U` over all pairs of the
    /// given points. Returns the first violating pair.
    pub fn check_monotone(&self, points: &[DVector<f64>]) -> std::result::Result<(), (usize, usize)> {
        for (i, z1) in points.iter().enumerate() {
            for (j, z2) in points.iter().enumerate().skip(i + 1) {
                let dz = z1 - z2;
                let tol = 1e-12 * (1.0 + dz.norm_squared());
                let cost = dz.dot(&(self.cost_gradient(z1) - self.cost_gradient(z2)));
                let util = -dz.dot(&(self.utility_gradient(z1) - self.utility_gradient(z2)));
                if cost < -tol || util < -tol {
                    return Err((i, j));
                }
            }
        }
        Ok(())
    }
}

impl Welfare for ConvexWelfare {
    fn dim(&self) -> usize {
        self.n
    }

    fn cost_gradient(&self, ug: &DVector<f64>) -> DVector<f64> {
        (self.cost_gradient)(ug)
    }

    fn utility_gradient(&self, ud: &DVector<f64>) -> DVector<f64> {
        (self.utility_gradient)(ud)
    }

    fn cost(&self, ug: &DVector<f64>) -> Option<f64> {
        self.cost.as_ref().map(|f| f(ug))
    }

    fn utility(&self, ud: &DVector<f64>) -> Option<f64> {
        self.utility.as_ref().map(|f| f(ud))
    }
}

/// Separable quadratic-plus-quartic family
///
/// ```text
/// C_i(u) = ½ qg_i u² + ¼ kg_i u⁴ + c_i u
/// U_i(u) = −½ qd_i u² − ¼ kd_i u⁴ + b_i u
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticWelfareParams {
    pub qg: DVector<f64>,
    pub qd: DVector<f64>,
    pub c: DVector<f64>,
    pub b: DVector<f64>,
    pub kg: DVector<f64>,
    pub kd: DVector<f64>,
}

impl QuarticWelfareParams {
    pub fn build(&self) -> Result<ConvexWelfare> {
        let n = self.c.len();
        for (what, v) in [
            ("Q_g diagonal", &self.qg),
            ("Q_d diagonal", &self.qd),
            ("b", &self.b),
            ("quartic_g", &self.kg),
            ("quartic_d", &self.kd),
        ] {
            check_dim(what, n, v.len())?;
        }
        check_positive("Q_g diagonal", &self.qg)?;
        check_positive("Q_d diagonal", &self.qd)?;
        check_finite("c", &self.c)?;
        check_finite("b", &self.b)?;
        for (what, k) in [("quartic_g", &self.kg), ("quartic_d", &self.kd)] {
            if let Some((index, &value)) = k.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
                return Err(Error::NotPositive { what, index, value });
            }
        }

        let p = Arc::new(self.clone());
        let (pc, pu, vc, vu) = (p.clone(), p.clone(), p.clone(), p);
        Ok(ConvexWelfare::new(
            n,
            Arc::new(move |u| {
                DVector::from_fn(u.len(), |i, _| {
                    pc.qg[i] * u[i] + pc.kg[i] * u[i].powi(3) + pc.c[i]
                })
            }),
            Arc::new(move |u| {
                DVector::from_fn(u.len(), |i, _| {
                    -pu.qd[i] * u[i] - pu.kd[i] * u[i].powi(3) + pu.b[i]
                })
            }),
        )
        .with_values(
            Arc::new(move |u| {
                (0..u.len())
                    .map(|i| {
                        0.5 * vc.qg[i] * u[i].powi(2) + 0.25 * vc.kg[i] * u[i].powi(4)
                            + vc.c[i] * u[i]
                    })
                    .sum()
            }),
            Arc::new(move |u| {
                (0..u.len())
                    .map(|i| {
                        -0.5 * vu.qd[i] * u[i].powi(2) - 0.25 * vu.kd[i] * u[i].powi(4)
                            + vu.b[i] * u[i]
                    })
                    .sum()
            }),
        ))
    }
}

/// Welfare attached to a closed-loop system.
#[derive(Debug, Clone)]
pub enum WelfareModel {
    Quadratic(QuadraticWelfare),
    Convex(ConvexWelfare),
}

impl WelfareModel {
    pub fn as_quadratic(&self) -> Option<&QuadraticWelfare> {
        match self {
            WelfareModel::Quadratic(w) => Some(w),
            WelfareModel::Convex(_) => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            WelfareModel::Quadratic(_) => "quadratic",
            WelfareModel::Convex(_) => "convex",
        }
    }

    /// Optimal dispatch: closed form for quadratic welfare, numerical KKT
    /// solve otherwise.
    pub fn optimal_dispatch(&self) -> Result<Dispatch> {
        match self {
            WelfareModel::Quadratic(w) => Ok(w.optimal_dispatch()),
            WelfareModel::Convex(w) => solve_kkt(w),
        }
    }
}

impl From<QuadraticWelfare> for WelfareModel {
    fn from(w: QuadraticWelfare) -> Self {
        WelfareModel::Quadratic(w)
    }
}

impl From<ConvexWelfare> for WelfareModel {
    fn from(w: ConvexWelfare) -> Self {
        WelfareModel::Convex(w)
    }
}

impl Welfare for WelfareModel {
    fn dim(&self) -> usize {
        match self {
            WelfareModel::Quadratic(w) => w.dim(),
            WelfareModel::Convex(w) => w.dim(),
        }
    }

    fn cost_gradient(&self, ug: &DVector<f64>) -> DVector<f64> {
        match self {
            WelfareModel::Quadratic(w) => w.cost_gradient(ug),
            WelfareModel::Convex(w) => w.cost_gradient(ug),
        }
    }

    fn utility_gradient(&self, ud: &DVector<f64>) -> DVector<f64> {
        match self {
            WelfareModel::Quadratic(w) => w.utility_gradient(ud),
            WelfareModel::Convex(w) => w.utility_gradient(ud),
        }
    }

    fn cost(&self, ug: &DVector<f64>) -> Option<f64> {
        match self {
            WelfareModel::Quadratic(w) => w.cost(ug),
            WelfareModel::Convex(w) => w.cost(ug),
        }
    }

    fn utility(&self, ud: &DVector<f64>) -> Option<f64> {
        match self {
            WelfareModel::Quadratic(w) => w.utility(ud),
            WelfareModel::Convex(w) => w.utility(ud),
        }
    }
}

/// Max-norm of the stacked first-order residuals
/// `(∇C(u_g) − λ, −∇U(u_d) + λ, D_cᵀλ, D_c v − u_g + u_d)`.
pub fn kkt_residual(
    welfare: &dyn Welfare,
    comm: &NetworkGraph,
    ug: &DVector<f64>,
    ud: &DVector<f64>,
    v: &DVector<f64>,
    lam: &DVector<f64>,
) -> Result<f64> {
    kkt_residual_with_incidence(welfare, &comm.incidence(), ug, ud, v, lam)
}

pub(crate) fn kkt_residual_with_incidence(
    welfare: &dyn Welfare,
    incidence: &DMatrix<f64>,
    ug: &DVector<f64>,
    ud: &DVector<f64>,
    v: &DVector<f64>,
    lam: &DVector<f64>,
) -> Result<f64> {
    let n = welfare.dim();
    check_dim("u_g", n, ug.len())?;
    check_dim("u_d", n, ud.len())?;
    check_dim("lambda", n, lam.len())?;
    check_dim("communication nodes", n, incidence.nrows())?;
    check_dim("v", incidence.ncols(), v.len())?;
    let stationarity_g = welfare.cost_gradient(ug) - lam;
    let stationarity_d = lam - welfare.utility_gradient(ud);
    let consensus = incidence.tr_mul(lam);
    let balance = incidence * v - ug + ud;
    Ok([
        max_norm(&stationarity_g),
        max_norm(&stationarity_d),
        max_norm(&consensus),
        max_norm(&balance),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// Orthogonal projection of a price vector onto consensus, `(1ᵀλ/n)·1`.
pub fn project_to_feasible_price(lam: &DVector<f64>, comm: &NetworkGraph) -> DVector<f64> {
    debug_assert_eq!(lam.len(), comm.node_count());
    DVector::from_element(lam.len(), lam.mean())
}

/// `‖λ − (1ᵀλ/n)·1‖∞`.
pub fn price_disagreement(lam: &DVector<f64>) -> f64 {
    let mean = lam.mean();
    lam.iter().fold(0.0, |acc, x| acc.max((x - mean).abs()))
}

/// Solves the welfare KKT system for a general strictly convex model.
///
/// The optimal price is common to all areas, so this bisects on the scalar
/// price `λ` for supply-demand balance, inverting the marginal cost and
/// marginal utility maps by damped Newton at each trial price.
pub fn solve_kkt(welfare: &dyn Welfare) -> Result<Dispatch> {
    let n = welfare.dim();
    let ones = DVector::from_element(n, 1.0);
    let respond = |price: f64| -> Result<(DVector<f64>, DVector<f64>)> {
        let target = &ones * price;
        let ug = invert_monotone(|u| welfare.cost_gradient(u), &target)?;
        let ud = invert_monotone(|u| -welfare.utility_gradient(u), &(-&target))?;
        Ok((ug, ud))
    };
    let imbalance = |price: f64| -> Result<f64> {
        let (ug, ud) = respond(price)?;
        Ok(ug.sum() - ud.sum())
    };

    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut expansions = 0;
    while imbalance(lo)? > 0.0 {
        lo = 2.0 * lo - 1.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::NoConvergence {
                what: "KKT price bracket",
                residual: lo.abs(),
            });
        }
    }
    while imbalance(hi)? < 0.0 {
        hi = 2.0 * hi + 1.0;
        expansions += 1;
        if expansions > 120 {
            return Err(Error::NoConvergence {
                what: "KKT price bracket",
                residual: hi.abs(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if imbalance(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let price = 0.5 * (lo + hi);
    let (ug, ud) = respond(price)?;
    Ok(Dispatch {
        ug,
        ud,
        lambda: ones * price,
    })
}

/// Solves `g(u) = target` for a strictly monotone smooth map by damped
/// Newton with a central-difference Jacobian.
fn invert_monotone<G>(g: G, target: &DVector<f64>) -> Result<DVector<f64>>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = target.len();
    let tol = 1e-13 * (1.0 + max_norm(target));
    let mut u = DVector::zeros(n);
    let mut residual = g(&u) - target;
    for _ in 0..200 {
        let norm = max_norm(&residual);
        if norm <= tol {
            return Ok(u);
        }
        let mut jacobian = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + u[j].abs());
            let mut plus = u.clone();
            plus[j] += h;
            let mut minus = u.clone();
            minus[j] -= h;
            jacobian.set_column(j, &((g(&plus) - g(&minus)) / (2.0 * h)));
        }
        let step = jacobian
            .lu()
            .solve(&(-&residual))
            .ok_or(Error::NoConvergence {
                what: "marginal map inversion",
                residual: norm,
            })?;
        let mut alpha = 1.0;
        loop {
            let candidate = &u + &step * alpha;
            let r = g(&candidate) - target;
            if max_norm(&r) < norm || alpha < 1e-12 {
                u = candidate;
                residual = r;
                break;
            }
            alpha *= 0.5;
        }
    }
    let residual = max_norm(&residual);
    if residual <= 1e3 * tol {
        Ok(u)
    } else {
        Err(Error::NoConvergence {
            what: "marginal map inversion",
            residual,
        })
    }
}
