#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random symmetric positive definite matrix with eigenvalues bounded below
/// by `floor`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    a.transpose() * a + DMatrix::identity(n, n) * floor
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Welfare maximizer by projected gradient ascent on
/// `U(u_d) − C(u_g)` over the hyperplane `1ᵀu_g = 1ᵀu_d`.
///
/// Returns `(u_g, u_d, λ)` with λ the mean marginal cost at the optimum.
pub fn projected_gradient_dispatch(
    qg: &DMatrix<f64>,
    qd: &DMatrix<f64>,
    c: &DVector<f64>,
    b: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, f64) {
    let n = c.len();
    let lipschitz = qg
        .clone()
        .symmetric_eigenvalues()
        .max()
        .max(qd.clone().symmetric_eigenvalues().max());
    let step = 1.0 / lipschitz;
    let project = |ug: &mut DVector<f64>, ud: &mut DVector<f64>| {
        // orthogonal projection onto a·x = 0 with a = (1, −1)
        let excess = (ug.sum() - ud.sum()) / (2.0 * n as f64);
        ug.add_scalar_mut(-excess);
        ud.add_scalar_mut(excess);
    };
    let mut ug = DVector::zeros(n);
    let mut ud = DVector::zeros(n);
    for _ in 0..1_000_000 {
        let grad_g = -(qg * &ug + c);
        let grad_d = -(qd * &ud) + b;
        let mut ng = &ug + grad_g * step;
        let mut nd = &ud + grad_d * step;
        project(&mut ng, &mut nd);
        let change = (&ng - &ug).amax().max((&nd - &ud).amax());
        ug = ng;
        ud = nd;
        if change < 1e-15 {
            break;
        }
    }
    let lambda = (qg * &ug + c).mean();
    (ug, ud, lambda)
}
