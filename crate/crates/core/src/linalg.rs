use nalgebra::{DMatrix, DVector};

/// Moore-Penrose pseudoinverse via SVD.
pub(crate) fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let eps = f64::EPSILON * rows.max(cols) as f64 * a.norm().max(1.0);
    a.clone()
        .svd(true, true)
        .pseudo_inverse(eps)
        .expect("svd computed with both singular vector sets")
}

pub(crate) fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn is_symmetric(a: &DMatrix<f64>) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= 1e-12 * scale
}

/// Inverse of a symmetric positive-definite matrix, or `None` if it is not SPD.
pub(crate) fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !is_symmetric(a) || a.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let chol = a.clone().cholesky()?;
    let inv = chol.inverse();
    // symmetrize to remove rounding asymmetry
    Some((&inv + inv.transpose()) * 0.5)
}
