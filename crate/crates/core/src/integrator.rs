//! Classical fixed-step fourth-order Runge-Kutta.

use nalgebra::DVector;

use crate::{Error, Result};

/// One classical RK4 step of `x' = f(t, x)`.
///
/// Fails with [`Error::NonFiniteDerivative`] if any stage derivative
/// contains a NaN or infinity.
pub fn rk4_step<F>(mut f: F, t: f64, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::Integration(format!("step size must be positive, got {dt}")));
    }
    let half = 0.5 * dt;
    let mut stage = |time: f64, state: &DVector<f64>| -> Result<DVector<f64>> {
        let k = f(time, state)?;
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::NonFiniteDerivative { time })
        }
    };

    let k1 = stage(t, x)?;
    let k2 = stage(t + half, &(x + &k1 * half))?;
    let k3 = stage(t + half, &(x + &k2 * half))?;
    let k4 = stage(t + dt, &(x + &k3 * dt))?;

    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-x)
    }

    #[test]
    fn exponential_decay_single_step() {
        // 1 - h + h²/2 - h³/6 + h⁴/24 at h = 0.1
        let expected = 1.0 - 0.1 + 0.005 - 0.001 / 6.0 + 0.0001 / 24.0;
        let x = rk4_step(decay, 0.0, &DVector::from_element(1, 1.0), 0.1).unwrap();
        assert!((x[0] - expected).abs() < 1e-15);
        assert!((x[0] - 0.9048375).abs() < 1e-7);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn fourth_order_global_convergence() {
        let global_error = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut x = DVector::from_element(1, 1.0);
            for i in 0..steps {
                x = rk4_step(decay, i as f64 * dt, &x, dt).unwrap();
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = global_error(10) / global_error(20);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let next = rk4_step(|_, x| Ok(x * 0.0), 0.0, &x, 1e-3).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn rejects_non_finite_and_bad_step() {
        let x = DVector::from_element(1, 1.0);
        let err = rk4_step(|_, x| Ok(x.map(|_| f64::NAN)), 0.5, &x, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteDerivative { time } if time == 0.5));
        assert!(rk4_step(decay, 0.0, &x, 0.0).is_err());
    }
}
