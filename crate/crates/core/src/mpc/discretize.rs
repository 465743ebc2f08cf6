//! Exact zero-order-hold discretisation of the lifted LTI model.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::nilpotency_index;
use crate::models::LtiSystem;

#[derive(Debug, Clone)]
pub struct DiscreteLti {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub dt: f64,
}

/// `Ad = e^{A dt}` and `Bd = ∫₀^dt e^{Aτ} dτ B̄`, both as finite sums since
/// `A` is nilpotent.
pub fn discretize(sys: &LtiSystem, dt: f64) -> Result<DiscreteLti> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("sampling interval must be positive, got {dt}")));
    }
    let a = sys.a();
    let n = a.nrows();
    let nu = nilpotency_index(a).ok_or_else(|| Error::InvalidConfig("state matrix is not nilpotent".into()))?;
    let mut ad = DMatrix::identity(n, n);
    let mut integral = DMatrix::identity(n, n) * dt;
    let mut power = DMatrix::identity(n, n);
    let mut fact = 1.0;
    for i in 1..nu {
        power = &power * a;
        fact *= i as f64;
        ad += &power * (dt.powi(i as i32) / fact);
        integral += &power * (dt.powi(i as i32 + 1) / (fact * (i as f64 + 1.0)));
    }
    let bd = integral * sys.bbar();
    Ok(DiscreteLti { ad, bd, dt })
}
