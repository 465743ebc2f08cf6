//! Linear MPC on the lifted model.
//!
//! [`discretize`] turns `Ẋ = A X + B̄ 𝓤` into a discrete map, [`ocp`] condenses
//! the finite-horizon tracking problem into a dense QP solved by [`qp`],
//! [`tasks`] holds the reference trajectories and [`tracking`] closes the loop
//! around the nonlinear plant.

pub mod discretize;
pub mod ocp;
pub mod qp;
pub mod tasks;
pub mod tracking;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::TruncationOrder;
use crate::se3::{PseudoControl, QuadParams};

pub use discretize::{discretize, DiscreteLti};
pub use ocp::{Ocp, OcpSolution, ReferenceWindow};
pub use qp::{QpSettings, QpStatus};
pub use tasks::{build_reference_window, TaskKind, TrackingTask, HOVER_TARGET};
pub use tracking::{run_tracking, ClosedLoopLog, Controller, StepRecord, TrackingSummary};

/// Box on the pseudo control `ū = [f, M̄]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl ControlBox {
    /// Thrust in `[0, thrust_factor·mg]`, each `M̄` component in `±moment`.
    pub fn symmetric(hover_thrust: f64, thrust_factor: f64, moment: f64) -> Self {
        ControlBox {
            lower: [0.0, -moment, -moment, -moment],
            upper: [thrust_factor * hover_thrust, moment, moment, moment],
        }
    }

    /// Default actuator box: thrust up to `2mg`, `|M̄ᵢ| ≤ 0.05`.
    pub fn default_for(p: &QuadParams) -> Self {
        Self::symmetric(p.hover_thrust(), 2.0, 0.05)
    }

    pub fn saturate(&self, u: &PseudoControl) -> PseudoControl {
        let a = u.as_array();
        PseudoControl::from_slice(&[0, 1, 2, 3].map(|i| a[i].clamp(self.lower[i], self.upper[i])))
    }

    pub fn contains(&self, u: &PseudoControl) -> bool {
        let a = u.as_array();
        (0..4).all(|i| a[i] >= self.lower[i] && a[i] <= self.upper[i])
    }
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: f64,
    pub dt: f64,
    /// State weight, `9(M+N)` square.
    pub q: DMatrix<f64>,
    /// Control weight, `9(M+N)−15` square.
    pub r: DMatrix<f64>,
    /// Box on the lifted state over the whole horizon.
    pub state_box: Option<(DVector<f64>, DVector<f64>)>,
    /// Box on `ū`, mapped into `𝓤` at the current state and held over the
    /// horizon. The recovered `ū` is also clipped to it.
    pub control_box: Option<ControlBox>,
    pub qp: QpSettings,
}

impl MpcConfig {
    /// Default weights and timing with the default actuator box.
    pub fn new(ord: TruncationOrder) -> Self {
        Self::with_params(ord, &QuadParams::default())
    }

    pub fn with_params(ord: TruncationOrder, p: &QuadParams) -> Self {
        let nv = ord.virtual_dim();
        MpcConfig {
            horizon: 0.5,
            dt: 0.05,
            q: default_state_weight(ord),
            r: DMatrix::identity(nv, nv) * 0.05,
            state_box: None,
            control_box: Some(ControlBox::default_for(p)),
            qp: QpSettings::default(),
        }
    }

    /// Number of control intervals `H = t_h / Δt`.
    pub fn steps(&self) -> Result<usize> {
        let h = self.horizon / self.dt;
        let steps = h.round();
        if !(self.dt > 0.0) || steps < 1.0 || (h - steps).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is not a positive integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self, ord: TruncationOrder) -> Result<usize> {
        let h = self.steps()?;
        let (n, nv) = (ord.dim(), ord.virtual_dim());
        if self.q.shape() != (n, n) {
            return Err(Error::Dimension { expected: n, got: self.q.nrows() });
        }
        if self.r.shape() != (nv, nv) {
            return Err(Error::Dimension { expected: nv, got: self.r.nrows() });
        }
        let sym = |m: &DMatrix<f64>| (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
        if !sym(&self.q) || !sym(&self.r) {
            return Err(Error::InvalidConfig("weights must be symmetric".into()));
        }
        if self.q.symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::InvalidConfig("state weight must be positive semidefinite".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::InvalidConfig("control weight must be positive definite".into()));
        }
        if let Some((lo, hi)) = &self.state_box {
            if lo.len() != n || hi.len() != n {
                return Err(Error::Dimension { expected: n, got: lo.len().min(hi.len()) });
            }
        }
        if let Some(b) = &self.control_box {
            for i in 0..4 {
                if b.lower[i] > b.upper[i] {
                    return Err(Error::InfeasibleBounds { index: i, lower: b.lower[i], upper: b.upper[i] });
                }
            }
        }
        Ok(h)
    }
}

/// 1000 on `p₁, p₂, y₁, y₂`, 1 on `z₁, z₂`, zero elsewhere.
pub fn default_state_weight(ord: TruncationOrder) -> DMatrix<f64> {
    let mut d = DVector::zeros(ord.dim());
    for k in 1..=ord.m().min(2) {
        d.rows_mut(ord.p_offset(k), 3).fill(1000.0);
        d.rows_mut(ord.y_offset(k), 3).fill(1000.0);
    }
    for j in 1..=ord.n().min(2) {
        d.rows_mut(ord.z_offset(j), 9).fill(1.0);
    }
    DMatrix::from_diagonal(&d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let ord = TruncationOrder::new(3, 3).unwrap();
        let cfg = MpcConfig::new(ord);
        assert_eq!(cfg.validate(ord).unwrap(), 10);
        assert_eq!(cfg.q.diagonal().iter().filter(|&&x| x == 1000.0).count(), 12);
        assert_eq!(cfg.q.diagonal().iter().filter(|&&x| x == 1.0).count(), 18);
    }

    #[test]
    fn horizon_must_be_multiple_of_dt() {
        let ord = TruncationOrder::new(3, 3).unwrap();
        let mut cfg = MpcConfig::new(ord);
        cfg.horizon = 0.52;
        assert!(cfg.validate(ord).is_err());
        cfg.horizon = 0.0;
        assert!(cfg.validate(ord).is_err());
    }

    #[test]
    fn control_weight_must_be_definite() {
        let ord = TruncationOrder::new(2, 2).unwrap();
        let mut cfg = MpcConfig::new(ord);
        cfg.r[(0, 0)] = 0.0;
        assert!(cfg.validate(ord).is_err());
    }
}
