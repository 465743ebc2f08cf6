//! Condensed finite-horizon tracking problem.
//!
//! With `X = Φ X₀ + Γ 𝓤` stacking `X₁..X_H`, the rectangle-rule cost
//!
//! ```text
//! Δt Σ_{i=1..H} ‖Xᵢ − X_ref,i‖²_Q + Δt Σ_{i=0..H−1} ‖𝓤ᵢ − 𝓤_ref,i‖²_R
//! ```
//!
//! becomes `𝓤ᵀ P 𝓤 + 2 qᵀ 𝓤 + const` with
//! `P = Δt (Γᵀ Q̄ Γ + R̄)` and `q = Δt (Γᵀ Q̄ (Φ X₀ − X_ref) − R̄ 𝓤_ref)`.

use nalgebra::{DMatrix, DVector};

use super::discretize::DiscreteLti;
use super::qp::{Constraints, DenseQp, QpStatus};
use super::MpcConfig;
use crate::error::{Error, Result};

/// References for one solve: `states[i]` is `X_ref` at step `i+1`,
/// `controls[i]` is `𝓤_ref` at step `i`.
#[derive(Debug, Clone)]
pub struct ReferenceWindow {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub controls: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Ocp {
    h: usize,
    n: usize,
    nv: usize,
    dt: f64,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    /// `Q̄ Γ`, reused for the linear term.
    q_gamma: DMatrix<f64>,
    qp: DenseQp,
    state_box: Option<(DVector<f64>, DVector<f64>)>,
}

impl Ocp {
    pub fn new(disc: &DiscreteLti, cfg: &MpcConfig) -> Result<Self> {
        let h = cfg.steps()?;
        let (n, nv) = (disc.ad.nrows(), disc.bd.ncols());
        if (cfg.dt - disc.dt).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("model sampled at {} but controller runs at {}", disc.dt, cfg.dt)));
        }
        if cfg.q.shape() != (n, n) {
            return Err(Error::Dimension { expected: n, got: cfg.q.nrows() });
        }
        if cfg.r.shape() != (nv, nv) {
            return Err(Error::Dimension { expected: nv, got: cfg.r.nrows() });
        }

        let mut phi = DMatrix::zeros(h * n, n);
        let mut power = disc.ad.clone();
        for i in 0..h {
            phi.view_mut((i * n, 0), (n, n)).copy_from(&power);
            power = &disc.ad * power;
        }
        // Γ block (i, j) = Ad^{i−j} Bd for j ≤ i, stored row-block i ↔ X_{i+1}.
        let mut gamma = DMatrix::zeros(h * n, h * nv);
        let mut col = disc.bd.clone();
        for d in 0..h {
            for j in 0..h - d {
                gamma.view_mut(((j + d) * n, j * nv), (n, nv)).copy_from(&col);
            }
            col = &disc.ad * col;
        }
        let mut q_gamma = DMatrix::zeros(h * n, h * nv);
        for i in 0..h {
            let rows = gamma.rows(i * n, n);
            q_gamma.rows_mut(i * n, n).copy_from(&(&cfg.q * rows));
        }
        let mut hess = gamma.tr_mul(&q_gamma);
        for i in 0..h {
            let mut blk = hess.view_mut((i * nv, i * nv), (nv, nv));
            blk += &cfg.r;
        }
        hess *= disc.dt;
        // Symmetrise against round-off before factorising.
        let hess = (&hess + hess.transpose()) * 0.5;
        let qp = DenseQp::new(hess, cfg.qp)?;
        Ok(Ocp {
            h,
            n,
            nv,
            dt: disc.dt,
            q: cfg.q.clone(),
            r: cfg.r.clone(),
            phi,
            gamma,
            q_gamma,
            qp,
            state_box: cfg.state_box.clone(),
        })
    }

    pub fn horizon_steps(&self) -> usize {
        self.h
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        self.qp.hessian()
    }

    pub fn prediction_matrices(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.phi, &self.gamma)
    }

    /// Linear term `q` of the condensed objective.
    pub fn linear_term(&self, x0: &DVector<f64>, refs: &ReferenceWindow) -> Result<DVector<f64>> {
        self.check_refs(x0, refs)?;
        let xr = stack(&refs.states);
        let ur = stack(&refs.controls);
        let e0 = &self.phi * x0 - xr;
        let mut q = self.q_gamma.tr_mul(&e0);
        for i in 0..self.h {
            let mut blk = q.rows_mut(i * self.nv, self.nv);
            blk -= &self.r * ur.rows(i * self.nv, self.nv);
        }
        Ok(q * self.dt)
    }

    /// Solves the tracking problem. `control_box` bounds every `𝓤ᵢ` by the same
    /// interval.
    pub fn solve(
        &mut self,
        x0: &DVector<f64>,
        refs: &ReferenceWindow,
        control_box: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<OcpSolution> {
        let q = self.linear_term(x0, refs)?;
        let cons = self.constraints(x0, control_box)?;
        let sol = self.qp.solve(&q, cons.as_ref())?;
        let controls: Vec<DVector<f64>> = (0..self.h).map(|i| sol.x.rows(i * self.nv, self.nv).into_owned()).collect();
        let states = self.predict(x0, &controls);
        let cost = self.cost(&states, &controls, refs);
        Ok(OcpSolution { controls, states, cost, status: sol.status, iterations: sol.iterations, kkt_residual: sol.kkt_residual })
    }

    fn constraints(&self, x0: &DVector<f64>, control_box: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<Option<Constraints>> {
        let nu = self.h * self.nv;
        let ubox = match control_box {
            Some((lo, hi)) => {
                if lo.len() != self.nv || hi.len() != self.nv {
                    return Err(Error::Dimension { expected: self.nv, got: lo.len().min(hi.len()) });
                }
                Some((
                    DVector::from_fn(nu, |i, _| lo[i % self.nv]),
                    DVector::from_fn(nu, |i, _| hi[i % self.nv]),
                ))
            }
            None => None,
        };
        let Some((slo, shi)) = &self.state_box else {
            return Ok(ubox.map(|(lo, hi)| Constraints::boxed(lo, hi)));
        };
        let free = &self.phi * x0;
        let xlo = DVector::from_fn(self.h * self.n, |i, _| slo[i % self.n] - free[i]);
        let xhi = DVector::from_fn(self.h * self.n, |i, _| shi[i % self.n] - free[i]);
        let (ulo, uhi) = ubox.unwrap_or_else(|| {
            (DVector::from_element(nu, f64::NEG_INFINITY), DVector::from_element(nu, f64::INFINITY))
        });
        let mut c = DMatrix::zeros(nu + self.h * self.n, nu);
        c.view_mut((0, 0), (nu, nu)).fill_with_identity();
        c.view_mut((nu, 0), (self.h * self.n, nu)).copy_from(&self.gamma);
        let lower = DVector::from_iterator(nu + xlo.len(), ulo.iter().chain(xlo.iter()).copied());
        let upper = DVector::from_iterator(nu + xhi.len(), uhi.iter().chain(xhi.iter()).copied());
        Ok(Some(Constraints { matrix: Some(c), lower, upper }))
    }

    pub fn predict(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let x = &self.phi * x0 + &self.gamma * stack(controls);
        (0..self.h).map(|i| x.rows(i * self.n, self.n).into_owned()).collect()
    }

    /// Rectangle-rule tracking cost of a candidate plan.
    pub fn cost(&self, states: &[DVector<f64>], controls: &[DVector<f64>], refs: &ReferenceWindow) -> f64 {
        let mut c = 0.0;
        for i in 0..self.h {
            let e = &states[i] - &refs.states[i];
            c += e.dot(&(&self.q * &e));
            let du = &controls[i] - &refs.controls[i];
            c += du.dot(&(&self.r * &du));
        }
        c * self.dt
    }

    fn check_refs(&self, x0: &DVector<f64>, refs: &ReferenceWindow) -> Result<()> {
        if x0.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x0.len() });
        }
        if refs.states.len() != self.h || refs.controls.len() != self.h {
            return Err(Error::Dimension { expected: self.h, got: refs.states.len().min(refs.controls.len()) });
        }
        if let Some(bad) = refs.states.iter().find(|x| x.len() != self.n) {
            return Err(Error::Dimension { expected: self.n, got: bad.len() });
        }
        if let Some(bad) = refs.controls.iter().find(|u| u.len() != self.nv) {
            return Err(Error::Dimension { expected: self.nv, got: bad.len() });
        }
        Ok(())
    }
}

fn stack(v: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(v.iter().map(|x| x.len()).sum(), v.iter().flat_map(|x| x.iter().copied()))
}
