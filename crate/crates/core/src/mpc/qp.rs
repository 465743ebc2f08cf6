//! Dense convex QP solver for the condensed tracking problem.
//!
//! Solves
//!
//! ```text
//! minimise   ½ xᵀ P x + qᵀ x
//! subject to l ≤ C x ≤ u
//! ```
//!
//! with `P` positive definite. Without constraints this is one Cholesky
//! solve. With constraints we run ADMM in the OSQP splitting (over-relaxed,
//! fixed step) and finish with an active-set polish that solves the reduced
//! equality-constrained KKT system exactly.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    /// Absolute and relative stopping tolerance on primal and dual residuals.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    /// Run the convergence check (and polish attempt) every this many iterations.
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings { tolerance: 1e-8, max_iterations: 2000, rho: 0.1, sigma: 1e-6, alpha: 1.6, check_every: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    /// Iteration limit reached; the returned point is the last iterate.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Constraint multipliers (`y > 0` on active upper bounds, `y < 0` on lower).
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Largest of stationarity, primal infeasibility and complementarity.
    pub kkt_residual: f64,
    pub polished: bool,
}

/// Constraint rows `l ≤ C x ≤ u`. `C = None` means the identity (a box on `x`).
#[derive(Debug, Clone)]
pub struct Constraints {
    pub matrix: Option<DMatrix<f64>>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Constraints {
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Constraints { matrix: None, lower, upper }
    }

    fn rows(&self) -> usize {
        self.lower.len()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.matrix {
            Some(c) => c * x,
            None => x.clone(),
        }
    }

    fn apply_t(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.matrix {
            Some(c) => c.tr_mul(y),
            None => y.clone(),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        let rows = self.rows();
        if self.upper.len() != rows {
            return Err(Error::Dimension { expected: rows, got: self.upper.len() });
        }
        match &self.matrix {
            Some(c) if c.ncols() != n || c.nrows() != rows => {
                return Err(Error::Dimension { expected: n, got: c.ncols() });
            }
            None if rows != n => return Err(Error::Dimension { expected: n, got: rows }),
            _ => {}
        }
        for i in 0..rows {
            if self.lower[i] > self.upper[i] || self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(Error::InfeasibleBounds { index: i, lower: self.lower[i], upper: self.upper[i] });
            }
        }
        Ok(())
    }
}

/// A QP with fixed Hessian and fixed constraint matrix. Factorisations are
/// cached across solves, so a controller reuses one instance per run.
#[derive(Debug, Clone)]
pub struct DenseQp {
    p: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    settings: QpSettings,
    admm_cache: HashMap<Vec<bool>, Cholesky<f64, Dyn>>,
}

const EQUALITY_RHO_SCALE: f64 = 1e3;
const ADMM_CACHE_LIMIT: usize = 32;

impl DenseQp {
    pub fn new(p: DMatrix<f64>, settings: QpSettings) -> Result<Self> {
        let chol = p
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("QP Hessian is not positive definite".into()))?;
        Ok(DenseQp { p, chol, settings, admm_cache: HashMap::new() })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn solve_unconstrained(&self, q: &DVector<f64>) -> QpSolution {
        let x = self.chol.solve(&(-q));
        let grad = &self.p * &x + q;
        QpSolution {
            kkt_residual: grad.amax(),
            x,
            y: DVector::zeros(0),
            status: QpStatus::Solved,
            iterations: 0,
            polished: false,
        }
    }

    pub fn solve(&mut self, q: &DVector<f64>, cons: Option<&Constraints>) -> Result<QpSolution> {
        let n = self.dim();
        if q.len() != n {
            return Err(Error::Dimension { expected: n, got: q.len() });
        }
        let Some(cons) = cons else {
            return Ok(self.solve_unconstrained(q));
        };
        cons.check(n)?;
        if cons.rows() == 0 {
            return Ok(self.solve_unconstrained(q));
        }
        // Unconstrained minimiser may already be feasible.
        let free = self.solve_unconstrained(q);
        let cx = cons.apply(&free.x);
        if (0..cons.rows()).all(|i| cx[i] >= cons.lower[i] && cx[i] <= cons.upper[i]) {
            return Ok(QpSolution { y: DVector::zeros(cons.rows()), ..free });
        }
        self.admm(q, cons)
    }

    fn admm(&mut self, q: &DVector<f64>, cons: &Constraints) -> Result<QpSolution> {
        let s = self.settings;
        let n = self.dim();
        let mrows = cons.rows();
        let eq: Vec<bool> = (0..mrows).map(|i| cons.upper[i] - cons.lower[i] <= 1e-12 * (1.0 + cons.lower[i].abs())).collect();
        let rho = DVector::from_fn(mrows, |i, _| if eq[i] { s.rho * EQUALITY_RHO_SCALE } else { s.rho });
        let kkt = self.admm_factor(&eq, &rho, cons)?;

        let mut x = DVector::zeros(n);
        let mut z = DVector::zeros(mrows);
        let mut y = DVector::zeros(mrows);
        let project = |v: &DVector<f64>| DVector::from_fn(v.len(), |i, _| v[i].clamp(cons.lower[i], cons.upper[i]));

        let mut best = None;
        for it in 1..=s.max_iterations {
            let rhs = &x * s.sigma - q + cons.apply_t(&(rho.component_mul(&z) - &y));
            let x_tilde = kkt.solve(&rhs);
            let z_tilde = cons.apply(&x_tilde);
            x = &x_tilde * s.alpha + &x * (1.0 - s.alpha);
            let z_relaxed = &z_tilde * s.alpha + &z * (1.0 - s.alpha);
            let z_next = project(&(&z_relaxed + y.component_div(&rho)));
            y += rho.component_mul(&(&z_relaxed - &z_next));
            z = z_next;

            if it % s.check_every == 0 || it == s.max_iterations {
                if let Some(sol) = self.polish(q, cons, &z, &y, &rho) {
                    if sol.kkt_residual <= s.tolerance * (1.0 + q.amax()) {
                        return Ok(QpSolution { iterations: it, ..sol });
                    }
                }
                let (res, prim, dual) = self.residuals(q, cons, &x, &z, &y);
                let scale = 1.0 + q.amax().max((&self.p * &x).amax());
                if prim <= s.tolerance * scale && dual <= s.tolerance * scale {
                    return Ok(QpSolution { x, y, status: QpStatus::Solved, iterations: it, kkt_residual: res, polished: false });
                }
                best = Some(res);
            }
        }
        let kkt_residual = best.unwrap_or(f64::INFINITY);
        Ok(QpSolution { x, y, status: QpStatus::MaxIterations, iterations: s.max_iterations, kkt_residual, polished: false })
    }

    fn admm_factor(&mut self, eq: &[bool], rho: &DVector<f64>, cons: &Constraints) -> Result<Cholesky<f64, Dyn>> {
        // Only the box form is cached; a general C is rebuilt because the
        // cached factor would not know which C it belongs to.
        if cons.matrix.is_none() {
            if let Some(f) = self.admm_cache.get(eq) {
                return Ok(f.clone());
            }
        }
        let n = self.dim();
        let mut k = &self.p + DMatrix::identity(n, n) * self.settings.sigma;
        match &cons.matrix {
            Some(c) => {
                let scaled = DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] * rho[i]);
                k += c.tr_mul(&scaled);
            }
            None => {
                for i in 0..n {
                    k[(i, i)] += rho[i];
                }
            }
        }
        let f = k.cholesky().ok_or_else(|| Error::InvalidConfig("ADMM system is not positive definite".into()))?;
        if cons.matrix.is_none() {
            if self.admm_cache.len() >= ADMM_CACHE_LIMIT {
                self.admm_cache.clear();
            }
            self.admm_cache.insert(eq.to_vec(), f.clone());
        }
        Ok(f)
    }

    /// (kkt residual, primal residual, dual residual) at an ADMM iterate.
    fn residuals(&self, q: &DVector<f64>, cons: &Constraints, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64) {
        let prim = (cons.apply(x) - z).amax();
        let dual = (&self.p * x + q + cons.apply_t(y)).amax();
        let kkt = kkt_residual(&self.p, q, cons, x, y);
        (kkt.max(prim), prim, dual)
    }

    /// Guess the active set from the ADMM iterate and solve the equality
    /// constrained problem on it exactly.
    fn polish(&self, q: &DVector<f64>, cons: &Constraints, z: &DVector<f64>, y: &DVector<f64>, rho: &DVector<f64>) -> Option<QpSolution> {
        let mrows = cons.rows();
        let mut active: Vec<(usize, f64)> = Vec::new();
        for i in 0..mrows {
            if z[i] - cons.lower[i] < -y[i] / rho[i] {
                active.push((i, cons.lower[i]));
            } else if cons.upper[i] - z[i] < y[i] / rho[i] {
                active.push((i, cons.upper[i]));
            }
        }
        let (x, y_full) = match &cons.matrix {
            None => self.solve_box_active(q, &active, mrows)?,
            Some(c) => solve_general_active(&self.p, q, c, &active)?,
        };
        let res = kkt_residual(&self.p, q, cons, &x, &y_full);
        Some(QpSolution { x, y: y_full, status: QpStatus::Solved, iterations: 0, kkt_residual: res, polished: true })
    }

    fn solve_box_active(&self, q: &DVector<f64>, active: &[(usize, f64)], n: usize) -> Option<(DVector<f64>, DVector<f64>)> {
        let mut fixed = vec![None; n];
        for &(i, v) in active {
            fixed[i] = Some(v);
        }
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        let mut x = DVector::from_fn(n, |i, _| fixed[i].unwrap_or(0.0));
        if !free.is_empty() {
            let nf = free.len();
            let pff = DMatrix::from_fn(nf, nf, |a, b| self.p[(free[a], free[b])]);
            let px = &self.p * &x;
            let rhs = DVector::from_fn(nf, |a, _| -q[free[a]] - px[free[a]]);
            let xf = pff.cholesky()?.solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                x[i] = xf[a];
            }
        }
        // Box multipliers are the negative gradient on the fixed coordinates.
        let grad = &self.p * &x + q;
        let y = DVector::from_fn(n, |i, _| if fixed[i].is_some() { -grad[i] } else { 0.0 });
        Some((x, y))
    }
}

fn solve_general_active(p: &DMatrix<f64>, q: &DVector<f64>, c: &DMatrix<f64>, active: &[(usize, f64)]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = p.nrows();
    let na = active.len();
    let mut kkt = DMatrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    let mut rhs = DVector::zeros(n + na);
    rhs.rows_mut(0, n).copy_from(&(-q));
    for (a, &(i, v)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + a, j)] = c[(i, j)];
            kkt[(j, n + a)] = c[(i, j)];
        }
        rhs[n + a] = v;
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(c.nrows());
    for (a, &(i, _)) in active.iter().enumerate() {
        y[i] = sol[n + a];
    }
    Some((x, y))
}

/// KKT residual for `l ≤ Cx ≤ u` with multiplier sign convention
/// `y⁺ ↔ upper`, `y⁻ ↔ lower`.
pub fn kkt_residual(p: &DMatrix<f64>, q: &DVector<f64>, cons: &Constraints, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let cx = cons.apply(x);
    let stat = (p * x + q + cons.apply_t(y)).amax();
    let mut prim = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..cons.rows() {
        prim = prim.max(cons.lower[i] - cx[i]).max(cx[i] - cons.upper[i]);
        let (yp, ym) = (y[i].max(0.0), (-y[i]).max(0.0));
        if yp > 0.0 {
            comp = comp.max(yp * (cons.upper[i] - cx[i]).abs());
        }
        if ym > 0.0 {
            comp = comp.max(ym * (cx[i] - cons.lower[i]).abs());
        }
    }
    stat.max(prim).max(comp)
}
