//! Lifted system matrices.
//!
//! The truncated lifted dynamics are `Ẋ = A X + 𝓑(X) ū` with a constant
//! nilpotent `A` and a state-dependent `9(M+N) × 4` input matrix. Stacking
//! the nonzero block-rows of `𝓑(X) ū` into a virtual control `𝓤` turns this
//! into the LTI system `Ẋ = A X + B̄ 𝓤` with a constant 0/1 selector `B̄`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lift::{attitude_moment_sum, chain_moment_sum, lift, powers, ChainHeads, LiftedState, TruncationOrder};
use crate::linalg::vec9;
use crate::se3::{Mat3, PseudoControl, QuadParams, QuadState, Vec3};

/// Relative singular-value cutoff below which `𝓑` is treated as rank deficient.
pub const RANK_CUTOFF: f64 = 1e-10;

pub fn build_a(ord: TruncationOrder) -> DMatrix<f64> {
    let (m, n) = (ord.m(), ord.n());
    let mut a = DMatrix::zeros(ord.dim(), ord.dim());
    let eye3 = |a: &mut DMatrix<f64>, r: usize, c: usize| {
        for i in 0..3 {
            a[(r + i, c + i)] = 1.0;
        }
    };
    for k in 1..=m {
        // ṗ_k = p_{k+1} + y_k
        if k < m {
            eye3(&mut a, ord.p_offset(k), ord.p_offset(k + 1));
        }
        eye3(&mut a, ord.p_offset(k), ord.y_offset(k));
        // ẏ_k = y_{k+1} + h_k + (input terms)
        if k < m {
            eye3(&mut a, ord.y_offset(k), ord.y_offset(k + 1));
        }
        eye3(&mut a, ord.y_offset(k), ord.h_offset(k));
        // ḣ_k = h_{k+1} + (input terms)
        if k < m {
            eye3(&mut a, ord.h_offset(k), ord.h_offset(k + 1));
        }
    }
    for j in 1..n {
        let (r, c) = (ord.z_offset(j), ord.z_offset(j + 1));
        for i in 0..9 {
            a[(r + i, c + i)] = 1.0;
        }
    }
    a
}

/// `𝓑` evaluated from the chain heads of a (possibly off-manifold) lift.
pub fn build_b_from_heads(heads: &ChainHeads, p: &QuadParams, ord: TruncationOrder) -> Result<DMatrix<f64>> {
    let j_inv = p.inertia_inverse()?;
    Ok(input_matrix(heads, p.mass, &j_inv, ord))
}

pub fn build_b(s: &QuadState, p: &QuadParams, ord: TruncationOrder) -> Result<DMatrix<f64>> {
    build_b_from_heads(&ChainHeads::of_state(s, p), p, ord)
}

fn input_matrix(heads: &ChainHeads, mass: f64, j_inv: &Mat3, ord: TruncationOrder) -> DMatrix<f64> {
    let (m, n) = (ord.m(), ord.n());
    let t = heads.omega_hat.transpose();
    let tp = powers(&t, m);
    let op = powers(&heads.omega_hat, n);
    let mut b = DMatrix::zeros(ord.dim(), 4);
    let e3 = Vec3::z();

    // Block k (0-based) drives chain row k + 1.
    for k in 0..m {
        let row = k + 1;
        b.fixed_view_mut::<3, 1>(ord.y_offset(row), 0).copy_from(&(tp[k] * e3 / mass));
        if k == 0 {
            continue;
        }
        b.fixed_view_mut::<3, 3>(ord.p_offset(row), 1)
            .copy_from(&(chain_moment_sum(&tp, &heads.p1, k) * j_inv));
        b.fixed_view_mut::<3, 3>(ord.y_offset(row), 1)
            .copy_from(&(chain_moment_sum(&tp, &heads.y1, k) * j_inv));
        b.fixed_view_mut::<3, 3>(ord.h_offset(row), 1)
            .copy_from(&(chain_moment_sum(&tp, &heads.h1, k) * j_inv));
    }
    for k in 1..n {
        let row = ord.z_offset(k + 1);
        for c in 0..3 {
            let jc: Vec3 = j_inv.column(c).into_owned();
            let g = vec9(&attitude_moment_sum(&heads.rotation, &op, &jc, k));
            b.fixed_view_mut::<9, 1>(row, 1 + c).copy_from(&g);
        }
    }
    b
}

/// One contiguous piece of the virtual control and the lifted rows it feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub virtual_offset: usize,
    pub lifted_offset: usize,
    pub len: usize,
}

/// Virtual control layout `[u_h1..u_h(M-1) | u_y0..u_y(M-1) | u_p1..u_p(M-1) | u_a1..u_a(N-1)]`.
/// `u_hk`, `u_yk`, `u_pk`, `u_ak` feed rows `h_{k+1}`, `y_{k+1}`, `p_{k+1}`, `z_{k+1}`.
pub fn virtual_routes(ord: TruncationOrder) -> Vec<Route> {
    let (m, n) = (ord.m(), ord.n());
    let mut routes = Vec::with_capacity(3 * m + n);
    let mut off = 0;
    for k in 1..m {
        routes.push(Route { virtual_offset: off, lifted_offset: ord.h_offset(k + 1), len: 3 });
        off += 3;
    }
    for k in 0..m {
        routes.push(Route { virtual_offset: off, lifted_offset: ord.y_offset(k + 1), len: 3 });
        off += 3;
    }
    for k in 1..m {
        routes.push(Route { virtual_offset: off, lifted_offset: ord.p_offset(k + 1), len: 3 });
        off += 3;
    }
    for k in 1..n {
        routes.push(Route { virtual_offset: off, lifted_offset: ord.z_offset(k + 1), len: 9 });
        off += 9;
    }
    debug_assert_eq!(off, ord.virtual_dim());
    routes
}

pub fn build_bbar(ord: TruncationOrder) -> Result<DMatrix<f64>> {
    ord.require_virtual()?;
    let mut bbar = DMatrix::zeros(ord.dim(), ord.virtual_dim());
    for r in virtual_routes(ord) {
        for i in 0..r.len {
            bbar[(r.lifted_offset + i, r.virtual_offset + i)] = 1.0;
        }
    }
    Ok(bbar)
}

/// Least-squares solve of `B ū = rhs` for a tall `9(M+N) × 4` input matrix.
fn solve_input_lstsq(b: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<PseudoControl> {
    let svd = b.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio >= RANK_CUTOFF) {
        return Err(Error::RankDeficient { ratio });
    }
    let sol = svd.solve(rhs, 0.0).expect("svd factors were requested");
    Ok(PseudoControl::from_slice(sol.as_slice()))
}

/// The lifted linear parameter-varying model `Ẋ = A X + 𝓑(X) ū`.
#[derive(Debug, Clone)]
pub struct LpvSystem {
    a: DMatrix<f64>,
    order: TruncationOrder,
    params: QuadParams,
    j_inv: Mat3,
}

impl LpvSystem {
    pub fn new(params: QuadParams, order: TruncationOrder) -> Result<Self> {
        let j_inv = params.inertia_inverse()?;
        Ok(LpvSystem { a: build_a(order), order, params, j_inv })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn order(&self) -> TruncationOrder {
        self.order
    }

    pub fn params(&self) -> &QuadParams {
        &self.params
    }

    pub fn input_matrix(&self, s: &QuadState) -> DMatrix<f64> {
        input_matrix(&ChainHeads::of_state(s, &self.params), self.params.mass, &self.j_inv, self.order)
    }

    pub fn input_matrix_lifted(&self, x: &LiftedState) -> DMatrix<f64> {
        input_matrix(&x.heads(), self.params.mass, &self.j_inv, self.order)
    }

    /// `A lift(s) + 𝓑(s) ū`.
    pub fn derivative(&self, s: &QuadState, ubar: &PseudoControl) -> DVector<f64> {
        let x = lift(s, &self.params, self.order);
        let u = DVector::from_row_slice(&ubar.as_array());
        &self.a * x.as_vector() + self.input_matrix(s) * u
    }

    /// Same vector field evaluated purely in lifted coordinates.
    pub fn derivative_lifted(&self, x: &LiftedState, ubar: &PseudoControl) -> DVector<f64> {
        let u = DVector::from_row_slice(&ubar.as_array());
        &self.a * x.as_vector() + self.input_matrix_lifted(x) * u
    }

    /// Packs `𝓑(s) ū` into the virtual-control layout.
    pub fn pack_virtual(&self, s: &QuadState, ubar: &PseudoControl) -> Result<DVector<f64>> {
        self.order.require_virtual()?;
        let u = DVector::from_row_slice(&ubar.as_array());
        let bu = self.input_matrix(s) * u;
        let mut out = DVector::zeros(self.order.virtual_dim());
        for r in virtual_routes(self.order) {
            out.rows_mut(r.virtual_offset, r.len).copy_from(&bu.rows(r.lifted_offset, r.len));
        }
        Ok(out)
    }
}

/// The lifted LTI model `Ẋ = A X + B̄ 𝓤`, together with the state-dependent
/// maps between `ū` and `𝓤`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    lpv: LpvSystem,
    bbar: DMatrix<f64>,
    bbar_pinv: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(params: QuadParams, order: TruncationOrder) -> Result<Self> {
        let lpv = LpvSystem::new(params, order)?;
        let bbar = build_bbar(order)?;
        let bbar_pinv = bbar
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidConfig(format!("selector pseudo-inverse: {e}")))?;
        Ok(LtiSystem { lpv, bbar, bbar_pinv })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        self.lpv.a()
    }

    pub fn bbar(&self) -> &DMatrix<f64> {
        &self.bbar
    }

    pub fn lpv(&self) -> &LpvSystem {
        &self.lpv
    }

    pub fn order(&self) -> TruncationOrder {
        self.lpv.order
    }

    pub fn params(&self) -> &QuadParams {
        &self.lpv.params
    }

    pub fn pack_virtual(&self, s: &QuadState, ubar: &PseudoControl) -> Result<DVector<f64>> {
        self.lpv.pack_virtual(s, ubar)
    }

    /// `ū = 𝓑(s)† B̄ 𝓤`: the pseudo control whose lifted image is closest
    /// to what the virtual control asks for.
    pub fn recover_control(&self, s: &QuadState, u: &DVector<f64>) -> Result<PseudoControl> {
        if u.len() != self.order().virtual_dim() {
            return Err(Error::Dimension { expected: self.order().virtual_dim(), got: u.len() });
        }
        solve_input_lstsq(&self.lpv.input_matrix(s), &(&self.bbar * u))
    }

    /// `𝓤_b = B̄† 𝓑(s) ū_b`.
    pub fn map_control_bounds(&self, s: &QuadState, ubar_b: &PseudoControl) -> Result<DVector<f64>> {
        let b = self.lpv.input_matrix(s);
        check_input_rank(&b)?;
        let u = DVector::from_row_slice(&ubar_b.as_array());
        Ok(&self.bbar_pinv * (b * u))
    }

    /// Linear map `ū ↦ B̄† 𝓑(s) ū` as a `(9(M+N)−15) × 4` matrix.
    pub fn bound_map(&self, s: &QuadState) -> Result<DMatrix<f64>> {
        let b = self.lpv.input_matrix(s);
        check_input_rank(&b)?;
        Ok(&self.bbar_pinv * b)
    }
}

fn check_input_rank(b: &DMatrix<f64>) -> Result<()> {
    let sv = b.singular_values();
    let ratio = if sv.max() > 0.0 { sv.min() / sv.max() } else { 0.0 };
    if !(ratio >= RANK_CUTOFF) {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{nilpotency_index, nonzero_rows, numerical_rank, singular_values};
    use crate::se3::{hat, Rotation};
    use approx::assert_relative_eq;

    fn order(m: usize, n: usize) -> TruncationOrder {
        TruncationOrder::new(m, n).unwrap()
    }

    fn sample_state() -> QuadState {
        QuadState {
            position: Vec3::new(0.7, -1.1, 1.9),
            velocity: Vec3::new(-0.4, 0.8, 0.3),
            rotation: Rotation::exp(&Vec3::new(0.2, -0.5, 0.9)),
            omega: Vec3::new(0.3, -0.2, 0.4),
        }
    }

    #[test]
    fn attitude_block_is_shift() {
        let ord = order(2, 3);
        let a = build_a(ord);
        let x = DVector::from_fn(ord.dim(), |i, _| i as f64 + 1.0);
        let ax = &a * &x;
        let z = |v: &DVector<f64>, j: usize| v.rows(ord.z_offset(j), 9).into_owned();
        assert_eq!(z(&ax, 1), z(&x, 2));
        assert_eq!(z(&ax, 2), z(&x, 3));
        assert_eq!(z(&ax, 3), DVector::zeros(9));
    }

    #[test]
    fn a_structure() {
        // Nilpotency index max(M + 2, N); 9(M+N) − 12 nonzero rows but, for
        // M >= 3, rank 9(M+N−2) since some p/y/h rows are linear combinations
        // of others (e.g. row y_M equals row h_{M−1}).
        for m in 1..=6 {
            for n in 1..=6 {
                let ord = order(m, n);
                let a = build_a(ord);
                assert_eq!(nilpotency_index(&a), Some((m + 2).max(n)), "M={m} N={n}");
                assert_eq!(nonzero_rows(&a), ord.dim() - 12);
                if m >= 3 {
                    assert_eq!(numerical_rank(&singular_values(&a), 1e-9), ord.dim() - 18, "M={m} N={n}");
                }
            }
        }
        let a = build_a(order(3, 3));
        assert_eq!(numerical_rank(&singular_values(&a), 1e-9), 36);
    }

    #[test]
    fn input_matrix_at_rest() {
        let p = QuadParams::default();
        let ord = order(3, 3);
        let b = build_b(&QuadState::at_rest(Vec3::zeros()), &p, ord).unwrap();
        let j_inv = p.inertia_inverse().unwrap();
        // y_1 row: [e3/m | 0]
        let y1 = b.fixed_view::<3, 4>(ord.y_offset(1), 0);
        assert_relative_eq!(y1[(2, 0)], 1.0 / p.mass);
        assert_eq!(y1.norm(), 1.0 / p.mass);
        // z_2 row carries vec(hat(j_c)) in column c.
        for c in 0..3 {
            let jc: Vec3 = j_inv.column(c).into_owned();
            let expected = vec9(&hat(&jc));
            assert_relative_eq!(b.fixed_view::<9, 1>(ord.z_offset(2), 1 + c).into_owned(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn gravity_block_without_rate() {
        let p = QuadParams::default();
        let ord = order(3, 3);
        let mut s = sample_state();
        s.omega = Vec3::zeros();
        let b = build_b(&s, &p, ord).unwrap();
        let h1 = s.rotation.matrix().transpose() * crate::lift::gravity_vector(&p);
        let expected = hat(&h1) * p.inertia_inverse().unwrap();
        assert_relative_eq!(b.fixed_view::<3, 3>(ord.h_offset(2), 1).into_owned(), expected, epsilon = 1e-12);
    }

    #[test]
    fn singular_inertia() {
        let p = QuadParams { inertia: Mat3::from_diagonal(&Vec3::new(1.0, 0.0, 1.0)), ..Default::default() };
        assert_eq!(build_b(&sample_state(), &p, order(3, 3)).unwrap_err(), Error::SingularInertia);
        assert!(LtiSystem::new(p, order(3, 3)).is_err());
    }

    #[test]
    fn selector_shape_and_orthonormality() {
        let bbar = build_bbar(order(3, 3)).unwrap();
        assert_eq!(bbar.shape(), (54, 39));
        for m in 2..=5 {
            for n in 2..=5 {
                let bbar = build_bbar(order(m, n)).unwrap();
                let gram = bbar.transpose() * &bbar;
                assert_eq!(gram, DMatrix::identity(bbar.ncols(), bbar.ncols()));
            }
        }
        assert!(build_bbar(order(1, 3)).is_err());
    }

    #[test]
    fn packing_hover() {
        let p = QuadParams::default();
        let lti = LtiSystem::new(p, order(3, 3)).unwrap();
        let s = QuadState::at_rest(Vec3::new(1.0, 1.3, 2.0));
        assert_eq!(lti.pack_virtual(&s, &PseudoControl::default()).unwrap(), DVector::zeros(39));
        let u = lti.pack_virtual(&s, &PseudoControl::hover(&p)).unwrap();
        // u_y0 sits after the M−1 gravity components.
        let uy0 = u.rows(6, 3);
        assert_relative_eq!(uy0[2], p.gravity, epsilon = 1e-12);
        assert_eq!(u.norm(), uy0.norm());
    }

    #[test]
    fn recovery_roundtrip() {
        let p = QuadParams::default();
        let lti = LtiSystem::new(p, order(3, 3)).unwrap();
        let s = sample_state();
        let ubar = PseudoControl::new(7.3, Vec3::new(0.02, -0.01, 0.003));
        let u = lti.pack_virtual(&s, &ubar).unwrap();
        let back = lti.recover_control(&s, &u).unwrap();
        assert_relative_eq!(back.thrust, ubar.thrust, epsilon = 1e-9);
        assert_relative_eq!(back.moment_bar, ubar.moment_bar, epsilon = 1e-9);
        let zero = lti.recover_control(&s, &DVector::zeros(39)).unwrap();
        assert_eq!(zero.norm(), 0.0);
        assert!(lti.recover_control(&s, &DVector::zeros(10)).is_err());
    }

    #[test]
    fn bound_map_matches_packing() {
        let p = QuadParams::default();
        let lti = LtiSystem::new(p, order(4, 3)).unwrap();
        let s = sample_state();
        let ub = PseudoControl::new(12.0, Vec3::new(0.05, 0.05, 0.02));
        let mapped = lti.map_control_bounds(&s, &ub).unwrap();
        assert_relative_eq!(mapped, lti.pack_virtual(&s, &ub).unwrap(), epsilon = 1e-12);
        assert_eq!(lti.map_control_bounds(&s, &PseudoControl::default()).unwrap().norm(), 0.0);
        let back = lti.recover_control(&s, &mapped).unwrap();
        assert_relative_eq!(back.thrust, ub.thrust, epsilon = 1e-9);
    }
}
