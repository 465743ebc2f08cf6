//! Observable chains for the quadrotor and the truncated lifted state.
//!
//! With `Ω = hat(ω)` and `T = Ωᵀ`, the chains are
//!
//! ```text
//! p_k = T^{k-1} Rᵀ x      y_k = T^{k-1} Rᵀ v      h_k = T^{k-1} Rᵀ γ
//! z_j = vec(R Ω^{j-1})
//! ```
//!
//! where `γ = [0, 0, -g]` is the inertial gravity acceleration. Truncating at
//! `k = M`, `j = N` gives a lifted vector of length `9(M + N)` laid out as
//! `[p_1..p_M | y_1..y_M | h_1..h_M | z_1..z_N]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{unvec9, vec9};
use crate::se3::{hat, vee, Mat3, PseudoControl, QuadParams, QuadState, Rotation, Vec3};

/// Tolerance on `z_1` being a rotation when inverting a lift.
pub const UNLIFT_ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TruncationOrder {
    m: usize,
    n: usize,
}

impl TruncationOrder {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidOrder { m, n, reason: "both chain lengths must be at least 1" });
        }
        Ok(TruncationOrder { m, n })
    }

    /// Positional chain length `M`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Attitude chain length `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Lifted dimension `9(M + N)`.
    pub fn dim(&self) -> usize {
        9 * (self.m + self.n)
    }

    /// Virtual control dimension `9(M + N) − 15`. Only meaningful for `M, N ≥ 2`.
    pub fn virtual_dim(&self) -> usize {
        self.dim().saturating_sub(15)
    }

    /// Whether the LTI controllability guarantee applies (`M ≥ 3`, `N ≥ 2`).
    pub fn in_guarantee_region(&self) -> bool {
        self.m >= 3 && self.n >= 2
    }

    pub fn require_virtual(&self) -> Result<()> {
        if self.m < 2 || self.n < 2 {
            return Err(Error::InvalidOrder {
                m: self.m,
                n: self.n,
                reason: "the virtual-control form needs M >= 2 and N >= 2",
            });
        }
        Ok(())
    }

    // Row offsets of 1-based blocks in the lifted vector.
    pub fn p_offset(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.m);
        3 * (k - 1)
    }

    pub fn y_offset(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.m);
        3 * self.m + 3 * (k - 1)
    }

    pub fn h_offset(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.m);
        6 * self.m + 3 * (k - 1)
    }

    pub fn z_offset(&self, j: usize) -> usize {
        debug_assert!(j >= 1 && j <= self.n);
        9 * self.m + 9 * (j - 1)
    }
}

impl std::fmt::Display for TruncationOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "M={},N={}", self.m, self.n)
    }
}

/// Inertial gravity acceleration lifted by the h-chain.
pub fn gravity_vector(p: &QuadParams) -> Vec3 {
    Vec3::new(0.0, 0.0, -p.gravity)
}

/// Rescales `ω` by `√2 · max_norm` so that any rate with `‖ω‖ ≤ max_norm`
/// lands inside the ball `‖ω'‖ ≤ 1/√2` where the chains decay.
pub fn normalize_rate(omega: &Vec3, max_norm: f64) -> Vec3 {
    if max_norm <= 0.0 {
        return *omega;
    }
    omega / (std::f64::consts::SQRT_2 * max_norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    data: DVector<f64>,
    order: TruncationOrder,
}

impl LiftedState {
    pub fn from_vector(data: DVector<f64>, order: TruncationOrder) -> Result<Self> {
        if data.len() != order.dim() {
            return Err(Error::Dimension { expected: order.dim(), got: data.len() });
        }
        Ok(LiftedState { data, order })
    }

    pub fn zeros(order: TruncationOrder) -> Self {
        LiftedState { data: DVector::zeros(order.dim()), order }
    }

    pub fn order(&self) -> TruncationOrder {
        self.order
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn p(&self, k: usize) -> Vec3 {
        self.vec3_at(self.order.p_offset(k))
    }

    pub fn y(&self, k: usize) -> Vec3 {
        self.vec3_at(self.order.y_offset(k))
    }

    pub fn h(&self, k: usize) -> Vec3 {
        self.vec3_at(self.order.h_offset(k))
    }

    /// `z_j` reshaped back to a 3x3 matrix.
    pub fn z(&self, j: usize) -> Mat3 {
        let o = self.order.z_offset(j);
        unvec9(&self.data.as_slice()[o..o + 9])
    }

    fn vec3_at(&self, o: usize) -> Vec3 {
        Vec3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    /// The quantities the input matrix depends on, read directly from the
    /// lifted vector without projecting `z_1` onto SO(3). Used when the lifted
    /// model is propagated on its own and `z_1` drifts off the manifold.
    pub fn heads(&self) -> ChainHeads {
        let r = self.z(1);
        let omega_hat = if self.order.n() >= 2 {
            let raw = r.try_inverse().unwrap_or_else(|| r.transpose()) * self.z(2);
            (raw - raw.transpose()) * 0.5
        } else {
            Mat3::zeros()
        };
        ChainHeads { rotation: r, omega_hat, h1: self.h(1), y1: self.y(1), p1: self.p(1) }
    }

    /// Inertial position `R p_1`.
    pub fn position(&self) -> Vec3 {
        self.z(1) * self.p(1)
    }

    /// Inertial velocity `R y_1`.
    pub fn velocity(&self) -> Vec3 {
        self.z(1) * self.y(1)
    }
}

/// Leading chain blocks plus attitude, enough to evaluate the input matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainHeads {
    pub rotation: Mat3,
    pub omega_hat: Mat3,
    pub h1: Vec3,
    pub y1: Vec3,
    pub p1: Vec3,
}

impl ChainHeads {
    pub fn of_state(s: &QuadState, p: &QuadParams) -> Self {
        let rt = s.rotation.matrix().transpose();
        ChainHeads {
            rotation: *s.rotation.matrix(),
            omega_hat: hat(&s.omega),
            h1: rt * gravity_vector(p),
            y1: rt * s.velocity,
            p1: rt * s.position,
        }
    }
}

/// `[X^0, X^1, …, X^n]`.
pub(crate) fn powers(x: &Mat3, n: usize) -> Vec<Mat3> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(Mat3::identity());
    for i in 1..=n {
        out.push(out[i - 1] * x);
    }
    out
}

/// `Σ_{i=1}^{k} T^{i-1} hat(T^{k-i} a)`: the moment sensitivity of chain
/// block `k + 1`, before right-multiplication by `J⁻¹`. `tp` holds powers of
/// `T = Ωᵀ` up to at least `k − 1`.
pub(crate) fn chain_moment_sum(tp: &[Mat3], a: &Vec3, k: usize) -> Mat3 {
    let mut acc = Mat3::zeros();
    for i in 1..=k {
        acc += tp[i - 1] * hat(&(tp[k - i] * a));
    }
    acc
}

/// `R Σ_{i=1}^{k} Ω^{i-1} hat(c) Ω^{k-i}`: one column source of the z-chain
/// moment block. `op` holds powers of `Ω` up to at least `k − 1`.
pub(crate) fn attitude_moment_sum(r: &Mat3, op: &[Mat3], c: &Vec3, k: usize) -> Mat3 {
    let ch = hat(c);
    let mut acc = Mat3::zeros();
    for i in 1..=k {
        acc += op[i - 1] * ch * op[k - i];
    }
    r * acc
}

pub fn lift(s: &QuadState, p: &QuadParams, ord: TruncationOrder) -> LiftedState {
    let mut x = LiftedState::zeros(ord);
    let heads = ChainHeads::of_state(s, p);
    let t = heads.omega_hat.transpose();
    let (mut pk, mut yk, mut hk) = (heads.p1, heads.y1, heads.h1);
    for k in 1..=ord.m() {
        x.data.fixed_rows_mut::<3>(ord.p_offset(k)).copy_from(&pk);
        x.data.fixed_rows_mut::<3>(ord.y_offset(k)).copy_from(&yk);
        x.data.fixed_rows_mut::<3>(ord.h_offset(k)).copy_from(&hk);
        pk = t * pk;
        yk = t * yk;
        hk = t * hk;
    }
    let mut zj = heads.rotation;
    for j in 1..=ord.n() {
        x.data.fixed_rows_mut::<9>(ord.z_offset(j)).copy_from(&vec9(&zj));
        zj *= heads.omega_hat;
    }
    x
}

/// Recovers the plant state from a lifted vector.
pub fn unlift(x: &LiftedState) -> Result<QuadState> {
    let ord = x.order();
    if ord.n() < 2 {
        return Err(Error::NeedsN2);
    }
    let raw = x.z(1);
    Rotation::with_tolerance(raw, UNLIFT_ROTATION_TOL)?;
    let rotation = Rotation::project(&raw);
    let r = rotation.matrix();
    let omega = vee(&(r.transpose() * x.z(2)))?;
    Ok(QuadState { position: r * x.p(1), velocity: r * x.y(1), rotation, omega })
}

/// Lifts a reference tuple; identical to [`lift`] on the corresponding state.
pub fn lift_reference(
    x_ref: &Vec3,
    v_ref: &Vec3,
    r_ref: &Rotation,
    omega_ref: &Vec3,
    p: &QuadParams,
    ord: TruncationOrder,
) -> LiftedState {
    let s = QuadState { position: *x_ref, velocity: *v_ref, rotation: *r_ref, omega: *omega_ref };
    lift(&s, p, ord)
}

/// The chain blocks dropped by truncation and how fast they move.
///
/// `h_next`, `y_next`, `p_next` are `h_{M+1}`, `y_{M+1}`, `p_{M+1}` and
/// `z_next` is `z_{N+1}`. These are exactly the terms missing from the
/// terminal block-rows of the lifted model. The `*_rate` fields are the
/// norms of their time derivatives under the given control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub m: usize,
    pub n: usize,
    pub h_next: [f64; 3],
    pub y_next: [f64; 3],
    pub p_next: [f64; 3],
    pub z_next: [f64; 9],
    pub h_norm: f64,
    pub y_norm: f64,
    pub p_norm: f64,
    pub z_norm: f64,
    pub h_rate: f64,
    pub y_rate: f64,
    pub p_rate: f64,
    pub z_rate: f64,
}

impl ResidualReport {
    /// Residual stacked in lifted-row order, zero outside the terminal blocks.
    pub fn as_lifted(&self, ord: TruncationOrder) -> DVector<f64> {
        let mut out = DVector::zeros(ord.dim());
        let (m, n) = (ord.m(), ord.n());
        out.fixed_rows_mut::<3>(ord.p_offset(m)).copy_from_slice(&self.p_next);
        out.fixed_rows_mut::<3>(ord.y_offset(m)).copy_from_slice(&self.y_next);
        out.fixed_rows_mut::<3>(ord.h_offset(m)).copy_from_slice(&self.h_next);
        out.fixed_rows_mut::<9>(ord.z_offset(n)).copy_from_slice(&self.z_next);
        out
    }
}

pub fn residual_blocks(s: &QuadState, ubar: &PseudoControl, p: &QuadParams, ord: TruncationOrder) -> Result<ResidualReport> {
    let j_inv = p.inertia_inverse()?;
    let heads = ChainHeads::of_state(s, p);
    let (m, n) = (ord.m(), ord.n());
    let omega_hat = heads.omega_hat;
    let t = omega_hat.transpose();
    let tp = powers(&t, m + 1);
    let op = powers(&omega_hat, n + 1);
    let r = heads.rotation;

    let h_next = tp[m] * heads.h1;
    let y_next = tp[m] * heads.y1;
    let p_next = tp[m] * heads.p1;
    let z_next = vec9(&(r * op[n]));

    // Derivatives of the dropped blocks, i.e. block index M+1 (resp. N+1).
    let mbar = j_inv * ubar.moment_bar;
    let e3f = Vec3::new(0.0, 0.0, ubar.thrust / p.mass);
    let h_dot = tp[m + 1] * heads.h1 + chain_moment_sum(&tp, &heads.h1, m) * mbar;
    let y_dot = tp[m + 1] * heads.y1 + h_next + tp[m] * e3f + chain_moment_sum(&tp, &heads.y1, m) * mbar;
    let p_dot = tp[m + 1] * heads.p1 + y_next + chain_moment_sum(&tp, &heads.p1, m) * mbar;
    let mut z_dot = r * op[n + 1];
    for c in 0..3 {
        z_dot += attitude_moment_sum(&r, &op, &j_inv.column(c).into_owned(), n) * ubar.moment_bar[c];
    }

    Ok(ResidualReport {
        m,
        n,
        h_next: h_next.into(),
        y_next: y_next.into(),
        p_next: p_next.into(),
        z_next: z_next.into(),
        h_norm: h_next.norm(),
        y_norm: y_next.norm(),
        p_norm: p_next.norm(),
        z_norm: z_next.norm(),
        h_rate: h_dot.norm(),
        y_rate: y_dot.norm(),
        p_rate: p_dot.norm(),
        z_rate: z_dot.norm(),
    })
}
