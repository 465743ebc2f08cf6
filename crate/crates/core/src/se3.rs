//! Rigid-body quadrotor dynamics on SE(3).
//!
//! The plant is the standard geometric model: position and velocity in the
//! inertial frame, a body-to-inertial rotation matrix, and body angular
//! velocity. Gravity is stored as a positive magnitude and applied along
//! `-e3` in the dynamics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when validating rotation matrices and skew-symmetry.
pub const ROTATION_TOL: f64 = 1e-9;

/// Skew-symmetric matrix such that `hat(v) * q == v.cross(q)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Fails if `s` is not skew-symmetric within [`ROTATION_TOL`].
pub fn vee(s: &Mat3) -> Result<Vec3> {
    let asym = (s + s.transpose()).norm();
    if asym > ROTATION_TOL {
        return Err(Error::NonSkew(asym));
    }
    Ok(Vec3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]))
}

/// A 3x3 matrix known to lie on SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `RᵀR = I` and `det R = 1` within `tol`.
    pub fn new(m: Mat3) -> Result<Self> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    pub fn with_tolerance(m: Mat3, tol: f64) -> Result<Self> {
        let orth = orthonormality_error(&m);
        let det = (m.determinant() - 1.0).abs();
        if !m.iter().all(|x| x.is_finite()) || orth > tol || det > tol {
            return Err(Error::InvalidRotation { orth, det });
        }
        Ok(Rotation(m))
    }

    /// Nearest rotation in the Frobenius sense (polar factor of the SVD).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Rotation(r)
    }

    /// `exp(hat(axis_angle))` by the Rodrigues formula.
    pub fn exp(axis_angle: &Vec3) -> Self {
        let theta = axis_angle.norm();
        let k = hat(axis_angle);
        if theta < 1e-12 {
            return Rotation(Mat3::identity() + k);
        }
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Rotation(Mat3::identity() + k * a + k * k * b)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Chordal attitude distance `trace(I − R1ᵀR2)/2`, in `[0, 2]` for rotations.
pub fn attitude_error(r1: &Mat3, r2: &Mat3) -> f64 {
    (Mat3::identity() - r1.transpose() * r2).trace() / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    /// Inertial position of the centre of mass (m).
    pub position: Vec3,
    /// Inertial velocity (m/s).
    pub velocity: Vec3,
    /// Body-to-inertial rotation.
    pub rotation: Rotation,
    /// Body angular velocity (rad/s).
    pub omega: Vec3,
}

impl QuadState {
    pub fn at_rest(position: Vec3) -> Self {
        QuadState {
            position,
            velocity: Vec3::zeros(),
            rotation: Rotation::identity(),
            omega: Vec3::zeros(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.position
            .amax()
            .max(self.velocity.amax())
            .max(self.omega.amax())
            .max(self.rotation.matrix().amax())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
            && self.rotation.matrix().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    /// Mass (kg).
    pub mass: f64,
    /// Body inertia (kg·m²).
    pub inertia: Mat3,
    /// Gravitational acceleration magnitude (m/s²), positive.
    pub gravity: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams {
            mass: 0.904,
            inertia: Mat3::from_diagonal(&Vec3::new(0.0023, 0.0026, 0.0032)),
            gravity: 9.81,
        }
    }
}

impl QuadParams {
    /// Checks `m > 0`, `g > 0` and that `J` is symmetric positive definite.
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidParams(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "gravity magnitude must be positive, got {}",
                self.gravity
            )));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12 * self.inertia.norm().max(1.0) {
            return Err(Error::InvalidParams("inertia must be symmetric".into()));
        }
        if self.inertia.cholesky().is_none() {
            return Err(Error::SingularInertia);
        }
        Ok(())
    }

    /// `J⁻¹`, or [`Error::SingularInertia`] if `J` cannot be inverted.
    pub fn inertia_inverse(&self) -> Result<Mat3> {
        let det = self.inertia.determinant();
        if !det.is_finite() || det.abs() <= 1e-14 * self.inertia.norm().powi(3).max(f64::MIN_POSITIVE) {
            return Err(Error::SingularInertia);
        }
        self.inertia.try_inverse().ok_or(Error::SingularInertia)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Physical inputs: total thrust and body moment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyControl {
    pub thrust: f64,
    pub moment: Vec3,
}

/// Control-affine input `[f, M̄]` with `M̄ = M − ω×Jω`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoControl {
    pub thrust: f64,
    pub moment_bar: Vec3,
}

impl PseudoControl {
    pub fn new(thrust: f64, moment_bar: Vec3) -> Self {
        PseudoControl { thrust, moment_bar }
    }

    pub fn hover(p: &QuadParams) -> Self {
        PseudoControl::new(p.hover_thrust(), Vec3::zeros())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.thrust, self.moment_bar.x, self.moment_bar.y, self.moment_bar.z]
    }

    pub fn from_slice(u: &[f64]) -> Self {
        PseudoControl::new(u[0], Vec3::new(u[1], u[2], u[3]))
    }

    pub fn norm(&self) -> f64 {
        (self.thrust * self.thrust + self.moment_bar.norm_squared()).sqrt()
    }
}

pub fn pseudo_to_body(s: &QuadState, ubar: &PseudoControl, p: &QuadParams) -> BodyControl {
    BodyControl {
        thrust: ubar.thrust,
        moment: ubar.moment_bar + s.omega.cross(&(p.inertia * s.omega)),
    }
}

pub fn body_to_pseudo(s: &QuadState, u: &BodyControl, p: &QuadParams) -> PseudoControl {
    PseudoControl {
        thrust: u.thrust,
        moment_bar: u.moment - s.omega.cross(&(p.inertia * s.omega)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadStateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: Mat3,
    pub omega: Vec3,
}

impl QuadStateDerivative {
    pub fn norm(&self) -> f64 {
        (self.position.norm_squared()
            + self.velocity.norm_squared()
            + self.rotation.norm_squared()
            + self.omega.norm_squared())
        .sqrt()
    }
}

/// Right-hand side of the rigid-body equations of motion.
pub fn quad_derivative(s: &QuadState, u: &BodyControl, p: &QuadParams, j_inv: &Mat3) -> QuadStateDerivative {
    let r = s.rotation.matrix();
    let e3 = Vec3::z();
    let moment_bar = u.moment - s.omega.cross(&(p.inertia * s.omega));
    QuadStateDerivative {
        position: s.velocity,
        velocity: -p.gravity * e3 + (u.thrust / p.mass) * (r * e3),
        rotation: r * hat(&s.omega),
        omega: j_inv * moment_bar,
    }
}

/// Raw (unprojected) state used inside Runge–Kutta stages.
#[derive(Debug, Clone, Copy)]
struct RawState {
    x: Vec3,
    v: Vec3,
    r: Mat3,
    w: Vec3,
}

impl RawState {
    fn of(s: &QuadState) -> Self {
        RawState { x: s.position, v: s.velocity, r: *s.rotation.matrix(), w: s.omega }
    }

    fn advance(&self, d: &QuadStateDerivative, h: f64) -> Self {
        RawState {
            x: self.x + d.position * h,
            v: self.v + d.velocity * h,
            r: self.r + d.rotation * h,
            w: self.w + d.omega * h,
        }
    }

    fn as_state(&self) -> QuadState {
        // Stage states are only fed back into the vector field, which never
        // requires orthogonality, so skip the check here.
        QuadState { position: self.x, velocity: self.v, rotation: Rotation(self.r), omega: self.w }
    }
}

/// Fixed-step RK4 propagator for the plant.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub dt: f64,
    /// Any state component larger than this aborts with `NumericalBlowup`.
    pub guard: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator { dt: 1e-3, guard: 1e6 }
    }
}

impl Integrator {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("integration step must be positive, got {dt}")));
        }
        Ok(Integrator { dt, guard: 1e6 })
    }

    /// One RK4 step of length `dt` with `u` held constant, followed by a
    /// polar re-projection of the rotation.
    pub fn step(&self, s: &QuadState, u: &BodyControl, p: &QuadParams, j_inv: &Mat3) -> Result<QuadState> {
        let h = self.dt;
        let s0 = RawState::of(s);
        let k1 = quad_derivative(s, u, p, j_inv);
        let k2 = quad_derivative(&s0.advance(&k1, h / 2.0).as_state(), u, p, j_inv);
        let k3 = quad_derivative(&s0.advance(&k2, h / 2.0).as_state(), u, p, j_inv);
        let k4 = quad_derivative(&s0.advance(&k3, h).as_state(), u, p, j_inv);
        let w = h / 6.0;
        let next = RawState {
            x: s0.x + (k1.position + 2.0 * k2.position + 2.0 * k3.position + k4.position) * w,
            v: s0.v + (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity) * w,
            r: s0.r + (k1.rotation + 2.0 * k2.rotation + 2.0 * k3.rotation + k4.rotation) * w,
            w: s0.w + (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega) * w,
        };
        let out = QuadState {
            position: next.x,
            velocity: next.v,
            rotation: Rotation::project(&next.r),
            omega: next.w,
        };
        if !out.is_finite() || out.max_abs() > self.guard {
            return Err(Error::NumericalBlowup { t: f64::NAN, magnitude: out.max_abs() });
        }
        Ok(out)
    }

    /// Integrates `steps` steps under a time-varying schedule. The schedule is
    /// sampled at the start of each step. Returns `steps + 1` samples with
    /// timestamps `i * dt`.
    pub fn integrate<F>(&self, s0: &QuadState, mut schedule: F, steps: usize, p: &QuadParams) -> Result<Vec<(f64, QuadState)>>
    where
        F: FnMut(f64, &QuadState) -> BodyControl,
    {
        let j_inv = p.inertia_inverse()?;
        let mut out = Vec::with_capacity(steps + 1);
        let mut s = *s0;
        out.push((0.0, s));
        for i in 0..steps {
            let t = i as f64 * self.dt;
            let u = schedule(t, &s);
            s = self.step(&s, &u, p, &j_inv).map_err(|e| e.at_time(t + self.dt))?;
            out.push(((i + 1) as f64 * self.dt, s));
        }
        Ok(out)
    }
}
