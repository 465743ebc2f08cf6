#![allow(dead_code)]

pub mod kkt;

use koopman_quad::lift::lift;
use koopman_quad::se3::{pseudo_to_body, BodyControl, Integrator};
use koopman_quad::{PseudoControl, QuadParams, QuadState, Rotation, TruncationOrder, Vec3};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample from the ball of radius `r`.
pub fn in_ball(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            return v * r;
        }
    }
}

/// A random nonzero vector of exactly norm `r`.
pub fn on_sphere(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    loop {
        let v = in_ball(rng, 1.0);
        if v.norm() > 1e-3 {
            return v.normalize() * r;
        }
    }
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    Rotation::exp(&in_ball(rng, std::f64::consts::PI))
}

pub fn random_state(rng: &mut ChaCha8Rng, x_max: f64, v_max: f64, w_max: f64) -> QuadState {
    QuadState {
        position: in_ball(rng, x_max),
        velocity: in_ball(rng, v_max),
        rotation: random_rotation(rng),
        omega: in_ball(rng, w_max),
    }
}

/// State bounded away from the degenerate point `x = v = ω = 0`.
pub fn nondegenerate_state(rng: &mut ChaCha8Rng) -> QuadState {
    let (rx, rv, rw) = (rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0), rng.gen_range(0.1..0.7));
    QuadState {
        position: on_sphere(rng, rx),
        velocity: on_sphere(rng, rv),
        rotation: random_rotation(rng),
        omega: on_sphere(rng, rw),
    }
}

pub fn random_control(rng: &mut ChaCha8Rng, max_norm: f64) -> PseudoControl {
    let mut u = [0.0; 4];
    for c in u.iter_mut() {
        *c = rng.gen_range(-1.0..1.0);
    }
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = rng.gen_range(0.0..max_norm) / n;
    PseudoControl::from_slice(&u.map(|x| x * scale))
}

fn flow(s: &QuadState, u: &BodyControl, p: &QuadParams, h: f64) -> QuadState {
    // One RK4 step; `h` may be negative.
    let integ = Integrator { dt: h, guard: 1e12 };
    integ.step(s, u, p, &p.inertia_inverse().unwrap()).unwrap()
}

/// Time derivative of `lift(φ_t(s))` at `t = 0` by a five-point central
/// stencil along the nonlinear flow with the body control held fixed.
pub fn fd_lift_derivative(s: &QuadState, ubar: &PseudoControl, p: &QuadParams, ord: TruncationOrder) -> DVector<f64> {
    let u = pseudo_to_body(s, ubar, p);
    let j_inv = p.inertia_inverse().unwrap();
    let wdot = (j_inv * ubar.moment_bar).norm();
    let speed = 1.0 + s.omega.norm() + wdot + ubar.thrust.abs() / p.mass + s.velocity.norm();
    let h = 2e-3 / speed;
    let at = |t: f64| lift(&flow(s, &u, p, t), p, ord).into_vector();
    (at(-2.0 * h) - at(-h) * 8.0 + at(h) * 8.0 - at(2.0 * h)) / (12.0 * h)
}
