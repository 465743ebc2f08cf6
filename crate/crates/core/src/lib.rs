//! Analytic Koopman lifting of quadrotor dynamics on SE(3).
//!
//! The crate is organised bottom-up:
//!
//! * [`se3`] is the nonlinear plant and its RK4 integrator.
//! * [`lift`] maps plant states onto the observable chains and back.
//! * [`models`] builds the lifted LPV system, its constant-input LTI
//!   counterpart, and the virtual-control packing and recovery maps.
//! * [`analysis`] holds controllability checks and the truncation-error study.
//! * [`mpc`] discretises the LTI model, solves the tracking QP and closes the
//!   loop around the nonlinear plant.

pub mod analysis;
pub mod error;
pub mod lift;
pub mod linalg;
pub mod models;
pub mod mpc;
pub mod se3;

pub use error::{Error, Result};
pub use lift::{LiftedState, TruncationOrder};
pub use models::{LpvSystem, LtiSystem};
pub use se3::{BodyControl, PseudoControl, QuadParams, QuadState, Rotation, Vec3, Mat3};
