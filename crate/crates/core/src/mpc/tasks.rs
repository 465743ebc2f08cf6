//! Reference trajectories for the tracking experiments.

use serde::{Deserialize, Serialize};

use super::ocp::ReferenceWindow;
use crate::error::{Error, Result};
use crate::lift::lift;
use crate::models::LtiSystem;
use crate::se3::{PseudoControl, QuadState, Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Helix,
    Torus,
    Hover,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Helix => "helix",
            TaskKind::Torus => "torus",
            TaskKind::Hover => "hover",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "helix" => Ok(TaskKind::Helix),
            "torus" | "torus-knot" | "torus_knot" => Ok(TaskKind::Torus),
            "hover" => Ok(TaskKind::Hover),
            other => Err(Error::InvalidConfig(format!("unknown task '{other}'"))),
        }
    }
}

pub const HOVER_TARGET: [f64; 3] = [1.0, 1.3, 2.0];

/// A reference trajectory with level attitude and zero body rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingTask {
    pub kind: TaskKind,
    pub duration: f64,
    pub initial: QuadState,
}

impl TrackingTask {
    pub fn new(kind: TaskKind, duration: f64) -> Self {
        let initial = match kind {
            TaskKind::Hover => QuadState::at_rest(Vec3::zeros()),
            _ => {
                let (x, v) = reference_position_velocity(kind, 0.0);
                QuadState { position: x, velocity: v, rotation: Rotation::identity(), omega: Vec3::zeros() }
            }
        };
        TrackingTask { kind, duration, initial }
    }

    pub fn helix(duration: f64) -> Self {
        Self::new(TaskKind::Helix, duration)
    }

    pub fn torus(duration: f64) -> Self {
        Self::new(TaskKind::Torus, duration)
    }

    pub fn hover(duration: f64) -> Self {
        Self::new(TaskKind::Hover, duration)
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Reference state at `t`, held at its final value past the end.
    pub fn reference(&self, t: f64) -> QuadState {
        let (x, v) = reference_position_velocity(self.kind, t.min(self.duration));
        QuadState { position: x, velocity: v, rotation: Rotation::identity(), omega: Vec3::zeros() }
    }
}

/// `x_ref(t)` and its analytic derivative.
pub fn reference_position_velocity(kind: TaskKind, t: f64) -> (Vec3, Vec3) {
    match kind {
        TaskKind::Helix => (
            Vec3::new(t / 20.0, (t / 6.0).sin(), 2.0 * (t / 6.0).cos()),
            Vec3::new(1.0 / 20.0, (t / 6.0).cos() / 6.0, -(t / 6.0).sin() / 3.0),
        ),
        TaskKind::Torus => (
            Vec3::new(
                (0.1 * t).sin() + 2.0 * (0.2 * t).sin(),
                (0.1 * t).cos() - 2.0 * (0.2 * t).cos(),
                -(0.3 * t).sin(),
            ),
            Vec3::new(
                0.1 * (0.1 * t).cos() + 0.4 * (0.2 * t).cos(),
                -0.1 * (0.1 * t).sin() + 0.4 * (0.2 * t).sin(),
                -0.3 * (0.3 * t).cos(),
            ),
        ),
        TaskKind::Hover => (Vec3::from(HOVER_TARGET), Vec3::zeros()),
    }
}

/// Lifted references at `t + iΔt`, states for `i = 1..H` and controls for
/// `i = 0..H−1`. Control references are the lifted hover feedforward.
pub fn build_reference_window(task: &TrackingTask, t: f64, h: usize, dt: f64, sys: &LtiSystem) -> Result<ReferenceWindow> {
    let p = sys.params();
    let ord = sys.order();
    let hover = PseudoControl::hover(p);
    let mut states = Vec::with_capacity(h);
    let mut controls = Vec::with_capacity(h);
    for i in 0..h {
        let s_now = task.reference(t + i as f64 * dt);
        controls.push(sys.map_control_bounds(&s_now, &hover)?);
        let s_next = task.reference(t + (i + 1) as f64 * dt);
        states.push(lift(&s_next, p, ord).into_vector());
    }
    Ok(ReferenceWindow { states, controls })
}
