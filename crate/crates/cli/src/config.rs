//! Experiment configuration file. Every field has a default, so an empty or
//! missing file reproduces the standard setup.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use koopman_quad::analysis::ApproxConfig;
use koopman_quad::mpc::{ControlBox, MpcConfig, QpSettings};
use koopman_quad::se3::Integrator;
use koopman_quad::{Mat3, QuadParams, QuadState, Rotation, TruncationOrder, Vec3};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub quadrotor: QuadSection,
    pub model: ModelSection,
    pub mpc: MpcSection,
    pub simulation: SimulationSection,
    pub track: TrackSection,
    pub approx: ApproxSection,
    pub analysis: AnalysisSection,
    pub initial: InitialSection,
}

/// Mass (kg), diagonal inertia (kg·m²), gravity magnitude (m/s²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadSection {
    pub mass: f64,
    pub inertia: [f64; 3],
    pub gravity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Sampling interval (s).
    pub dt: f64,
    pub position_weight: f64,
    pub attitude_weight: f64,
    pub control_weight: f64,
    pub bounds: bool,
    /// Upper thrust bound as a multiple of `mg`.
    pub thrust_factor: f64,
    /// Bound (N·m) on each component of `M̄ = M − ω×Jω`.
    pub moment_bound: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Fine integration step of the plant (s).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSection {
    pub task: Option<String>,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxSection {
    pub orders: Vec<[usize; 2]>,
    pub duration: f64,
    pub step: f64,
    pub hold: f64,
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub omega_norm: f64,
    pub samples: usize,
    pub chain_length: usize,
    pub gramian_duration: f64,
}

/// State used by `export-model` and as the start of the Gramian trajectory.
/// `attitude` is an axis-angle vector (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub attitude: [f64; 3],
    pub omega: [f64; 3],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            quadrotor: QuadSection::default(),
            model: ModelSection::default(),
            mpc: MpcSection::default(),
            simulation: SimulationSection::default(),
            track: TrackSection::default(),
            approx: ApproxSection::default(),
            analysis: AnalysisSection::default(),
            initial: InitialSection::default(),
        }
    }
}

impl Default for QuadSection {
    fn default() -> Self {
        let p = QuadParams::default();
        QuadSection {
            mass: p.mass,
            inertia: [p.inertia[(0, 0)], p.inertia[(1, 1)], p.inertia[(2, 2)]],
            gravity: p.gravity,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { m: 3, n: 3 }
    }
}

impl Default for MpcSection {
    fn default() -> Self {
        let qp = QpSettings::default();
        MpcSection {
            horizon: 0.5,
            dt: 0.05,
            position_weight: 1000.0,
            attitude_weight: 1.0,
            control_weight: 0.05,
            bounds: true,
            thrust_factor: 2.0,
            moment_bound: 0.05,
            tolerance: qp.tolerance,
            max_iterations: qp.max_iterations,
        }
    }
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { step: Integrator::default().dt }
    }
}

impl Default for TrackSection {
    fn default() -> Self {
        TrackSection { task: None, duration: 60.0 }
    }
}

impl Default for ApproxSection {
    fn default() -> Self {
        let a = ApproxConfig::default();
        ApproxSection {
            orders: a.orders.iter().map(|&(m, n)| [m, n]).collect(),
            duration: a.duration,
            step: a.dt,
            hold: a.hold,
            record_every: a.record_every,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { omega_norm: 0.5, samples: 100, chain_length: 10, gramian_duration: 2.0 }
    }
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection { position: [0.0; 3], velocity: [0.0; 3], attitude: [0.0; 3], omega: [0.0; 3] }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file. Syntax and type errors carry the line and column.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        match toml::from_str(text) {
            Ok(cfg) => Ok(cfg),
            Err(e) => {
                let location = e.span().map(|span| {
                    let before = &text[..span.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    let src = text.lines().nth(line - 1).unwrap_or("");
                    format!("line {line}, column {col}: `{}`", src.trim())
                });
                match location {
                    Some(loc) => bail!("{loc}: {}", e.message()),
                    None => bail!("{}", e.message()),
                }
            }
        }
    }

    pub fn params(&self) -> QuadParams {
        let q = &self.quadrotor;
        QuadParams { mass: q.mass, inertia: Mat3::from_diagonal(&Vec3::from(q.inertia)), gravity: q.gravity }
    }

    pub fn order(&self) -> Result<TruncationOrder> {
        Ok(TruncationOrder::new(self.model.m, self.model.n)?)
    }

    pub fn integrator(&self) -> Result<Integrator> {
        Ok(Integrator::new(self.simulation.step)?)
    }

    pub fn initial_state(&self) -> QuadState {
        let i = &self.initial;
        QuadState {
            position: Vec3::from(i.position),
            velocity: Vec3::from(i.velocity),
            rotation: Rotation::exp(&Vec3::from(i.attitude)),
            omega: Vec3::from(i.omega),
        }
    }

    /// Weights follow the default pattern scaled by the configured values.
    pub fn mpc_config(&self, ord: TruncationOrder) -> Result<MpcConfig> {
        let s = &self.mpc;
        let p = self.params();
        let mut cfg = MpcConfig::with_params(ord, &p);
        cfg.horizon = s.horizon;
        cfg.dt = s.dt;
        let q = cfg.q.diagonal().map(|w| if w > 1.0 { s.position_weight } else if w > 0.0 { s.attitude_weight } else { 0.0 });
        cfg.q = DMatrix::from_diagonal(&q);
        cfg.r = DMatrix::identity(ord.virtual_dim(), ord.virtual_dim()) * s.control_weight;
        cfg.control_box = s.bounds.then(|| ControlBox::symmetric(p.hover_thrust(), s.thrust_factor, s.moment_bound));
        cfg.qp.tolerance = s.tolerance;
        cfg.qp.max_iterations = s.max_iterations;
        cfg.validate(ord)?;
        Ok(cfg)
    }

    pub fn approx_config(&self) -> ApproxConfig {
        let a = &self.approx;
        ApproxConfig {
            orders: a.orders.iter().map(|o| (o[0], o[1])).collect(),
            duration: a.duration,
            seed: self.seed,
            dt: a.step,
            hold: a.hold,
            record_every: a.record_every,
        }
    }

    /// Checks everything a command may touch before any run starts.
    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        let ord = self.order()?;
        let mpc = self.mpc_config(ord)?;
        let integ = self.integrator()?;
        let substeps = mpc.dt / integ.dt;
        if (substeps - substeps.round()).abs() > 1e-9 * substeps {
            bail!("mpc.dt {} must be a multiple of simulation.step {}", mpc.dt, integ.dt);
        }
        if !(self.track.duration > 0.0) {
            bail!("track.duration must be positive");
        }
        if self.approx.orders.is_empty() {
            bail!("approx.orders is empty");
        }
        for o in &self.approx.orders {
            TruncationOrder::new(o[0], o[1]).with_context(|| format!("approx order {o:?}"))?;
        }
        if !(self.approx.duration > 0.0 && self.approx.step > 0.0 && self.approx.hold > 0.0) || self.approx.record_every == 0 {
            bail!("approx duration, step, hold and record_every must be positive");
        }
        let a = &self.analysis;
        if !(a.omega_norm >= 0.0) || a.samples == 0 || a.chain_length < 2 || !(a.gramian_duration > 0.0) {
            bail!("analysis needs omega_norm >= 0, samples >= 1, chain_length >= 2, gramian_duration > 0");
        }
        Ok(())
    }
}
