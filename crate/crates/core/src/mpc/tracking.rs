//! Receding-horizon control of the nonlinear plant.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::discretize::discretize;
use super::ocp::{Ocp, OcpSolution};
use super::qp::QpStatus;
use super::tasks::{build_reference_window, TrackingTask};
use super::MpcConfig;
use crate::error::{Error, Result};
use crate::lift::{lift, TruncationOrder};
use crate::models::LtiSystem;
use crate::se3::{attitude_error, pseudo_to_body, BodyControl, Integrator, PseudoControl, QuadParams, QuadState};

/// Solves the lifted OCP at a plant state and maps the first virtual control
/// back to `ū`.
#[derive(Debug, Clone)]
pub struct Controller {
    sys: LtiSystem,
    ocp: Ocp,
    cfg: MpcConfig,
    h: usize,
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub ubar: PseudoControl,
    pub solution: OcpSolution,
    pub solve_ms: f64,
}

impl Controller {
    pub fn new(params: QuadParams, ord: TruncationOrder, cfg: MpcConfig) -> Result<Self> {
        let h = cfg.validate(ord)?;
        let sys = LtiSystem::new(params, ord)?;
        let disc = discretize(&sys, cfg.dt)?;
        let ocp = Ocp::new(&disc, &cfg)?;
        Ok(Controller { sys, ocp, cfg, h })
    }

    pub fn system(&self) -> &LtiSystem {
        &self.sys
    }

    pub fn ocp(&self) -> &Ocp {
        &self.ocp
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn control(&mut self, s: &QuadState, t: f64, task: &TrackingTask) -> Result<ControlOutput> {
        let refs = build_reference_window(task, t, self.h, self.cfg.dt, &self.sys)?;
        let x0 = lift(s, self.sys.params(), self.sys.order()).into_vector();
        let bounds = match &self.cfg.control_box {
            Some(b) => Some(self.virtual_box(s, &b.lower, &b.upper)?),
            None => None,
        };
        let start = Instant::now();
        let solution = self.ocp.solve(&x0, &refs, bounds.as_ref().map(|(l, u)| (l, u)))?;
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        let mut ubar = self.sys.recover_control(s, &solution.controls[0])?;
        if let Some(b) = &self.cfg.control_box {
            ubar = b.saturate(&ubar);
        }
        Ok(ControlOutput { ubar, solution, solve_ms })
    }

    /// Interval image of a `ū` box under `ū ↦ B̄†𝓑(s)ū`.
    pub fn virtual_box(&self, s: &QuadState, lower: &[f64; 4], upper: &[f64; 4]) -> Result<(DVector<f64>, DVector<f64>)> {
        let map = self.sys.bound_map(s)?;
        let n = map.nrows();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for r in 0..n {
            for c in 0..4 {
                let (a, b) = (map[(r, c)] * lower[c], map[(r, c)] * upper[c]);
                lo[r] += a.min(b);
                hi[r] += a.max(b);
            }
        }
        Ok((lo, hi))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: QuadState,
    pub control: BodyControl,
    pub ubar: PseudoControl,
    pub reference: QuadState,
    pub qp_iterations: usize,
    pub qp_ms: f64,
    pub qp_solved: bool,
    pub err_pos: f64,
    pub err_vel: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopLog {
    pub task: String,
    pub m: usize,
    pub n: usize,
    pub dt: f64,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub task: String,
    pub m: usize,
    pub n: usize,
    pub steps: usize,
    pub duration: f64,
    pub mean_err_pos: f64,
    pub max_err_pos: f64,
    pub final_err_pos: f64,
    /// Mean of `‖x − x_ref‖ / ‖x_ref‖`.
    pub mean_rel_err_pos: f64,
    pub mean_err_vel: f64,
    pub max_err_vel: f64,
    pub mean_psi: f64,
    pub max_psi: f64,
    pub mean_qp_ms: f64,
    pub max_qp_ms: f64,
    pub mean_qp_iters: f64,
    pub unsolved_steps: usize,
}

pub const CSV_HEADER: &str = "t,x1,x2,x3,v1,v2,v3,r11,r12,r13,r21,r22,r23,r31,r32,r33,w1,w2,w3,f,M1,M2,M3,psi,err_pos,err_vel,qp_ms,qp_iters";

impl ClosedLoopLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            let s = &r.state;
            let m = s.rotation.matrix();
            let mut fields: Vec<f64> = vec![r.t];
            fields.extend(s.position.iter());
            fields.extend(s.velocity.iter());
            for i in 0..3 {
                for j in 0..3 {
                    fields.push(m[(i, j)]);
                }
            }
            fields.extend(s.omega.iter());
            fields.push(r.control.thrust);
            fields.extend(r.control.moment.iter());
            fields.extend([r.psi, r.err_pos, r.err_vel, r.qp_ms]);
            let line: Vec<String> = fields.iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(w, "{},{}", line.join(","), r.qp_iterations)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> TrackingSummary {
        let n = self.records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&StepRecord) -> f64| self.records.iter().map(f).sum::<f64>() / n;
        let max = |f: &dyn Fn(&StepRecord) -> f64| self.records.iter().map(f).fold(0.0, f64::max);
        let rel = |r: &StepRecord| {
            let scale = r.reference.position.norm();
            if scale > 1e-9 { r.err_pos / scale } else { r.err_pos }
        };
        TrackingSummary {
            task: self.task.clone(),
            m: self.m,
            n: self.n,
            steps: self.records.len(),
            duration: self.records.len() as f64 * self.dt,
            mean_err_pos: mean(&|r| r.err_pos),
            max_err_pos: max(&|r| r.err_pos),
            final_err_pos: self.records.last().map_or(0.0, |r| r.err_pos),
            mean_rel_err_pos: mean(&rel),
            mean_err_vel: mean(&|r| r.err_vel),
            max_err_vel: max(&|r| r.err_vel),
            mean_psi: mean(&|r| r.psi),
            max_psi: max(&|r| r.psi),
            mean_qp_ms: mean(&|r| r.qp_ms),
            max_qp_ms: max(&|r| r.qp_ms),
            mean_qp_iters: mean(&|r| r.qp_iterations as f64),
            unsolved_steps: self.records.iter().filter(|r| !r.qp_solved).count(),
        }
    }
}

/// Runs the task for `task.duration` with a control update every `cfg.dt`
/// and the plant integrated with `integrator` in between.
pub fn run_tracking(
    task: &TrackingTask,
    p: &QuadParams,
    ord: TruncationOrder,
    cfg: &MpcConfig,
    integrator: &Integrator,
) -> Result<ClosedLoopLog> {
    let mut ctrl = Controller::new(*p, ord, cfg.clone())?;
    let substeps = (cfg.dt / integrator.dt).round();
    if substeps < 1.0 || (substeps * integrator.dt - cfg.dt).abs() > 1e-9 * cfg.dt {
        return Err(Error::InvalidConfig(format!(
            "control interval {} is not a multiple of the integration step {}",
            cfg.dt, integrator.dt
        )));
    }
    let substeps = substeps as usize;
    let steps = (task.duration / cfg.dt).round() as usize;
    let j_inv = p.inertia_inverse()?;
    let mut s = task.initial;
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let out = ctrl.control(&s, t, task).map_err(|e| e.at_time(t))?;
        let u = pseudo_to_body(&s, &out.ubar, p);
        let reference = task.reference(t);
        records.push(StepRecord {
            t,
            state: s,
            control: u,
            ubar: out.ubar,
            reference,
            qp_iterations: out.solution.iterations,
            qp_ms: out.solve_ms,
            qp_solved: out.solution.status == QpStatus::Solved,
            err_pos: (s.position - reference.position).norm(),
            err_vel: (s.velocity - reference.velocity).norm(),
            psi: attitude_error(reference.rotation.matrix(), s.rotation.matrix()),
        });
        for i in 0..substeps {
            let ti = t + i as f64 * integrator.dt;
            s = integrator.step(&s, &u, p, &j_inv).map_err(|e| e.at_time(ti + integrator.dt))?;
        }
    }
    Ok(ClosedLoopLog { task: task.name().to_string(), m: ord.m(), n: ord.n(), dt: cfg.dt, records })
}
