//! `kquad`: experiments with the lifted quadrotor model.
//!
//! Units are SI throughout (m, s, kg, rad).

mod config;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use koopman_quad::analysis::{
    approximation_error, gramian, lti_controllability, residual_decay_study, residual_vs_order, RankReport,
    TestSignal, RANK_TOL,
};
use koopman_quad::lift::lift;
use koopman_quad::models::{build_a, build_b, build_bbar};
use koopman_quad::mpc::{run_tracking, ClosedLoopLog, TaskKind, TrackingSummary, TrackingTask};
use koopman_quad::se3::pseudo_to_body;
use koopman_quad::{PseudoControl, TruncationOrder};
use rayon::prelude::*;
use serde::Serialize;

use config::ExperimentConfig;
use output::{create, write_json, write_matrix_market, write_sidecar};

/// Distance (m) that counts as having reached the reference.
const SETTLE_TOLERANCE: f64 = 0.05;
const SETTLE_DEADLINE: f64 = 20.0;

#[derive(Parser, Debug)]
#[command(name = "kquad", version, about = "Lifted linear model and MPC experiments for a quadrotor (SI units, radians)")]
struct Cli {
    /// TOML experiment file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for random test signals and sampled states.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Position/velocity chain length.
    #[arg(long = "M", global = true)]
    m: Option<usize>,
    /// Attitude chain length.
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    /// Run length (s): task duration for `track`, study length for `approx-error`,
    /// window length for `analyze gramian`.
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Time step (s): MPC sampling interval for `track`, integration step for `approx-error`.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// MPC prediction horizon (s); must be a multiple of the sampling interval.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Actuator box on thrust and moments inside the MPC.
    #[arg(long, global = true, value_enum)]
    bounds: Option<Switch>,
    /// Angular-rate magnitude (rad/s) for `analyze residuals`.
    #[arg(long = "omega-norm", global = true)]
    omega_norm: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-loop tracking of helix, torus or hover; writes a CSV log and a JSON summary.
    Track {
        /// helix, torus or hover; defaults to `track.task` in the config.
        task: Option<String>,
    },
    /// Open-loop position error of the truncated model against the plant for each order in the sweep.
    ApproxError,
    /// Rank and decay reports as JSON.
    Analyze {
        #[arg(value_enum)]
        what: Analysis,
    },
    /// Writes A, the input selector and the state-dependent input matrix at the initial state.
    ExportModel,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Analysis {
    Controllability,
    Residuals,
    Gramian,
}

impl Cli {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = self.m {
            cfg.model.m = m;
        }
        if let Some(n) = self.n {
            cfg.model.n = n;
        }
        if let Some(h) = self.horizon {
            cfg.mpc.horizon = h;
        }
        if let Some(b) = self.bounds {
            cfg.mpc.bounds = matches!(b, Switch::On);
        }
        if let Some(w) = self.omega_norm {
            cfg.analysis.omega_norm = w;
        }
        match &self.command {
            Command::ApproxError => {
                if let Some(d) = self.duration {
                    cfg.approx.duration = d;
                }
                if let Some(dt) = self.dt {
                    cfg.approx.step = dt;
                }
                if self.m.is_some() || self.n.is_some() {
                    cfg.approx.orders = vec![[cfg.model.m, cfg.model.n]];
                }
            }
            Command::Analyze { what: Analysis::Gramian } => {
                if let Some(d) = self.duration {
                    cfg.analysis.gramian_duration = d;
                }
            }
            _ => {
                if let Some(d) = self.duration {
                    cfg.track.duration = d;
                }
                if let Some(dt) = self.dt {
                    cfg.mpc.dt = dt;
                }
            }
        }
        if let Command::Track { task: Some(t) } = &self.command {
            cfg.track.task = Some(t.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct TrackReport {
    #[serde(flatten)]
    summary: TrackingSummary,
    bounds: bool,
    settle_tolerance: f64,
    /// First time after which the position error stays below the tolerance.
    settle_time: Option<f64>,
    settle_time_under_20s: bool,
    csv: String,
}

fn settle_time(log: &ClosedLoopLog, tol: f64) -> Option<f64> {
    match log.records.iter().rposition(|r| !(r.err_pos < tol)) {
        None => log.records.first().map(|r| r.t),
        Some(i) => log.records.get(i + 1).map(|r| r.t),
    }
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_track(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let name = cfg.track.task.as_deref().context("no task given on the command line or in track.task")?;
    let kind: TaskKind = name.parse()?;
    let p = cfg.params();
    let ord = cfg.order()?;
    let mpc = cfg.mpc_config(ord)?;
    let task = TrackingTask::new(kind, cfg.track.duration);
    let log = run_tracking(&task, &p, ord, &mpc, &cfg.integrator()?)
        .with_context(|| format!("{} tracking run failed", kind.name()))?;

    let stem = format!("track_{}_{}_{}", kind.name(), ord.m(), ord.n());
    let csv = cfg.out.join(format!("{stem}.csv"));
    let mut w = create(&csv)?;
    log.write_csv(&mut w)?;
    w.flush()?;
    write_sidecar(&csv, "track", cfg)?;

    let settle = settle_time(&log, SETTLE_TOLERANCE);
    let report = TrackReport {
        summary: log.summary(),
        bounds: cfg.mpc.bounds,
        settle_tolerance: SETTLE_TOLERANCE,
        settle_time: settle,
        settle_time_under_20s: settle.is_some_and(|t| t < SETTLE_DEADLINE),
        csv: file_name(&csv),
    };
    let json = cfg.out.join(format!("{stem}.json"));
    write_json(&json, &report)?;
    write_sidecar(&json, "track", cfg)?;

    let s = &report.summary;
    println!("task {} ({}, {}) over {:.2} s, {} steps", s.task, s.m, s.n, s.duration, s.steps);
    println!("mean QP solve time {:.3} ms (max {:.3} ms)", s.mean_qp_ms, s.max_qp_ms);
    println!("max attitude error psi {:.3e}", s.max_psi);
    println!("mean position error {:.4} m, final {:.4} m", s.mean_err_pos, s.final_err_pos);
    match settle {
        Some(t) => println!("within {SETTLE_TOLERANCE} m from t = {t:.2} s"),
        None => println!("not within {SETTLE_TOLERANCE} m at the end of the run"),
    }
    println!("wrote {} and {}", csv.display(), json.display());
    if s.unsolved_steps > 0 {
        eprintln!("warning: {} QP solves stopped at the iteration limit", s.unsolved_steps);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ApproxEntry {
    m: usize,
    n: usize,
    csv: String,
    mean_err_x: f64,
    err_x_at_5s: f64,
    final_err_x: f64,
}

fn cmd_approx_error(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let p = cfg.params();
    let study = cfg.approx_config();
    let runs: Vec<_> = study
        .orders
        .par_iter()
        .map(|&(m, n)| -> Result<_> {
            let ord = TruncationOrder::new(m, n)?;
            let series = approximation_error(&p, ord, &study)?;
            let csv = cfg.out.join(format!("approx_error_{m}_{n}.csv"));
            let mut w = create(&csv)?;
            series.write_csv(&mut w)?;
            w.flush()?;
            write_sidecar(&csv, "approx-error", cfg)?;
            Ok(ApproxEntry {
                m,
                n,
                csv: file_name(&csv),
                mean_err_x: series.mean_err_x(study.duration),
                err_x_at_5s: series.at(&series.err_x, 5.0),
                final_err_x: series.err_x.last().copied().unwrap_or(0.0),
            })
        })
        .collect::<Result<_>>()?;
    for r in &runs {
        println!("({}, {}): mean position error {:.3e} m, at 5 s {:.3e} m -> {}", r.m, r.n, r.mean_err_x, r.err_x_at_5s, r.csv);
    }
    let json = cfg.out.join("approx_error_summary.json");
    write_json(&json, &runs)?;
    write_sidecar(&json, "approx-error", cfg)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GramianReport {
    t0: f64,
    tf: f64,
    seed: u64,
    #[serde(flatten)]
    rank: RankReport,
}

fn cmd_analyze(cfg: &ExperimentConfig, what: Analysis) -> Result<ExitCode> {
    let p = cfg.params();
    let ord = cfg.order()?;
    let a = &cfg.analysis;
    let (stem, value) = match what {
        Analysis::Controllability => {
            let r = lti_controllability(ord)?;
            (format!("controllability_{}_{}", ord.m(), ord.n()), serde_json::to_value(r)?)
        }
        Analysis::Residuals => {
            let mut r = serde_json::to_value(residual_decay_study(&p, a.omega_norm, a.samples, a.chain_length, cfg.seed)?)?;
            let s0 = cfg.initial_state();
            let orders = (2..=a.chain_length).map(|k| TruncationOrder::new(k, k)).collect::<koopman_quad::Result<Vec<_>>>()?;
            let by_order = residual_vs_order(&s0, &PseudoControl::hover(&p), &p, &orders)?;
            r["residual_by_order"] = serde_json::to_value(by_order)?;
            ("residuals".to_string(), r)
        }
        Analysis::Gramian => {
            let integ = cfg.integrator()?;
            let tf = a.gramian_duration;
            let signal = TestSignal::new(&p, tf, cfg.approx.hold, cfg.seed);
            let steps = (tf / integ.dt).round() as usize;
            let traj = integ.integrate(&cfg.initial_state(), |t, s| pseudo_to_body(s, &signal.at(t), &p), steps, &p)?;
            let w = gramian(&traj, &p, ord, 0.0, tf)?;
            let r = GramianReport { t0: 0.0, tf, seed: cfg.seed, rank: RankReport::of("gramian", &w, RANK_TOL) };
            (format!("gramian_{}_{}", ord.m(), ord.n()), serde_json::to_value(r)?)
        }
    };
    let json = cfg.out.join(format!("{stem}.json"));
    write_json(&json, &value)?;
    write_sidecar(&json, "analyze", cfg)?;
    emit(&serde_json::to_string_pretty(&value)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_export_model(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let p = cfg.params();
    let ord = cfg.order()?;
    let s0 = cfg.initial_state();
    let x0 = lift(&s0, &p, ord).into_vector();
    let matrices = [
        ("A", build_a(ord), "lifted state matrix".to_string()),
        ("Bbar", build_bbar(ord)?, "selector for the virtual control".to_string()),
        ("B", build_b(&s0, &p, ord)?, format!("input matrix at the initial state, lifted state {:?}", x0.as_slice())),
    ];
    for (name, m, what) in matrices {
        let path = cfg.out.join(format!("model_{}_{}_{name}.mtx", ord.m(), ord.n()));
        let mut w = create(&path)?;
        write_matrix_market(&mut w, &m, &format!("{name}: {what}\nM = {}, N = {}", ord.m(), ord.n()))?;
        w.flush()?;
        write_sidecar(&path, "export-model", cfg)?;
        println!("{name}: {}x{} -> {}", m.nrows(), m.ncols(), path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Track { .. } => cmd_track(&cfg),
        Command::ApproxError => cmd_approx_error(&cfg),
        Command::Analyze { what } => cmd_analyze(&cfg, *what),
        Command::ExportModel => cmd_export_model(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
