//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any of them fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::kkt::{instance, max_diff, oracle, scale};
use common::*;
use koopman_quad::analysis::{
    approximation_error, chain_norms, lpv_pbh_test, lti_controllability, ApproxConfig, ChainNorms,
};
use koopman_quad::lift::{residual_blocks, TruncationOrder};
use koopman_quad::models::{LpvSystem, LtiSystem};
use koopman_quad::mpc::{run_tracking, ClosedLoopLog, MpcConfig, Ocp, TrackingTask, HOVER_TARGET};
use koopman_quad::se3::Integrator;
use koopman_quad::{Error, Mat3, QuadParams, QuadState, Vec3};
use nalgebra::DVector;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = Box<dyn FnOnce(&mut Shared) -> Outcome>;

#[derive(Default)]
struct Shared {
    qp_means: Vec<(String, f64)>,
}

fn terminal_row(i: usize, ord: TruncationOrder) -> bool {
    let (m, n) = (ord.m(), ord.n());
    let within = |o: usize, len: usize| i >= o && i < o + len;
    within(ord.p_offset(m), 3) || within(ord.y_offset(m), 3) || within(ord.h_offset(m), 3) || within(ord.z_offset(n), 9)
}

fn derivative_oracle(_: &mut Shared) -> Outcome {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(3, 3).unwrap();
    let lpv = LpvSystem::new(p, ord).unwrap();
    let mut rng = rng(1);
    let (mut inner, mut outer) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let s = random_state(&mut rng, 2.0, 2.0, 0.7);
        let u = random_control(&mut rng, 10.0);
        let fd = fd_lift_derivative(&s, &u, &p, ord);
        let model = lpv.derivative(&s, &u);
        let res = residual_blocks(&s, &u, &p, ord).unwrap().as_lifted(ord);
        let scale = fd.norm();
        for i in 0..fd.len() {
            if terminal_row(i, ord) {
                outer = outer.max((fd[i] - model[i] - res[i]).abs() / scale);
            } else {
                inner = inner.max((fd[i] - model[i]).abs() / scale);
            }
        }
    }
    outcome(
        inner < 1e-5 && outer < 1e-5,
        format!("max relative error {inner:.2e} on chain blocks, {outer:.2e} on terminal blocks"),
    )
}

fn lpv_lti_equivalence(_: &mut Shared) -> Outcome {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(3, 3).unwrap();
    let sys = LtiSystem::new(p, ord).unwrap();
    let mut rng = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = random_state(&mut rng, 2.0, 2.0, 0.7);
        let u = random_control(&mut rng, 10.0);
        let direct = sys.lpv().input_matrix(&s) * DVector::from_row_slice(&u.as_array());
        let packed = sys.bbar() * sys.pack_virtual(&s, &u).unwrap();
        worst = worst.max((direct - packed).norm());
    }
    outcome(worst < 1e-12, format!("max deviation {worst:.2e}"))
}

fn control_recovery(_: &mut Shared) -> Outcome {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(3, 3).unwrap();
    let sys = LtiSystem::new(p, ord).unwrap();
    let mut rng = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = nondegenerate_state(&mut rng);
        let u = random_control(&mut rng, 10.0);
        let back = sys.recover_control(&s, &sys.pack_virtual(&s, &u).unwrap()).unwrap();
        let d = back.as_array().iter().zip(u.as_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
    }
    let singular = QuadParams { inertia: Mat3::from_diagonal(&Vec3::new(0.0023, 0.0, 0.0032)), ..p };
    let rejects = matches!(LtiSystem::new(singular, ord), Err(Error::SingularInertia));
    outcome(
        worst < 1e-9 && rejects,
        format!("max roundtrip error {worst:.2e}; singular inertia rejected: {rejects}"),
    )
}

fn controllability_ranks(_: &mut Shared) -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for m in 3..=5 {
        for n in 2..=5 {
            let ord = TruncationOrder::new(m, n).unwrap();
            let r = lti_controllability(ord).unwrap();
            checked += 1;
            if r.rank != 9 * (m + n) {
                bad.push(format!("({m},{n}) rank {}", r.rank));
            }
        }
    }
    outcome(bad.is_empty(), format!("{checked} orders full rank; failures: {bad:?}"))
}

fn pointwise_controllability(_: &mut Shared) -> Outcome {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(3, 3).unwrap();
    let mut rng = rng(5);
    let mut min_rank = usize::MAX;
    for _ in 0..50 {
        let s = nondegenerate_state(&mut rng);
        min_rank = min_rank.min(lpv_pbh_test(&s, &p, ord).unwrap().terminal.rank);
    }
    let degenerate = lpv_pbh_test(&QuadState::at_rest(Vec3::zeros()), &p, ord).unwrap().pbh;
    let deficient = degenerate.rank < degenerate.rows;
    outcome(
        min_rank == 4 && deficient,
        format!(
            "min terminal-row rank {min_rank} over 50 states; degenerate PBH rank {} of {}",
            degenerate.rank, degenerate.rows
        ),
    )
}

fn residual_decay(_: &mut Shared) -> Outcome {
    let p = QuadParams::default();
    let mut rng = rng(6);
    let bound = std::f64::consts::SQRT_2 * 0.5;
    let (mut worst_ratio, mut worst_z) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let mut s = random_state(&mut rng, 2.0, 2.0, 0.0);
        s.omega = on_sphere(&mut rng, 0.5);
        let c = chain_norms(&s, &p, 10).unwrap();
        worst_ratio = worst_ratio.max(ChainNorms::max_ratio(&c.y));
        for (j, z) in c.z.iter().enumerate() {
            worst_z = worst_z.max(z / (bound.powi(j as i32) * c.z[0]));
        }
    }
    outcome(
        worst_ratio <= 0.5 + 1e-12 && worst_z <= 1.0 + 1e-12,
        format!("max y ratio {worst_ratio:.6}; max z norm over bound {worst_z:.6}"),
    )
}

fn approximation_ordering(_: &mut Shared) -> Outcome {
    let p = QuadParams::default();
    let cfg = ApproxConfig { seed: 0, duration: 10.0, ..ApproxConfig::default() };
    let low = approximation_error(&p, TruncationOrder::new(3, 3).unwrap(), &cfg).unwrap();
    let high = approximation_error(&p, TruncationOrder::new(5, 5).unwrap(), &cfg).unwrap();
    let (e3, e5) = (low.mean_err_x(10.0), high.mean_err_x(10.0));
    let start = low.err_x[0].max(high.err_x[0]);
    outcome(e5 <= e3 && start == 0.0, format!("mean position error (3,3) {e3:.3e}, (5,5) {e5:.3e}; initial {start:e}"))
}

fn track(task: TrackingTask, shared: &mut Shared) -> Result<ClosedLoopLog, String> {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(3, 3).unwrap();
    let cfg = MpcConfig::with_params(ord, &p);
    let log = run_tracking(&task, &p, ord, &cfg, &Integrator::default()).map_err(|e| e.to_string())?;
    let s = log.summary();
    shared.qp_means.push((s.task.clone(), s.mean_qp_ms));
    Ok(log)
}

fn hover(shared: &mut Shared) -> Outcome {
    let log = match track(TrackingTask::hover(40.0), shared) {
        Ok(l) => l,
        Err(e) => return outcome(false, e),
    };
    let target = Vec3::from(HOVER_TARGET);
    let late = log.records.iter().filter(|r| r.t > 20.0);
    let worst = late.map(|r| (r.state.position - target).norm()).fold(0.0, f64::max);
    let last = log.records.last().map(|r| (r.state.position - target).norm()).unwrap_or(f64::NAN);
    let settle = log
        .records
        .iter()
        .rposition(|r| (r.state.position - target).norm() >= 0.05)
        .and_then(|i| log.records.get(i + 1))
        .map(|r| r.t);
    outcome(
        worst < 0.05,
        format!("max distance after 20 s {worst:.4} m; final {last:.4} m; inside 0.05 m from t = {settle:?} s"),
    )
}

fn helix(shared: &mut Shared) -> Outcome {
    let log = match track(TrackingTask::helix(60.0), shared) {
        Ok(l) => l,
        Err(e) => return outcome(false, e),
    };
    let psi = log.records.iter().filter(|r| r.t > 5.0).map(|r| r.psi).fold(0.0, f64::max);
    let rel = log.summary().mean_rel_err_pos;
    outcome(psi < 5e-3 && rel < 0.1, format!("max psi after 5 s {psi:.2e}; mean normalised position error {rel:.4}"))
}

fn torus(shared: &mut Shared) -> Outcome {
    let log = match track(TrackingTask::torus(60.0), shared) {
        Ok(l) => l,
        Err(e) => return outcome(false, e),
    };
    let s = log.summary();
    outcome(s.max_psi < 1e-2, format!("max psi {:.2e}; mean normalised position error {:.4}", s.max_psi, s.mean_rel_err_pos))
}

fn qp_timing(shared: &mut Shared) -> Outcome {
    if shared.qp_means.is_empty() {
        return outcome(false, "no closed-loop runs completed".into());
    }
    let worst = shared.qp_means.iter().map(|(_, m)| *m).fold(0.0, f64::max);
    let list: Vec<String> = shared.qp_means.iter().map(|(t, m)| format!("{t} {m:.2} ms")).collect();
    outcome(worst < 50.0, format!("mean QP solve time per step: {}", list.join(", ")))
}

fn qp_correctness(_: &mut Shared) -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let inst = instance(500 + seed, 1 + (seed as usize % 3));
        let mut ocp = Ocp::new(&inst.disc, &inst.cfg).unwrap();
        let free = ocp.solve(&inst.x0, &inst.refs, None).unwrap();
        let reference = oracle(&inst, None);
        worst = worst.max(max_diff(&free.controls, &reference) / scale(&reference));

        let nv = inst.refs.controls[0].len();
        let mut rng = rng(seed);
        let c = &free.controls[0];
        let lo = DVector::from_fn(nv, |i, _| c[i] - rng.gen_range(-0.5..2.0) * (1.0 + c[i].abs()) * 0.3);
        let hi = DVector::from_fn(nv, |i, _| lo[i] + rng.gen_range(0.0..1.0) * (1.0 + c[i].abs()));
        let boxed = ocp.solve(&inst.x0, &inst.refs, Some((&lo, &hi))).unwrap();
        let reference = oracle(&inst, Some((&lo, &hi)));
        worst = worst.max(max_diff(&boxed.controls, &reference) / scale(&reference));
    }
    outcome(worst <= 1e-9, format!("max scaled deviation from the KKT oracle {worst:.2e} over 20 instances"))
}

fn main() -> ExitCode {
    let checks: Vec<(&str, f64, Check)> = vec![
        ("lifted derivative vs finite differences", 10.0, Box::new(derivative_oracle)),
        ("state-dependent vs selector input", 1.0, Box::new(lpv_lti_equivalence)),
        ("control recovery roundtrip", 1.0, Box::new(control_recovery)),
        ("controllability matrix ranks", 30.0, Box::new(controllability_ranks)),
        ("pointwise controllability", 5.0, Box::new(pointwise_controllability)),
        ("observable chain decay", 1.0, Box::new(residual_decay)),
        ("approximation error ordering", 30.0, Box::new(approximation_ordering)),
        ("hover task", 120.0, Box::new(hover)),
        ("helix task", 180.0, Box::new(helix)),
        ("torus-knot task", 180.0, Box::new(torus)),
        ("QP solve time", f64::INFINITY, Box::new(qp_timing)),
        ("QP correctness", 5.0, Box::new(qp_correctness)),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, budget, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let o = check(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        let pass = o.pass && secs < budget;
        if !pass {
            failed += 1;
        }
        let timing = if budget.is_finite() { format!("{secs:.2} s of {budget} s") } else { format!("{secs:.2} s") };
        println!("criterion {:2}: {} {name}: {} ({timing})", i + 1, if pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
