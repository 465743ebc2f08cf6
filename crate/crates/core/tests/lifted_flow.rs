//! The lifted vector field against finite differences of the observables
//! along the true nonlinear flow.

mod common;

use common::*;
use koopman_quad::lift::{residual_blocks, TruncationOrder};
use koopman_quad::models::LpvSystem;
use koopman_quad::{PseudoControl, QuadParams, QuadState, Vec3};
use nalgebra::DVector;

fn split_error(
    fd: &DVector<f64>,
    model: &DVector<f64>,
    residual: &DVector<f64>,
    ord: TruncationOrder,
) -> (f64, f64) {
    let terminal = |i: usize| {
        let (m, n) = (ord.m(), ord.n());
        let in_block = |o: usize, len: usize| i >= o && i < o + len;
        in_block(ord.p_offset(m), 3) || in_block(ord.y_offset(m), 3) || in_block(ord.h_offset(m), 3) || in_block(ord.z_offset(n), 9)
    };
    let scale = fd.norm();
    let mut inner = 0.0f64;
    let mut outer = 0.0f64;
    for i in 0..fd.len() {
        if terminal(i) {
            outer = outer.max((fd[i] - model[i] - residual[i]).abs());
        } else {
            inner = inner.max((fd[i] - model[i]).abs());
        }
    }
    (inner / scale, outer / scale)
}

#[test]
fn lifted_field_matches_flow_with_residual() {
    let p = QuadParams::default();
    let mut rng = rng(11);
    for &(m, n) in &[(3, 3), (2, 2), (4, 3), (5, 6)] {
        let ord = TruncationOrder::new(m, n).unwrap();
        let lpv = LpvSystem::new(p, ord).unwrap();
        for _ in 0..25 {
            let s = random_state(&mut rng, 2.0, 2.0, 0.7);
            let ubar = random_control(&mut rng, 10.0);
            let fd = fd_lift_derivative(&s, &ubar, &p, ord);
            let model = lpv.derivative(&s, &ubar);
            let res = residual_blocks(&s, &ubar, &p, ord).unwrap().as_lifted(ord);
            let (inner, outer) = split_error(&fd, &model, &res, ord);
            assert!(inner < 1e-5, "{ord}: inner rows relative error {inner:e}");
            assert!(outer < 1e-5, "{ord}: terminal rows relative error {outer:e}");
        }
    }
}

#[test]
fn hover_and_free_fall_rows() {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(3, 3).unwrap();
    let lpv = LpvSystem::new(p, ord).unwrap();
    let s = QuadState::at_rest(Vec3::new(1.0, 1.3, 2.0));
    let d = lpv.derivative(&s, &PseudoControl::hover(&p));
    assert_eq!(d.rows(ord.y_offset(1), 3).norm(), 0.0);

    let d = lpv.derivative(&s, &PseudoControl::default());
    let y1dot = d.fixed_rows::<3>(ord.y_offset(1)).into_owned();
    assert_eq!(y1dot, Vec3::new(0.0, 0.0, -p.gravity));
}

#[test]
fn lifted_coordinates_give_same_field_on_manifold() {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(3, 3).unwrap();
    let lpv = LpvSystem::new(p, ord).unwrap();
    let mut rng = rng(5);
    for _ in 0..20 {
        let s = random_state(&mut rng, 2.0, 2.0, 0.7);
        let u = random_control(&mut rng, 10.0);
        let x = koopman_quad::lift::lift(&s, &p, ord);
        let a = lpv.derivative(&s, &u);
        let b = lpv.derivative_lifted(&x, &u);
        assert!((a - &b).norm() <= 1e-10 * b.norm().max(1.0));
    }
}
