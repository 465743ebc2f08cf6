//! Random small OCP instances and a non-condensed KKT oracle.

use koopman_quad::lift::lift;
use koopman_quad::mpc::{discretize, DiscreteLti, MpcConfig, ReferenceWindow};
use koopman_quad::{LtiSystem, QuadParams, TruncationOrder};
use nalgebra::{DMatrix, DVector};

use super::{nondegenerate_state, random_control, random_state, rng};

pub struct Instance {
    pub disc: DiscreteLti,
    pub cfg: MpcConfig,
    pub x0: DVector<f64>,
    pub refs: ReferenceWindow,
}

pub fn instance(seed: u64, h: usize) -> Instance {
    let p = QuadParams::default();
    let ord = TruncationOrder::new(2, 2).unwrap();
    let sys = LtiSystem::new(p, ord).unwrap();
    let mut rng = rng(seed);
    let mut cfg = MpcConfig::new(ord);
    cfg.horizon = h as f64 * cfg.dt;
    cfg.control_box = None;
    let disc = discretize(&sys, cfg.dt).unwrap();
    let s0 = nondegenerate_state(&mut rng);
    let x0 = lift(&s0, &p, ord).into_vector();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    for _ in 0..h {
        let sr = random_state(&mut rng, 2.0, 1.0, 0.3);
        states.push(lift(&sr, &p, ord).into_vector());
        let ur = random_control(&mut rng, 10.0);
        controls.push(sys.map_control_bounds(&sr, &ur).unwrap());
    }
    Instance { disc, cfg, x0, refs: ReferenceWindow { states, controls } }
}

/// Minimises the same cost over `(X₁..X_H, 𝓤₀..𝓤_{H−1})` with the dynamics as
/// equality constraints, optionally with a box on every `𝓤ᵢ`.
pub fn oracle(inst: &Instance, bounds: Option<(&DVector<f64>, &DVector<f64>)>) -> Vec<DVector<f64>> {
    let (ad, bd, dt) = (&inst.disc.ad, &inst.disc.bd, inst.disc.dt);
    let (n, nv) = (ad.nrows(), bd.ncols());
    let h = inst.refs.states.len();
    let nx = h * n;
    let nw = nx + h * nv;
    let mut g = DMatrix::zeros(nw, nw);
    let mut c = DVector::zeros(nw);
    for i in 0..h {
        g.view_mut((i * n, i * n), (n, n)).copy_from(&(&inst.cfg.q * (2.0 * dt)));
        c.rows_mut(i * n, n).copy_from(&(&inst.cfg.q * &inst.refs.states[i] * (-2.0 * dt)));
        let o = nx + i * nv;
        g.view_mut((o, o), (nv, nv)).copy_from(&(&inst.cfg.r * (2.0 * dt)));
        c.rows_mut(o, nv).copy_from(&(&inst.cfg.r * &inst.refs.controls[i] * (-2.0 * dt)));
    }
    // X_{i+1} − Ad X_i − Bd 𝓤_i = 0, with X_0 given.
    let mut e = DMatrix::zeros(nx, nw);
    let mut d = DVector::zeros(nx);
    for i in 0..h {
        for k in 0..n {
            e[(i * n + k, i * n + k)] = 1.0;
        }
        if i > 0 {
            e.view_mut((i * n, (i - 1) * n), (n, n)).copy_from(&(-ad));
        } else {
            d.rows_mut(0, n).copy_from(&(ad * &inst.x0));
        }
        e.view_mut((i * n, nx + i * nv), (n, nv)).copy_from(&(-bd));
    }

    let nu = h * nv;
    let solve_with = |active: &[(usize, f64)]| -> (DVector<f64>, Vec<f64>) {
        let ne = nx + active.len();
        let mut k = DMatrix::zeros(nw + ne, nw + ne);
        k.view_mut((0, 0), (nw, nw)).copy_from(&g);
        k.view_mut((nw, 0), (nx, nw)).copy_from(&e);
        k.view_mut((0, nw), (nw, nx)).copy_from(&e.transpose());
        let mut rhs = DVector::zeros(nw + ne);
        rhs.rows_mut(0, nw).copy_from(&(-&c));
        rhs.rows_mut(nw, nx).copy_from(&d);
        for (a, &(j, v)) in active.iter().enumerate() {
            k[(nw + nx + a, nx + j)] = 1.0;
            k[(nx + j, nw + nx + a)] = 1.0;
            rhs[nw + nx + a] = v;
        }
        let sol = k.lu().solve(&rhs).expect("oracle KKT system is singular");
        let mult = (0..active.len()).map(|a| sol[nw + nx + a]).collect();
        (sol.rows(0, nw).into_owned(), mult)
    };

    let mut active: Vec<(usize, f64, bool)> = Vec::new(); // (index, value, is_upper)
    let w = loop {
        let fixed: Vec<(usize, f64)> = active.iter().map(|&(j, v, _)| (j, v)).collect();
        let (w, mult) = solve_with(&fixed);
        let Some((lo, hi)) = bounds else { break w };
        // Multiplier ν enters as ∇f + ν = 0 on an active row: an upper bound
        // needs ∇f ≤ 0, i.e. ν ≥ 0; a lower bound needs ν ≤ 0.
        let wrong = active
            .iter()
            .zip(&mult)
            .enumerate()
            .filter(|(_, (&(_, _, up), &m))| if up { m < -1e-10 } else { m > 1e-10 })
            .max_by(|a, b| a.1 .1.abs().total_cmp(&b.1 .1.abs()))
            .map(|(i, _)| i);
        if let Some(i) = wrong {
            active.remove(i);
            continue;
        }
        let mut worst = None;
        let mut worst_v = 1e-12;
        for j in 0..nu {
            if active.iter().any(|a| a.0 == j) {
                continue;
            }
            let (l, u) = (lo[j % nv], hi[j % nv]);
            let x = w[nx + j];
            if l - x > worst_v {
                worst_v = l - x;
                worst = Some((j, l, false));
            }
            if x - u > worst_v {
                worst_v = x - u;
                worst = Some((j, u, true));
            }
        }
        match worst {
            Some(a) => active.push(a),
            None => break w,
        }
        assert!(active.len() <= nu, "oracle active set overflow");
    };
    (0..h).map(|i| w.rows(nx + i * nv, nv).into_owned()).collect()
}

pub fn max_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

pub fn scale(a: &[DVector<f64>]) -> f64 {
    a.iter().map(|x| x.amax()).fold(1.0, f64::max)
}
