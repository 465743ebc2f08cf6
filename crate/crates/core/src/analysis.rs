//! Controllability checks, truncation-residual decay and the
//! approximation-error study.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{lift, residual_blocks, LiftedState, ResidualReport, TruncationOrder};
use crate::linalg::{expm_nilpotent, nilpotency_index, numerical_rank, singular_values};
use crate::models::{build_a, build_b, build_bbar, LpvSystem};
use crate::se3::{attitude_error, pseudo_to_body, Integrator, PseudoControl, QuadParams, QuadState, Rotation, Vec3};

/// Relative SVD cutoff used for every rank decision here.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Smallest singular value counted in the rank (0 if the rank is 0).
    pub sigma_min_retained: f64,
    pub sigma_max: f64,
    pub tol: f64,
    pub full_row_rank: bool,
    pub full_column_rank: bool,
}

impl RankReport {
    pub fn of(name: &str, m: &DMatrix<f64>, tol: f64) -> Self {
        let sv = singular_values(m);
        let rank = numerical_rank(&sv, tol);
        RankReport {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            rank,
            sigma_min_retained: if rank > 0 { sv[rank - 1] } else { 0.0 },
            sigma_max: sv.first().copied().unwrap_or(0.0),
            tol,
            full_row_rank: rank == m.nrows(),
            full_column_rank: rank == m.ncols(),
        }
    }
}

/// Krylov matrix `[B̄, A B̄, …, A^{ν−1} B̄]`; higher powers vanish.
pub fn controllability_matrix(ord: TruncationOrder) -> Result<DMatrix<f64>> {
    let a = build_a(ord);
    let bbar = build_bbar(ord)?;
    let nu = nilpotency_index(&a).unwrap_or(a.nrows());
    let (n, k) = (bbar.nrows(), bbar.ncols());
    let mut c = DMatrix::zeros(n, k * nu);
    let mut blk = bbar;
    for i in 0..nu {
        c.view_mut((0, i * k), (n, k)).copy_from(&blk);
        blk = &a * blk;
    }
    Ok(c)
}

pub fn lti_controllability(ord: TruncationOrder) -> Result<RankReport> {
    Ok(RankReport::of(&format!("lti_controllability[{ord}]"), &controllability_matrix(ord)?, RANK_TOL))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbhReport {
    /// `[A | 𝓑(s)]`, the PBH matrix at the only eigenvalue λ = 0.
    pub pbh: RankReport,
    /// Terminal block-rows of `𝓑(s)`: `p_M, y_M, h_M, z_N`, an 18×4 matrix.
    pub terminal: RankReport,
}

/// Rows of `𝓑(s)` on the last block of each chain.
pub fn terminal_input_rows(b: &DMatrix<f64>, ord: TruncationOrder) -> DMatrix<f64> {
    let (m, n) = (ord.m(), ord.n());
    let blocks = [(ord.p_offset(m), 3), (ord.y_offset(m), 3), (ord.h_offset(m), 3), (ord.z_offset(n), 9)];
    let mut out = DMatrix::zeros(18, b.ncols());
    let mut r = 0;
    for (off, len) in blocks {
        out.rows_mut(r, len).copy_from(&b.rows(off, len));
        r += len;
    }
    out
}

pub fn lpv_pbh_test(s: &QuadState, p: &QuadParams, ord: TruncationOrder) -> Result<PbhReport> {
    let a = build_a(ord);
    let b = build_b(s, p, ord)?;
    let mut ab = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    ab.columns_mut(0, a.ncols()).copy_from(&a);
    ab.columns_mut(a.ncols(), b.ncols()).copy_from(&b);
    Ok(PbhReport {
        pbh: RankReport::of("pbh[A|B]", &ab, RANK_TOL),
        terminal: RankReport::of("terminal_input_rows", &terminal_input_rows(&b, ord), RANK_TOL),
    })
}

/// Trapezoidal approximation of
/// `W = ∫_{t0}^{tf} e^{A(τ−t0)} 𝓑(X(τ)) 𝓑(X(τ))ᵀ e^{Aᵀ(τ−t0)} dτ`
/// over the trajectory samples inside `[t0, tf]`; returns `σ_min(W)`.
pub fn gramian(traj: &[(f64, QuadState)], p: &QuadParams, ord: TruncationOrder, t0: f64, tf: f64) -> Result<DMatrix<f64>> {
    let n = ord.dim();
    let mut w = DMatrix::zeros(n, n);
    if !(tf > t0) {
        return Ok(w);
    }
    let samples: Vec<&(f64, QuadState)> = traj.iter().filter(|(t, _)| *t >= t0 - 1e-12 && *t <= tf + 1e-12).collect();
    if samples.len() < 2 {
        return Err(Error::InvalidConfig(format!("trajectory has fewer than two samples in [{t0}, {tf}]")));
    }
    let a = build_a(ord);
    let nu = nilpotency_index(&a).unwrap_or(n);
    let integrand = |t: f64, s: &QuadState| -> Result<DMatrix<f64>> {
        let e = expm_nilpotent(&a, t - t0, nu);
        let eb = e * build_b(s, p, ord)?;
        Ok(&eb * eb.transpose())
    };
    let mut prev = integrand(samples[0].0, &samples[0].1)?;
    for pair in samples.windows(2) {
        let (ta, tb) = (pair[0].0, pair[1].0);
        let next = integrand(tb, &pair[1].1)?;
        w += (&prev + &next) * (0.5 * (tb - ta));
        prev = next;
    }
    Ok(w)
}

pub fn gramian_min_sv(traj: &[(f64, QuadState)], p: &QuadParams, ord: TruncationOrder, t0: f64, tf: f64) -> Result<f64> {
    if !(tf > t0) {
        return Ok(0.0);
    }
    let w = gramian(traj, p, ord, t0, tf)?;
    Ok(singular_values(&w).last().copied().unwrap_or(0.0))
}

/// Norms of every chain block of `lift(s)` up to index `kmax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainNorms {
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn chain_norms(s: &QuadState, p: &QuadParams, kmax: usize) -> Result<ChainNorms> {
    let ord = TruncationOrder::new(kmax, kmax)?;
    let x = lift(s, p, ord);
    let ks = 1..=kmax;
    Ok(ChainNorms {
        p: ks.clone().map(|k| x.p(k).norm()).collect(),
        y: ks.clone().map(|k| x.y(k).norm()).collect(),
        h: ks.clone().map(|k| x.h(k).norm()).collect(),
        z: ks.map(|j| x.z(j).norm()).collect(),
    })
}

impl ChainNorms {
    /// Largest successive ratio `‖c_k‖ / ‖c_{k−1}‖` in a chain, skipping zero blocks.
    pub fn max_ratio(chain: &[f64]) -> f64 {
        chain
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }
}

/// Truncation residual at each order in `orders` for a single state.
pub fn residual_vs_order(s: &QuadState, ubar: &PseudoControl, p: &QuadParams, orders: &[TruncationOrder]) -> Result<Vec<ResidualReport>> {
    orders.iter().map(|&ord| residual_blocks(s, ubar, p, ord)).collect()
}

/// Worst-case chain decay over random states with a fixed `‖ω‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub omega_norm: f64,
    pub samples: usize,
    pub chain_length: usize,
    pub seed: u64,
    pub p_max_ratio: f64,
    pub y_max_ratio: f64,
    pub h_max_ratio: f64,
    pub z_max_ratio: f64,
    /// Largest `‖z_j‖ / ((√2‖ω‖)^{j−1} ‖z₁‖)`.
    pub z_max_bound_ratio: f64,
    pub y_within_bound: bool,
    pub z_within_bound: bool,
}

/// Samples `‖x‖, ‖v‖ ≤ 2`, a uniform attitude and `ω` on the sphere of
/// radius `omega_norm`, and records the worst successive chain ratios.
pub fn residual_decay_study(p: &QuadParams, omega_norm: f64, samples: usize, chain_length: usize, seed: u64) -> Result<DecayReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ball = |r: f64| loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() <= 1.0 && v.norm() > 1e-3 {
            break v * r;
        }
    };
    let bound = std::f64::consts::SQRT_2 * omega_norm;
    let mut r = DecayReport {
        omega_norm,
        samples,
        chain_length,
        seed,
        p_max_ratio: 0.0,
        y_max_ratio: 0.0,
        h_max_ratio: 0.0,
        z_max_ratio: 0.0,
        z_max_bound_ratio: 0.0,
        y_within_bound: false,
        z_within_bound: false,
    };
    for _ in 0..samples {
        let s = QuadState {
            position: ball(2.0),
            velocity: ball(2.0),
            rotation: Rotation::exp(&ball(std::f64::consts::PI)),
            omega: ball(1.0).normalize() * omega_norm,
        };
        let c = chain_norms(&s, p, chain_length)?;
        r.p_max_ratio = r.p_max_ratio.max(ChainNorms::max_ratio(&c.p));
        r.y_max_ratio = r.y_max_ratio.max(ChainNorms::max_ratio(&c.y));
        r.h_max_ratio = r.h_max_ratio.max(ChainNorms::max_ratio(&c.h));
        r.z_max_ratio = r.z_max_ratio.max(ChainNorms::max_ratio(&c.z));
        for (j, z) in c.z.iter().enumerate().skip(1) {
            let scale = bound.powi(j as i32) * c.z[0];
            let ratio = if scale > 0.0 { z / scale } else if *z > 0.0 { f64::INFINITY } else { 0.0 };
            r.z_max_bound_ratio = r.z_max_bound_ratio.max(ratio);
        }
    }
    r.y_within_bound = r.y_max_ratio <= omega_norm + 1e-12;
    r.z_within_bound = r.z_max_bound_ratio <= 1.0 + 1e-12;
    Ok(r)
}

/// Settings for the open-loop comparison of the truncated LPV model with the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub orders: Vec<(usize, usize)>,
    pub duration: f64,
    pub seed: u64,
    /// Integration step for both models.
    pub dt: f64,
    /// Hold interval of the random moment signal ξ(t).
    pub hold: f64,
    /// Keep every this many integration steps in the output series.
    pub record_every: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig { orders: vec![(3, 3), (4, 4), (5, 5)], duration: 10.0, seed: 0, dt: 1e-3, hold: 0.05, record_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub m: usize,
    pub n: usize,
    pub t: Vec<f64>,
    pub err_x: Vec<f64>,
    pub err_v: Vec<f64>,
    pub psi: Vec<f64>,
}

pub const ERROR_CSV_HEADER: &str = "t,err_x,err_v,psi";

impl ErrorSeries {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{ERROR_CSV_HEADER}")?;
        for i in 0..self.t.len() {
            writeln!(w, "{:.6e},{:.9e},{:.9e},{:.9e}", self.t[i], self.err_x[i], self.err_v[i], self.psi[i])?;
        }
        Ok(())
    }

    /// Time average of `err_x` over samples with `t ≤ until` (trapezoidal).
    pub fn mean_err_x(&self, until: f64) -> f64 {
        let mut area = 0.0;
        let mut span = 0.0;
        for i in 1..self.t.len() {
            if self.t[i] > until + 1e-12 {
                break;
            }
            let dt = self.t[i] - self.t[i - 1];
            area += 0.5 * (self.err_x[i] + self.err_x[i - 1]) * dt;
            span += dt;
        }
        if span > 0.0 { area / span } else { 0.0 }
    }

    /// Value of a series at the sample nearest `t`.
    pub fn at(&self, series: &[f64], t: f64) -> f64 {
        let i = self
            .t
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map_or(0, |(i, _)| i);
        series[i]
    }
}

/// The test input `ū(t) = [20 m g sin t, 0.001 ξ(t) sin(0.01 t)]` with
/// `ξ ~ U[−6, 6]` per component, redrawn every `hold` seconds.
#[derive(Debug, Clone)]
pub struct TestSignal {
    mass_g: f64,
    hold: f64,
    xi: Vec<Vec3>,
}

impl TestSignal {
    pub fn new(p: &QuadParams, duration: f64, hold: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = (duration / hold).ceil() as usize + 1;
        let xi = (0..count)
            .map(|_| Vec3::new(rng.gen_range(-6.0..=6.0), rng.gen_range(-6.0..=6.0), rng.gen_range(-6.0..=6.0)))
            .collect();
        TestSignal { mass_g: p.mass * p.gravity, hold, xi }
    }

    pub fn at(&self, t: f64) -> PseudoControl {
        let i = ((t / self.hold + 1e-9).floor().max(0.0) as usize).min(self.xi.len() - 1);
        PseudoControl::new(20.0 * self.mass_g * t.sin(), self.xi[i] * (0.001 * (0.01 * t).sin()))
    }
}

/// Plant-frame estimate from a lifted vector that may have drifted off the
/// manifold: `R` is the orthogonal projection of `z₁`.
pub fn estimate_from_lift(x: &LiftedState) -> (Vec3, Vec3, Rotation) {
    let r = Rotation::project(&x.z(1));
    (r.matrix() * x.p(1), r.matrix() * x.y(1), r)
}

pub fn approximation_error(p: &QuadParams, ord: TruncationOrder, cfg: &ApproxConfig) -> Result<ErrorSeries> {
    if !(cfg.dt > 0.0) || !(cfg.hold > 0.0) || cfg.record_every == 0 {
        return Err(Error::InvalidConfig("approximation study needs positive dt, hold and record interval".into()));
    }
    let signal = TestSignal::new(p, cfg.duration, cfg.hold, cfg.seed);
    let lpv = LpvSystem::new(*p, ord)?;
    let integ = Integrator { dt: cfg.dt, ..Integrator::default() };
    let j_inv = p.inertia_inverse()?;
    let steps = (cfg.duration / cfg.dt).round() as usize;

    let mut q = QuadState {
        position: Vec3::repeat(0.1),
        velocity: Vec3::repeat(0.1),
        rotation: Rotation::identity(),
        omega: Vec3::repeat(0.05),
    };
    let mut x = lift(&q, p, ord).into_vector();
    let mut out = ErrorSeries { m: ord.m(), n: ord.n(), t: vec![], err_x: vec![], err_v: vec![], psi: vec![] };

    let field = |x: &DVector<f64>, u: &PseudoControl| -> Result<DVector<f64>> {
        let xs = LiftedState::from_vector(x.clone(), ord)?;
        Ok(lpv.derivative_lifted(&xs, u))
    };
    let guard = integ.guard;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if k % cfg.record_every == 0 {
            let xs = LiftedState::from_vector(x.clone(), ord)?;
            let (xp, vp, rp) = estimate_from_lift(&xs);
            let rel = |a: Vec3, b: Vec3| if b.norm() > 0.0 { (a - b).norm() / b.norm() } else { (a - b).norm() };
            out.t.push(t);
            out.err_x.push(rel(xp, q.position));
            out.err_v.push(rel(vp, q.velocity));
            out.psi.push(attitude_error(q.rotation.matrix(), rp.matrix()));
        }
        if k == steps {
            break;
        }
        // Plant: pseudo control held over the step, converted with the current rate.
        let u_mid = signal.at(t);
        let body = pseudo_to_body(&q, &u_mid, p);
        q = integ.step(&q, &body, p, &j_inv).map_err(|e| e.at_time(t + cfg.dt))?;

        // Truncated LPV model, RK4 with the same held input.
        let h = cfg.dt;
        let k1 = field(&x, &u_mid)?;
        let k2 = field(&(&x + &k1 * (h / 2.0)), &u_mid)?;
        let k3 = field(&(&x + &k2 * (h / 2.0)), &u_mid)?;
        let k4 = field(&(&x + &k3 * h), &u_mid)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let mag = x.amax();
        if !mag.is_finite() || mag > guard {
            return Err(Error::NumericalBlowup { t: t + h, magnitude: mag });
        }
    }
    Ok(out)
}

pub fn approximation_error_experiment(p: &QuadParams, cfg: &ApproxConfig) -> Result<Vec<ErrorSeries>> {
    cfg.orders
        .iter()
        .map(|&(m, n)| approximation_error(p, TruncationOrder::new(m, n)?, cfg))
        .collect()
}
