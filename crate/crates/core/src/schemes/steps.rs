//! One-step maps of the particle schemes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SchemeConfig, TamingMode};
use crate::error::{config_err, Error, Result};
use crate::model::{Ensemble, ModelSpec};
use crate::paths::BridgedPath;

/// Per-thread work buffers.
pub(crate) struct Scratch {
    pub drift: Vec<f64>,
    pub model: Vec<f64>,
    pub sig: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub jac: Vec<f64>,
}

impl Scratch {
    pub fn new(model: &ModelSpec) -> Self {
        let d = model.dim;
        Self {
            drift: vec![0.0; d],
            model: vec![0.0; model.scratch_len()],
            sig: vec![0.0; d * model.noise_dim()],
            a: vec![0.0; d],
            b: vec![0.0; d],
            c: vec![0.0; d],
            jac: vec![0.0; d * d],
        }
    }
}

pub(crate) fn check_shape(values: &[f64], rows: usize, cols: usize, what: &str) -> Result<()> {
    if values.len() != rows * cols {
        return config_err(format!("{what} has {} entries, expected {rows}×{cols}", values.len()));
    }
    Ok(())
}

pub(crate) fn check_noise(model: &ModelSpec, n: usize, dw: &[f64], db: Option<&[f64]>) -> Result<()> {
    check_shape(dw, n, model.dim, "dW")?;
    match (&model.sigma0, db) {
        (Some(s), Some(db)) => check_shape(db, n, s.m, "dB"),
        (Some(_), None) => config_err("model has multiplicative noise but no dB was given"),
        (None, _) => Ok(()),
    }
}

/// `out ← x + b(p, μ)δ + σ dW + σ₀(x) dB`.
///
/// The drift is read at `p` against `measure`, which for the delay scheme
/// differ from the current state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn em_update(
    model: &ModelSpec,
    p: &[f64],
    measure: &Ensemble,
    x: &[f64],
    dw: &[f64],
    db: Option<&[f64]>,
    delta: f64,
    out: &mut [f64],
    s: &mut Scratch,
) {
    let Scratch { drift, model: ms, sig, .. } = s;
    model.drift_into(p, measure, drift, ms);
    add_noise(model, x, drift, dw, db, delta, out, sig);
}

/// `out ← x + drift·δ + σ dW + σ₀(x) dB`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn add_noise(
    model: &ModelSpec,
    x: &[f64],
    drift: &[f64],
    dw: &[f64],
    db: Option<&[f64]>,
    delta: f64,
    out: &mut [f64],
    sig: &mut [f64],
) {
    let d = model.dim;
    for c in 0..d {
        out[c] = x[c] + drift[c] * delta + model.sigma * dw[c];
    }
    if let (Some(s0), Some(db)) = (&model.sigma0, db) {
        (s0.map)(x, sig);
        let m = s0.m;
        for c in 0..d {
            let mut acc = 0.0;
            for k in 0..m {
                acc += sig[c * m + k] * db[k];
            }
            out[c] += acc;
        }
    }
}

fn per_particle(
    ens: &Ensemble,
    model: &ModelSpec,
    f: impl Fn(usize, &mut [f64], &mut Scratch) + Sync,
) -> Vec<f64> {
    let d = model.dim;
    let mut out = vec![0.0; ens.len() * d];
    out.par_chunks_mut(d)
        .enumerate()
        .for_each_init(|| Scratch::new(model), |s, (i, o)| f(i, o, s));
    out
}

pub fn explicit_em_step(
    ens: &Ensemble,
    model: &ModelSpec,
    cfg: &SchemeConfig,
    dw: &[f64],
    db: Option<&[f64]>,
) -> Result<Ensemble> {
    let (n, d, m) = (ens.len(), model.dim, model.noise_dim());
    check_noise(model, n, dw, db)?;
    let pos = per_particle(ens, model, |i, o, s| {
        let x = ens.particle(i);
        let dbi = db.map(|b| &b[i * m..(i + 1) * m]);
        em_update(model, x, ens, x, &dw[i * d..(i + 1) * d], dbi, cfg.delta, o, s);
    });
    Ok(Ensemble::from_parts_unchecked(pos, d, ens.time() + cfg.delta))
}

/// Solver statistics over one or more implicit steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solves: u64,
    pub max_residual: f64,
    pub max_iterations: usize,
    pub fallbacks: u64,
}

impl SolveStats {
    pub fn merge(&mut self, other: &SolveStats) {
        self.solves += other.solves;
        self.max_residual = self.max_residual.max(other.max_residual);
        self.max_iterations = self.max_iterations.max(other.max_iterations);
        self.fallbacks += other.fallbacks;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `J Δ = r` in place (`r ← Δ`) by Gaussian elimination with
/// partial pivoting. Returns false if `J` is numerically singular.
fn solve_dense(jac: &mut [f64], r: &mut [f64], d: usize) -> bool {
    if d == 1 {
        if jac[0] == 0.0 || !jac[0].is_finite() {
            return false;
        }
        r[0] /= jac[0];
        return true;
    }
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&a, &b| jac[a * d + col].abs().total_cmp(&jac[b * d + col].abs()))
            .unwrap();
        if jac[piv * d + col] == 0.0 || !jac[piv * d + col].is_finite() {
            return false;
        }
        if piv != col {
            for k in 0..d {
                jac.swap(piv * d + k, col * d + k);
            }
            r.swap(piv, col);
        }
        for row in col + 1..d {
            let f = jac[row * d + col] / jac[col * d + col];
            for k in col..d {
                jac[row * d + k] -= f * jac[col * d + k];
            }
            r[row] -= f * r[col];
        }
    }
    for col in (0..d).rev() {
        let mut v = r[col];
        for k in col + 1..d {
            v -= jac[col * d + k] * r[k];
        }
        r[col] = v / jac[col * d + col];
    }
    true
}

/// Residual `x − δ b₁(x) − rhs` into `f`; returns its norm.
fn residual(model: &ModelSpec, x: &[f64], rhs: &[f64], delta: f64, f: &mut [f64]) -> f64 {
    (model.b1)(x, f);
    for c in 0..x.len() {
        f[c] = x[c] - delta * f[c] - rhs[c];
    }
    norm(f)
}

/// Root of `x − δ b₁(x) = rhs`, starting from `rhs`. Newton with
/// backtracking, then damped fixed-point iteration if Newton stalls.
pub(crate) fn solve_implicit(
    model: &ModelSpec,
    rhs: &[f64],
    delta: f64,
    tol: f64,
    max_iter: usize,
    x: &mut [f64],
    s: &mut Scratch,
) -> Result<(f64, usize, bool)> {
    let d = model.dim;
    x.copy_from_slice(rhs);
    let mut r = residual(model, x, rhs, delta, &mut s.a);
    let mut it = 0;
    while r > tol && it < max_iter {
        it += 1;
        (model.grad_b1)(x, &mut s.jac);
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 } else { 0.0 };
                s.jac[i * d + j] = id - delta * s.jac[i * d + j];
            }
        }
        s.b.copy_from_slice(&s.a);
        if !solve_dense(&mut s.jac, &mut s.b, d) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1.0 / 1024.0 {
            for c in 0..d {
                s.c[c] = x[c] - t * s.b[c];
            }
            let rt = residual(model, &s.c, rhs, delta, &mut s.drift);
            if rt.is_finite() && rt < r {
                x.copy_from_slice(&s.c);
                s.a.copy_from_slice(&s.drift);
                r = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r <= tol {
        return Ok((r, it, false));
    }
    // Damped fixed point x ← (1−θ)x + θ(rhs + δ b₁(x)).
    let theta = 0.5;
    for _ in 0..max_iter {
        it += 1;
        (model.b1)(x, &mut s.b);
        for c in 0..d {
            x[c] = (1.0 - theta) * x[c] + theta * (rhs[c] + delta * s.b[c]);
        }
        r = residual(model, x, rhs, delta, &mut s.a);
        if r <= tol {
            return Ok((r, it, true));
        }
    }
    Err(Error::Solver { iterations: it, residual: r })
}

/// Implicit step `x* = xᵢ + b₁(x*)δ + (b₀∗μ)(xᵢ)δ + σ dWᵢ`, the interaction
/// term read at the step-start positions.
pub fn backward_em_step(
    ens: &Ensemble,
    model: &ModelSpec,
    cfg: &SchemeConfig,
    dw: &[f64],
) -> Result<(Ensemble, SolveStats)> {
    let (n, d) = (ens.len(), model.dim);
    check_shape(dw, n, d, "dW")?;
    let mut pos = vec![0.0; n * d];
    let stats = pos
        .par_chunks_mut(d)
        .enumerate()
        .map_init(
            || (Scratch::new(model), vec![0.0; d]),
            |(s, rhs), (i, out)| {
                let x = ens.particle(i);
                let (conv, rest) = s.model.split_at_mut(d);
                model.interaction_conv_into(x, ens, conv, rest);
                for c in 0..d {
                    rhs[c] = x[c] + s.model[c] * cfg.delta + model.sigma * dw[i * d + c];
                }
                let (res, iters, fallback) =
                    solve_implicit(model, rhs, cfg.delta, cfg.implicit_tol, cfg.implicit_max_iter, out, s)?;
                debug_assert!(res <= cfg.implicit_tol);
                Ok::<_, Error>(SolveStats { solves: 1, max_residual: res, max_iterations: iters, fallbacks: fallback as u64 })
            },
        )
        .try_reduce(SolveStats::default, |mut a, b| {
            a.merge(&b);
            Ok(a)
        })?;
    Ok((Ensemble::from_parts_unchecked(pos, d, ens.time() + cfg.delta), stats))
}

/// `out ← tamed drift at x`; see [`tamed_drift`].
pub(crate) fn tamed_drift_into(
    x: &[f64],
    ens: &Ensemble,
    model: &ModelSpec,
    cfg: &SchemeConfig,
    out: &mut [f64],
    s: &mut Scratch,
) {
    let d = model.dim;
    match cfg.taming_mode {
        TamingMode::GradientNorm => {
            (model.grad_b1)(x, &mut s.jac);
            let hs = norm(&s.jac);
            let denom = 1.0 + cfg.delta.sqrt() * hs;
            let (conv, rest) = s.model.split_at_mut(d);
            model.interaction_conv_into(x, ens, conv, rest);
            (model.b1)(x, out);
            for c in 0..d {
                out[c] /= denom;
            }
            for c in 0..d {
                out[c] += s.model[c];
            }
        }
        TamingMode::DriftNorm => {
            model.drift_into(x, ens, out, &mut s.model);
            let denom = 1.0 + cfg.delta.powf(cfg.kappa) * norm(out);
            for v in out.iter_mut() {
                *v /= denom;
            }
        }
    }
}

/// Gradient-norm mode: `b₁(x)/(1 + δ^{1/2}‖∇b₁(x)‖_HS) + (b₀∗μ)(x)`.
/// Drift-norm mode: `b(x, μ)/(1 + δ^κ |b(x, μ)|)`.
pub fn tamed_drift(x: &[f64], ens: &Ensemble, model: &ModelSpec, cfg: &SchemeConfig) -> Result<Vec<f64>> {
    if x.len() != model.dim || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState(format!("bad query point {x:?}")));
    }
    let mut out = vec![0.0; model.dim];
    tamed_drift_into(x, ens, model, cfg, &mut out, &mut Scratch::new(model));
    Ok(out)
}

pub fn tamed_em_step(ens: &Ensemble, model: &ModelSpec, cfg: &SchemeConfig, dw: &[f64]) -> Result<Ensemble> {
    let (n, d) = (ens.len(), model.dim);
    check_shape(dw, n, d, "dW")?;
    let pos = per_particle(ens, model, |i, o, s| {
        let x = ens.particle(i);
        let mut drift = std::mem::take(&mut s.a);
        tamed_drift_into(x, ens, model, cfg, &mut drift, s);
        add_noise(model, x, &drift, &dw[i * d..(i + 1) * d], None, cfg.delta, o, &mut s.sig);
        s.a = drift;
    });
    Ok(Ensemble::from_parts_unchecked(pos, d, ens.time() + cfg.delta))
}

fn drifts(ens: &Ensemble, model: &ModelSpec) -> Vec<f64> {
    per_particle(ens, model, |i, o, s| model.drift_into(ens.particle(i), ens, o, &mut s.model))
}

fn step_from_drifts(drifts: &[f64], d: usize, delta: f64) -> (f64, f64) {
    let max_sq = drifts.chunks(d).map(|b| b.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    (delta * (1.0 / (1.0 + max_sq)), max_sq)
}

/// `h = δ · minᵢ 1/(1 + |b(xᵢ, μ)|²)`.
pub fn adaptive_step_size(ens: &Ensemble, model: &ModelSpec, cfg: &SchemeConfig) -> f64 {
    step_from_drifts(&drifts(ens, model), model.dim, cfg.delta).0
}

/// Brownian paths of an adaptive run, one per particle, and their current
/// values.
#[derive(Clone, Debug)]
pub struct AdaptivePaths {
    paths: Vec<BridgedPath>,
    w: Vec<f64>,
    dim: usize,
}

impl AdaptivePaths {
    pub fn new(seed: u64, experiment: u64, n: usize, dim: usize, fine_dt: f64) -> Self {
        let paths = (0..n).map(|i| BridgedPath::new(seed, experiment, i as u64, dim, fine_dt)).collect();
        Self { paths, w: vec![0.0; n * dim], dim }
    }

    /// `W(t) − W(t_prev)` for every particle, row-major.
    pub fn increments_to(&mut self, t: f64) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.w.len()];
        out.par_chunks_mut(d)
            .zip(self.w.par_chunks_mut(d))
            .zip(self.paths.par_iter_mut())
            .for_each(|((o, w), p)| {
                p.value_at(t, o);
                for c in 0..d {
                    let new = o[c];
                    o[c] = new - w[c];
                    w[c] = new;
                }
            });
        out
    }
}

/// Adaptive step; also returns `maxᵢ |bᵢ|² h / δ`. The step-size bounds
/// are checked here and reported as an invalid state if they fail.
pub(crate) fn adaptive_em_step_checked(
    ens: &Ensemble,
    model: &ModelSpec,
    cfg: &SchemeConfig,
    paths: &mut AdaptivePaths,
    landing: Option<f64>,
) -> Result<(Ensemble, f64, f64)> {
    let d = model.dim;
    if paths.w.len() != ens.len() * d {
        return config_err("adaptive noise paths do not match the ensemble");
    }
    let b = drifts(ens, model);
    let (mut h, max_sq) = step_from_drifts(&b, d, cfg.delta);
    // A step that would pass the landing time is cut to end exactly on it.
    let mut t = ens.time() + h;
    if let Some(target) = landing.filter(|&target| target > ens.time() && t >= target) {
        t = target;
        h = target - ens.time();
    }
    let ratio = max_sq * h / cfg.delta;
    let slack = 1.0 + 1e-12;
    if !(h > 0.0 && h <= cfg.delta * slack && (1.0 + max_sq) * h <= cfg.delta * slack) {
        return Err(Error::InvalidState(format!(
            "adaptive step h = {h} breaks its bounds (delta = {}, max |b|^2 = {max_sq})",
            cfg.delta
        )));
    }
    let dw = paths.increments_to(t);
    let mut pos = vec![0.0; ens.len() * d];
    pos.par_chunks_mut(d).enumerate().for_each(|(i, o)| {
        let x = ens.particle(i);
        for c in 0..d {
            o[c] = x[c] + b[i * d + c] * h + model.sigma * dw[i * d + c];
        }
    });
    Ok((Ensemble::from_parts_unchecked(pos, d, t), h, ratio))
}

/// `xᵢ ← xᵢ + b(xᵢ, μ)h + σ ΔWᵢ` with the common step `h` of
/// [`adaptive_step_size`] and `ΔW` read off the particles' paths.
pub fn adaptive_em_step(
    ens: &Ensemble,
    model: &ModelSpec,
    cfg: &SchemeConfig,
    paths: &mut AdaptivePaths,
) -> Result<(Ensemble, f64)> {
    adaptive_em_step_checked(ens, model, cfg, paths, None).map(|(e, h, _)| (e, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kernel, ModelOverrides};
    use crate::schemes::SchemeKind;
    use std::sync::Arc;

    fn dw_model(k: f64) -> ModelSpec {
        ModelSpec::gallery("double-well-1d", &ModelOverrides { k_interaction: Some(k), ..Default::default() }).unwrap()
    }

    fn linear(slope: f64, sigma: f64) -> ModelSpec {
        let mut m = dw_model(0.0);
        m.sigma = sigma;
        m.b1 = Arc::new(move |x: &[f64], o: &mut [f64]| o[0] = slope * x[0]);
        m.grad_b1 = Arc::new(move |_: &[f64], o: &mut [f64]| o[0] = slope);
        m
    }

    fn cfg(kind: SchemeKind, delta: f64) -> SchemeConfig {
        SchemeConfig::new(kind, delta, 1.0)
    }

    #[test]
    fn zero_dynamics_leave_ensemble_unchanged() {
        let mut m = linear(0.0, 1.0);
        m.b0 = Kernel::zero();
        let e = Ensemble::from_scalars(&[0.3, -2.0, 5.0], 0.0).unwrap();
        let out = explicit_em_step(&e, &m, &cfg(SchemeKind::Explicit, 0.1), &[0.0; 3], None).unwrap();
        assert_eq!(out.positions(), e.positions());
    }

    #[test]
    fn deterministic_ou_step() {
        let m = linear(-1.0, 0.0);
        let e = Ensemble::from_scalars(&[1.0], 0.0).unwrap();
        let out = explicit_em_step(&e, &m, &cfg(SchemeKind::Explicit, 0.1), &[0.0], None).unwrap();
        assert!((out.positions()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn double_well_pair_matches_scalar_loop() {
        let m = dw_model(0.1);
        let e = Ensemble::from_scalars(&[1.0, -1.0], 0.0).unwrap();
        let out = explicit_em_step(&e, &m, &cfg(SchemeKind::Explicit, 0.01), &[0.0, 0.0], None).unwrap();
        let xs = [1.0f64, -1.0];
        let mean = (xs[0] + xs[1]) / 2.0;
        for (i, x) in xs.iter().enumerate() {
            let b = x - x * x * x - 0.1 * (x - mean);
            assert!((out.positions()[i] - (x + 0.01 * b)).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let m = dw_model(0.0);
        let e = Ensemble::from_scalars(&[1.0, 2.0], 0.0).unwrap();
        assert!(matches!(
            explicit_em_step(&e, &m, &cfg(SchemeKind::Explicit, 0.1), &[0.0], None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backward_linear_closed_form() {
        let m = linear(-2.0, 1.0);
        let e = Ensemble::from_scalars(&[1.0], 0.0).unwrap();
        let (out, st) = backward_em_step(&e, &m, &cfg(SchemeKind::Backward, 0.1), &[0.3]).unwrap();
        assert!((out.positions()[0] - 1.3 / 1.2).abs() < 1e-12);
        assert!(st.max_residual <= 1e-12);
    }

    #[test]
    fn backward_zero_step_is_identity() {
        let m = dw_model(0.05);
        let e = Ensemble::from_scalars(&[1.5, -0.2], 0.0).unwrap();
        let (out, _) = backward_em_step(&e, &m, &cfg(SchemeKind::Backward, 0.0), &[0.0, 0.0]).unwrap();
        assert_eq!(out.positions(), e.positions());
    }

    #[test]
    fn backward_cubic_matches_bisection() {
        let m = dw_model(0.0);
        let e = Ensemble::from_scalars(&[2.0], 0.0).unwrap();
        let (out, _) = backward_em_step(&e, &m, &cfg(SchemeKind::Backward, 0.05), &[0.0]).unwrap();
        // g(x) = x − 2 + (x³ − x)·0.05 is increasing.
        let g = |x: f64| x - 2.0 + (x * x * x - x) * 0.05;
        let (mut lo, mut hi) = (0.0f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        assert!((out.positions()[0] - 0.5 * (lo + hi)).abs() < 1e-10);
    }

    #[test]
    fn solver_error_carries_residual() {
        let m = dw_model(0.0);
        let e = Ensemble::from_scalars(&[2.0], 0.0).unwrap();
        let mut c = cfg(SchemeKind::Backward, 0.05);
        c.implicit_tol = 0.0;
        c.implicit_max_iter = 1;
        match backward_em_step(&e, &m, &c, &[0.0]) {
            Err(Error::Solver { iterations, residual }) => {
                assert!(iterations >= 1);
                assert!(residual >= 0.0);
            }
            Ok((out, _)) => assert_eq!(out.positions().len(), 1),
            Err(other) => panic!("{other}"),
        }
    }

    #[test]
    fn gradient_taming_example() {
        let m = dw_model(0.0);
        let e = Ensemble::from_scalars(&[2.0], 0.0).unwrap();
        let v = tamed_drift(&[2.0], &e, &m, &cfg(SchemeKind::Tamed, 0.01)).unwrap();
        assert!((v[0] + 6.0 / 2.1).abs() < 1e-14);
    }

    #[test]
    fn drift_norm_taming_examples() {
        let mut m = linear(0.0, 1.0);
        let mut c = cfg(SchemeKind::Tamed, 0.04);
        c.taming_mode = TamingMode::DriftNorm;
        let e = Ensemble::from_scalars(&[0.0], 0.0).unwrap();
        assert_eq!(tamed_drift(&[1.0], &e, &m, &c).unwrap()[0], 0.0);
        m.b1 = Arc::new(|_: &[f64], o: &mut [f64]| o[0] = 10.0);
        assert!((tamed_drift(&[1.0], &e, &m, &c).unwrap()[0] - 10.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn taming_noop_matches_explicit_bitwise() {
        // ∇b₁ ≡ 0: b₁ constant.
        let mut m = dw_model(0.07);
        m.b1 = Arc::new(|_: &[f64], o: &mut [f64]| o[0] = 0.37);
        m.grad_b1 = Arc::new(|_: &[f64], o: &mut [f64]| o[0] = 0.0);
        let e = Ensemble::from_scalars(&[0.1, 1.3, -0.7], 0.0).unwrap();
        let dw = [0.01, -0.2, 0.05];
        let a = explicit_em_step(&e, &m, &cfg(SchemeKind::Explicit, 0.1), &dw, None).unwrap();
        let b = tamed_em_step(&e, &m, &cfg(SchemeKind::Tamed, 0.1), &dw).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tamed_step_finite_where_explicit_grows() {
        let m = dw_model(0.0);
        let e = Ensemble::from_scalars(&[3.0], 0.0).unwrap();
        let ex = explicit_em_step(&e, &m, &cfg(SchemeKind::Explicit, 0.5), &[0.0], None).unwrap();
        assert_eq!(ex.positions()[0], -9.0);
        let mut c = cfg(SchemeKind::Tamed, 0.5);
        c.taming_mode = TamingMode::GradientNorm;
        let t = tamed_em_step(&e, &m, &c, &[0.0]).unwrap();
        assert!(t.positions()[0].abs() < 3.0);
    }

    #[test]
    fn adaptive_step_examples() {
        let mut m = linear(0.0, 1.0);
        let e = Ensemble::from_scalars(&[0.0, 1.0], 0.0).unwrap();
        assert_eq!(adaptive_step_size(&e, &m, &cfg(SchemeKind::Adaptive, 0.1)), 0.1);
        // |b|² = 3 and 8 at the two particles.
        m.b1 = Arc::new(|x: &[f64], o: &mut [f64]| o[0] = if x[0] == 0.0 { 3f64.sqrt() } else { 8f64.sqrt() });
        let h = adaptive_step_size(&e, &m, &cfg(SchemeKind::Adaptive, 0.1));
        assert!((h - 0.1 / 9.0).abs() < 1e-16);
    }

    #[test]
    fn adaptive_zero_drift_is_explicit_with_step_delta() {
        let mut m = linear(0.0, 1.0);
        m.b0 = Kernel::zero();
        let e = Ensemble::from_scalars(&[0.5, -0.5], 0.0).unwrap();
        let c = cfg(SchemeKind::Adaptive, 0.1);
        let mut paths = AdaptivePaths::new(1, 2, 2, 1, 0.1);
        let (out, h) = adaptive_em_step(&e, &m, &c, &mut paths).unwrap();
        assert_eq!(h, 0.1);
        let mut fresh = AdaptivePaths::new(1, 2, 2, 1, 0.1);
        let dw = fresh.increments_to(0.1);
        let ex = explicit_em_step(&e, &m, &cfg(SchemeKind::Explicit, 0.1), &dw, None).unwrap();
        for (a, b) in out.positions().iter().zip(ex.positions()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_solver_two_by_two() {
        let mut j = vec![0.0, 2.0, 1.0, 1.0];
        let mut r = vec![4.0, 3.0];
        assert!(solve_dense(&mut j, &mut r, 2));
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
    }
}
