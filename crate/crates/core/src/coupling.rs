//! Asymptotic reflection coupling of two particle systems.
//!
//! Far apart (`|Z| ≥ 2ε`) the second component receives the first one's
//! noise reflected across the hyperplane orthogonal to `Z`; within `ε` both
//! receive the same noise. The continuous coupled system is discretised with
//! an inner Euler step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::metrics::{ensemble_w1_with_se, DEFAULT_PROJECTIONS};
use crate::model::{Ensemble, ModelSpec};
use crate::paths::{experiment_id, integer_ratio, MotionTag, StreamId, StreamRng};
use crate::schemes::steps::{check_shape, tamed_drift_into, Scratch};
use crate::schemes::{DelayHistory, InitialLaw, SchemeConfig, SchemeKind};

/// `0` on `[0, ε]`, cubic smoothstep on `[ε, 2ε]`, `1` beyond.
pub fn cutoff_h(epsilon: f64, r: f64) -> f64 {
    if r <= epsilon {
        0.0
    } else if r >= 2.0 * epsilon {
        1.0
    } else {
        let s = (r - epsilon) / epsilon;
        s * s * (3.0 - 2.0 * s)
    }
}

/// `√(1 − h_ε(r)²)`.
pub fn cutoff_h_star(epsilon: f64, r: f64) -> f64 {
    let h = cutoff_h(epsilon, r);
    (1.0 - h * h).max(0.0).sqrt()
}

/// `I − 2eeᵀ` with `e = z/|z|`, and the identity at `z = 0`. Row-major.
pub fn reflection_matrix(z: &[f64]) -> Vec<f64> {
    let d = z.len();
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    if n > 0.0 {
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] -= 2.0 * (z[i] / n) * (z[j] / n);
            }
        }
    }
    m
}

/// `out ← Π(z) v` without forming the matrix.
pub fn apply_reflection(z: &[f64], v: &[f64], out: &mut [f64]) {
    let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        out.copy_from_slice(v);
        return;
    }
    let dot: f64 = z.iter().zip(v).map(|(a, b)| (a / n) * b).sum();
    for c in 0..z.len() {
        out[c] = v[c] - 2.0 * dot * (z[c] / n);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub epsilon: f64,
    pub inner_delta: f64,
    pub horizon: f64,
    /// Size of the ensemble standing in for the first component's law; `0`
    /// uses the first component's own particles.
    pub proxy_size: usize,
}

impl CouplingConfig {
    pub fn new(epsilon: f64, horizon: f64) -> Self {
        Self { epsilon, inner_delta: 1e-3f64.min(epsilon / 4.0), horizon, proxy_size: 4096 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return config_err(format!("key `epsilon`: must be positive, got {}", self.epsilon));
        }
        if !(self.inner_delta > 0.0) {
            return config_err(format!("key `inner_delta`: must be positive, got {}", self.inner_delta));
        }
        if !(self.horizon >= 0.0) {
            return config_err(format!("key `horizon`: must be nonnegative, got {}", self.horizon));
        }
        Ok(())
    }

    fn steps_to(&self, t: f64) -> Result<u64> {
        if t == 0.0 {
            return Ok(0);
        }
        integer_ratio(t, self.inner_delta)
            .map(|k| k as u64)
            .ok_or_else(|| Error::Config(format!("time {t} is not on the inner grid of step {}", self.inner_delta)))
    }
}

/// Drift memory of the second component: tamed drifts are frozen over
/// scheme steps, delayed drifts need the component's past.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondState {
    frozen: Option<Vec<f64>>,
    refresh_every: u64,
    history: Option<DelayHistory>,
}

impl SecondState {
    pub fn new(y_n: &Ensemble, second: &SchemeConfig, inner_delta: f64) -> Result<Self> {
        match second.kind {
            SchemeKind::Explicit => Ok(Self { frozen: None, refresh_every: 1, history: None }),
            SchemeKind::Tamed => {
                let every = integer_ratio(second.delta, inner_delta).ok_or_else(|| {
                    Error::Config(format!("tamed step {} is not a multiple of inner_delta {inner_delta}", second.delta))
                })?;
                Ok(Self { frozen: None, refresh_every: every as u64, history: None })
            }
            SchemeKind::Delay => {
                let lag = if second.r0 == 0.0 {
                    0
                } else {
                    integer_ratio(second.r0, inner_delta).ok_or_else(|| {
                        Error::Config(format!("key `r0`: {} is not a multiple of inner_delta {inner_delta}", second.r0))
                    })?
                };
                Ok(Self { frozen: None, refresh_every: 1, history: Some(DelayHistory::constant(y_n.clone(), lag)) })
            }
            other => config_err(format!(
                "key `scheme`: the coupled second component supports explicit, tamed or delay drifts, not {}",
                other.name()
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub y: Ensemble,
    pub y_n: Ensemble,
    /// `y − y_n`, row-major.
    pub z: Vec<f64>,
    pub proxy: Option<Ensemble>,
    pub second: SecondState,
    pub step: u64,
}

fn difference(a: &Ensemble, b: &Ensemble) -> Vec<f64> {
    a.positions().iter().zip(b.positions()).map(|(x, y)| x - y).collect()
}

impl CoupledState {
    pub fn new(
        y: Ensemble,
        y_n: Ensemble,
        proxy: Option<Ensemble>,
        second: &SchemeConfig,
        ccfg: &CouplingConfig,
    ) -> Result<Self> {
        if y.len() != y_n.len() || y.dim() != y_n.dim() {
            return config_err("coupled components must have the same shape");
        }
        let z = difference(&y, &y_n);
        let s = SecondState::new(&y_n, second, ccfg.inner_delta)?;
        Ok(Self { y, y_n, z, proxy, second: s, step: 0 })
    }

    pub fn distances(&self) -> Vec<f64> {
        let d = self.y.dim();
        self.z.chunks(d).map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

fn drifts_against(model: &ModelSpec, x: &Ensemble, measure: &Ensemble) -> Vec<f64> {
    let d = model.dim;
    let mut out = vec![0.0; x.len() * d];
    out.par_chunks_mut(d)
        .enumerate()
        .for_each_init(|| vec![0.0; model.scratch_len()], |s, (i, o)| model.drift_into(x.particle(i), measure, o, s));
    out
}

fn second_drifts(model: &ModelSpec, y_n: &Ensemble, second: &SchemeConfig, st: &mut SecondState, step: u64) -> Vec<f64> {
    match second.kind {
        SchemeKind::Tamed => {
            if st.frozen.is_none() || step.is_multiple_of(st.refresh_every) {
                let d = model.dim;
                let mut out = vec![0.0; y_n.len() * d];
                out.par_chunks_mut(d).enumerate().for_each_init(
                    || Scratch::new(model),
                    |s, (i, o)| tamed_drift_into(y_n.particle(i), y_n, model, second, o, s),
                );
                st.frozen = Some(out);
            }
            st.frozen.clone().expect("frozen drift present")
        }
        SchemeKind::Delay => {
            let h = st.history.as_ref().expect("delay history present");
            let old = h.delayed();
            drifts_against(model, old, old)
        }
        _ => drifts_against(model, y_n, y_n),
    }
}

fn sigma0_times(model: &ModelSpec, x: &[f64], db: &[f64], buf: &mut [f64], out: &mut [f64]) {
    if let Some(s0) = &model.sigma0 {
        (s0.map)(x, buf);
        let m = s0.m;
        for c in 0..x.len() {
            let mut acc = 0.0;
            for k in 0..m {
                acc += buf[c * m + k] * db[k];
            }
            out[c] += acc;
        }
    }
}

/// Plain explicit step of an ensemble against a given measure.
fn explicit_against(
    model: &ModelSpec,
    x: &Ensemble,
    measure: &Ensemble,
    h: f64,
    dw: &[f64],
    db: Option<&[f64]>,
) -> Ensemble {
    let (d, m) = (model.dim, model.noise_dim());
    let b = drifts_against(model, x, measure);
    let mut pos = vec![0.0; x.len() * d];
    pos.par_chunks_mut(d).enumerate().for_each_init(
        || vec![0.0; d * m],
        |buf, (i, o)| {
            let xi = x.particle(i);
            for c in 0..d {
                o[c] = xi[c] + b[i * d + c] * h + model.sigma * dw[i * d + c];
            }
            if let Some(db) = db {
                sigma0_times(model, xi, &db[i * m..(i + 1) * m], buf, o);
            }
        },
    );
    Ensemble::from_parts_unchecked(pos, d, x.time() + h)
}

/// Noise for the proxy ensemble.
pub struct ProxyNoise<'a> {
    pub dw: &'a [f64],
    pub db: Option<&'a [f64]>,
}

/// One inner Euler step of the coupled pair.
#[allow(clippy::too_many_arguments)]
pub fn coupled_step(
    mut state: CoupledState,
    model: &ModelSpec,
    ccfg: &CouplingConfig,
    second: &SchemeConfig,
    dw1: &[f64],
    dw2: &[f64],
    db: Option<&[f64]>,
    proxy_noise: Option<ProxyNoise<'_>>,
) -> Result<CoupledState> {
    let (n, d, m) = (state.y.len(), model.dim, model.noise_dim());
    check_shape(dw1, n, d, "dW1")?;
    check_shape(dw2, n, d, "dW2")?;
    match (&model.sigma0, db) {
        (Some(_), Some(db)) => check_shape(db, n, m, "dB")?,
        (Some(_), None) => return config_err("model has multiplicative noise but no dB was given"),
        (None, _) => {}
    }
    let h = ccfg.inner_delta;
    let eps = ccfg.epsilon;

    let b1 = match &state.proxy {
        Some(p) => drifts_against(model, &state.y, p),
        None => drifts_against(model, &state.y, &state.y),
    };
    let b2 = second_drifts(model, &state.y_n, second, &mut state.second, state.step);

    let mut y = vec![0.0; n * d];
    let mut yn = vec![0.0; n * d];
    let (sy, syn, z) = (&state.y, &state.y_n, &state.z);
    y.par_chunks_mut(d)
        .zip(yn.par_chunks_mut(d))
        .enumerate()
        .for_each_init(
            || (vec![0.0; d], vec![0.0; d * m]),
            |(refl, buf), (i, (oy, on))| {
                let zi = &z[i * d..(i + 1) * d];
                let r = zi.iter().map(|v| v * v).sum::<f64>().sqrt();
                let hc = cutoff_h(eps, r);
                let hs = cutoff_h_star(eps, r);
                let w1 = &dw1[i * d..(i + 1) * d];
                let w2 = &dw2[i * d..(i + 1) * d];
                apply_reflection(zi, w1, refl);
                let (xy, xn) = (sy.particle(i), syn.particle(i));
                for c in 0..d {
                    oy[c] = xy[c] + b1[i * d + c] * h + model.sigma * (hc * w1[c] + hs * w2[c]);
                    on[c] = xn[c] + b2[i * d + c] * h + model.sigma * (hc * refl[c] + hs * w2[c]);
                }
                if let Some(db) = db {
                    let dbi = &db[i * m..(i + 1) * m];
                    sigma0_times(model, xy, dbi, buf, oy);
                    sigma0_times(model, xn, dbi, buf, on);
                }
            },
        );

    let t = state.y.time() + h;
    let proxy = match (state.proxy.take(), proxy_noise) {
        (Some(p), Some(noise)) => {
            check_shape(noise.dw, p.len(), d, "proxy dW")?;
            Some(explicit_against(model, &p, &p, h, noise.dw, noise.db))
        }
        (Some(_), None) => return config_err("a proxy ensemble needs its own noise"),
        (None, _) => None,
    };
    let y = Ensemble::from_parts_unchecked(y, d, t);
    let y_n = Ensemble::from_parts_unchecked(yn, d, t);
    if let Some(hist) = state.second.history.as_mut() {
        hist.push(y_n.clone());
    }
    let z = difference(&y, &y_n);
    Ok(CoupledState { y, y_n, z, proxy, second: state.second, step: state.step + 1 })
}

/// Per-particle Gaussian sources for one tag.
struct Bank {
    rngs: Vec<StreamRng>,
    dim: usize,
}

impl Bank {
    fn new(seed: u64, experiment: u64, n: usize, dim: usize, tag: MotionTag) -> Self {
        let rngs = (0..n).map(|i| StreamRng::new(seed, StreamId::new(experiment, i as u64, tag))).collect();
        Self { rngs, dim }
    }

    fn fill(&mut self, out: &mut [f64], scale: f64) {
        out.par_chunks_mut(self.dim).zip(self.rngs.par_iter_mut()).for_each(|(o, r)| {
            for v in o.iter_mut() {
                *v = scale * r.normal();
            }
        });
    }
}

/// Experiment labels of the validation runs; coupled and uncoupled runs
/// never share one.
pub const COUPLED: &str = "coupled";
pub const COUPLED_PROXY: &str = "coupled-proxy";
pub const UNCOUPLED_FIRST: &str = "uncoupled-first";
pub const UNCOUPLED_FIRST_PROXY: &str = "uncoupled-first-proxy";
pub const UNCOUPLED_SECOND: &str = "uncoupled-second";

/// Every experiment id used by validation run `run`, with its label.
pub fn validation_experiments(run: u64) -> Vec<(&'static str, u64)> {
    [COUPLED, COUPLED_PROXY, UNCOUPLED_FIRST, UNCOUPLED_FIRST_PROXY, UNCOUPLED_SECOND]
        .into_iter()
        .map(|l| (l, experiment_id(l, &[run])))
        .collect()
}

/// Coupled run with `Y₀ ~ init_y` and `Y₀ᴺ ~ init_yn` drawn independently;
/// returns the states at `times`.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    model: &ModelSpec,
    ccfg: &CouplingConfig,
    second: &SchemeConfig,
    n: usize,
    init_y: &InitialLaw,
    init_yn: &InitialLaw,
    seed: u64,
    run: u64,
    times: &[f64],
) -> Result<Vec<CoupledState>> {
    ccfg.validate()?;
    let (d, m) = (model.dim, model.noise_dim());
    let exp = experiment_id(COUPLED, &[run]);
    let pexp = experiment_id(COUPLED_PROXY, &[run]);
    let y0 = init_y.sample(n, seed, exp)?;
    let y_n0 = init_yn.sample(n, seed, exp ^ SECOND_INIT)?;
    let p = ccfg.proxy_size;
    let proxy0 = if p > 0 { Some(init_y.sample(p, seed, pexp)?) } else { None };
    let mut state = CoupledState::new(y0, y_n0, proxy0, second, ccfg)?;
    let targets = times.iter().map(|&t| ccfg.steps_to(t)).collect::<Result<Vec<_>>>()?;
    let total = ccfg.steps_to(ccfg.horizon)?;
    let scale = ccfg.inner_delta.sqrt();
    let mut w1 = Bank::new(seed, exp, n, d, MotionTag::W);
    let mut w2 = Bank::new(seed, exp, n, d, MotionTag::W2);
    let mut bb = (m > 0).then(|| Bank::new(seed, exp, n, m, MotionTag::B));
    let mut pw = (p > 0).then(|| Bank::new(seed, pexp, p, d, MotionTag::W));
    let mut pb = (p > 0 && m > 0).then(|| Bank::new(seed, pexp, p, m, MotionTag::B));
    let (mut dw1, mut dw2, mut db) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * m]);
    let (mut pdw, mut pdb) = (vec![0.0; p * d], vec![0.0; p * m]);

    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    for step in 0..=total {
        while next < targets.len() && targets[next] == step {
            out.push(state.clone());
            next += 1;
        }
        if step == total {
            break;
        }
        w1.fill(&mut dw1, scale);
        w2.fill(&mut dw2, scale);
        if let Some(b) = bb.as_mut() {
            b.fill(&mut db, scale);
        }
        if let Some(b) = pw.as_mut() {
            b.fill(&mut pdw, scale);
        }
        if let Some(b) = pb.as_mut() {
            b.fill(&mut pdb, scale);
        }
        let proxy_noise = (p > 0).then(|| ProxyNoise { dw: &pdw, db: (m > 0).then_some(pdb.as_slice()) });
        state = coupled_step(state, model, ccfg, second, &dw1, &dw2, (m > 0).then_some(db.as_slice()), proxy_noise)?;
        if state.y.find_blow_up().is_some() || state.y_n.find_blow_up().is_some() {
            return Err(Error::InvalidState(format!("coupled run blew up at t = {}", state.y.time())));
        }
    }
    if next < targets.len() {
        return config_err("snapshot times beyond the coupling horizon");
    }
    Ok(out)
}

/// Mixed into a run's experiment id for the second component's initial draw.
const SECOND_INIT: u64 = 0x5ec0_9d00_0000_0001;

/// Which uncoupled system to run.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Role {
    First,
    Second,
}

/// Terminal ensemble of an uncoupled system driven by a single Brownian
/// motion per particle.
#[allow(clippy::too_many_arguments)]
fn run_uncoupled(
    model: &ModelSpec,
    ccfg: &CouplingConfig,
    second: &SchemeConfig,
    n: usize,
    init: &InitialLaw,
    seed: u64,
    run: u64,
    role: Role,
) -> Result<Ensemble> {
    let (d, m) = (model.dim, model.noise_dim());
    let (label, plabel) = match role {
        Role::First => (UNCOUPLED_FIRST, UNCOUPLED_FIRST_PROXY),
        Role::Second => (UNCOUPLED_SECOND, UNCOUPLED_SECOND),
    };
    let exp = experiment_id(label, &[run]);
    let pexp = experiment_id(plabel, &[run]);
    let mut x = init.sample(n, seed, exp)?;
    let p = if role == Role::First { ccfg.proxy_size } else { 0 };
    let mut proxy = if p > 0 { Some(init.sample(p, seed, pexp)?) } else { None };
    let mut st = SecondState::new(&x, second, ccfg.inner_delta)?;
    let total = ccfg.steps_to(ccfg.horizon)?;
    let h = ccfg.inner_delta;
    let scale = h.sqrt();
    let mut w = Bank::new(seed, exp, n, d, MotionTag::W);
    let mut bb = (m > 0).then(|| Bank::new(seed, exp, n, m, MotionTag::B));
    let mut pw = (p > 0).then(|| Bank::new(seed, pexp, p, d, MotionTag::W));
    let mut pb = (p > 0 && m > 0).then(|| Bank::new(seed, pexp, p, m, MotionTag::B));
    let (mut dw, mut db) = (vec![0.0; n * d], vec![0.0; n * m]);
    let (mut pdw, mut pdb) = (vec![0.0; p * d], vec![0.0; p * m]);
    for step in 0..total {
        w.fill(&mut dw, scale);
        if let Some(b) = bb.as_mut() {
            b.fill(&mut db, scale);
        }
        let dbo = (m > 0).then_some(db.as_slice());
        let b = match role {
            Role::First => drifts_against(model, &x, proxy.as_ref().unwrap_or(&x)),
            Role::Second => second_drifts(model, &x, second, &mut st, step),
        };
        let mut pos = vec![0.0; n * d];
        pos.par_chunks_mut(d).enumerate().for_each_init(
            || vec![0.0; d * m],
            |buf, (i, o)| {
                let xi = x.particle(i);
                for c in 0..d {
                    o[c] = xi[c] + b[i * d + c] * h + model.sigma * dw[i * d + c];
                }
                if let Some(db) = dbo {
                    sigma0_times(model, xi, &db[i * m..(i + 1) * m], buf, o);
                }
            },
        );
        if let Some(px) = proxy.take() {
            if let Some(b) = pw.as_mut() {
                b.fill(&mut pdw, scale);
            }
            if let Some(b) = pb.as_mut() {
                b.fill(&mut pdb, scale);
            }
            proxy = Some(explicit_against(model, &px, &px, h, &pdw, (m > 0).then_some(pdb.as_slice())));
        }
        x = Ensemble::from_parts_unchecked(pos, d, x.time() + h);
        if let Some(hist) = st.history.as_mut() {
            hist.push(x.clone());
        }
        if x.find_blow_up().is_some() {
            return Err(Error::InvalidState(format!("uncoupled run blew up at t = {}", x.time())));
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub w1: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub samples: usize,
    pub first: ComponentCheck,
    pub second: ComponentCheck,
    pub pass: bool,
    pub cutoff: String,
}

fn pooled(parts: Vec<Ensemble>) -> Result<Ensemble> {
    let d = parts[0].dim();
    let t = parts[0].time();
    let pos: Vec<f64> = parts.into_iter().flat_map(Ensemble::into_positions).collect();
    Ensemble::new(pos, d, t)
}

fn component_check(a: &Ensemble, b: &Ensemble, seed: u64) -> Result<ComponentCheck> {
    let (w1, se) = ensemble_w1_with_se(a, b, DEFAULT_PROJECTIONS, seed)?;
    Ok(ComponentCheck { w1, stderr: se, pass: w1 <= 3.0 * se })
}

/// Compares each coupled component's terminal marginal (pooled over
/// particles and runs) with an independently simulated uncoupled system.
/// Passes iff both W1 distances are within three combined standard errors.
#[allow(clippy::too_many_arguments)]
pub fn marginal_validation(
    model: &ModelSpec,
    ccfg: &CouplingConfig,
    second: &SchemeConfig,
    n: usize,
    n_runs: usize,
    init: &InitialLaw,
    seed: u64,
) -> Result<MarginalReport> {
    if n == 0 || n_runs == 0 {
        return config_err("marginal validation needs particles and runs");
    }
    let mut cy = Vec::with_capacity(n_runs);
    let mut cn = Vec::with_capacity(n_runs);
    let mut uy = Vec::with_capacity(n_runs);
    let mut un = Vec::with_capacity(n_runs);
    for r in 0..n_runs as u64 {
        let states = run_coupled(model, ccfg, second, n, init, init, seed, r, &[ccfg.horizon])?;
        let last = states.into_iter().next().expect("terminal state");
        cy.push(last.y);
        cn.push(last.y_n);
        uy.push(run_uncoupled(model, ccfg, second, n, init, seed, r, Role::First)?);
        un.push(run_uncoupled(model, ccfg, second, n, init, seed, r, Role::Second)?);
    }
    let first = component_check(&pooled(cy)?, &pooled(uy)?, seed)?;
    let second_check = component_check(&pooled(cn)?, &pooled(un)?, seed)?;
    let pass = first.pass && second_check.pass;
    Ok(MarginalReport {
        samples: n * n_runs,
        first,
        second: second_check,
        pass,
        cutoff: "cubic smoothstep on [eps, 2 eps]".into(),
    })
}

/// `E|Z_t|` with its standard error at each of `times`, over `n_runs`
/// coupled runs of `n` particles.
#[allow(clippy::too_many_arguments)]
pub fn mean_distance_series(
    model: &ModelSpec,
    ccfg: &CouplingConfig,
    second: &SchemeConfig,
    n: usize,
    n_runs: usize,
    init_y: &InitialLaw,
    init_yn: &InitialLaw,
    seed: u64,
    times: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let mut per_time: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
    for r in 0..n_runs as u64 {
        let states = run_coupled(model, ccfg, second, n, init_y, init_yn, seed, r, times)?;
        for (k, s) in states.iter().enumerate() {
            per_time[k].extend(s.distances());
        }
    }
    Ok(times
        .iter()
        .zip(per_time)
        .map(|(&t, v)| {
            let set = crate::metrics::SampleSet::new(v);
            (t, set.mean(), set.stderr())
        })
        .collect())
}
