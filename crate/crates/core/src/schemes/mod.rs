//! Time integrators for the particle system and a trajectory driver.
//!
//! All schemes freeze the empirical measure at the start of each step, so
//! particle updates read one immutable snapshot and run in parallel.

mod delay;
pub(crate) mod steps;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{Constants, Ensemble, ModelSpec};
use crate::paths::{experiment_id, integer_ratio, MotionTag, StreamId, StreamRng};

pub use delay::{delay_em_step, DelayHistory};
pub use steps::{
    adaptive_em_step, adaptive_step_size, backward_em_step, explicit_em_step, tamed_drift, tamed_em_step,
    AdaptivePaths, SolveStats,
};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Explicit,
    Backward,
    Tamed,
    Adaptive,
    Delay,
}

impl SchemeKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "explicit" => Self::Explicit,
            "backward" => Self::Backward,
            "tamed" => Self::Tamed,
            "adaptive" => Self::Adaptive,
            "delay" => Self::Delay,
            other => return config_err(format!("key `scheme`: unknown scheme {other:?}")),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Explicit => "explicit",
            Self::Backward => "backward",
            Self::Tamed => "tamed",
            Self::Adaptive => "adaptive",
            Self::Delay => "delay",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamingMode {
    /// Whole drift divided by `1 + δ^κ |b|`.
    DriftNorm,
    /// Only `b₁` divided by `1 + δ^{1/2} ‖∇b₁‖_HS`.
    GradientNorm,
}

impl TamingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "drift_norm" => Ok(Self::DriftNorm),
            "gradient_norm" => Ok(Self::GradientNorm),
            other => config_err(format!("key `taming_mode`: unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub delta: f64,
    pub taming_mode: TamingMode,
    /// Taming exponent of the drift-norm mode.
    pub kappa: f64,
    pub implicit_tol: f64,
    pub implicit_max_iter: usize,
    pub r0: f64,
    pub horizon: f64,
    /// Guard against runaway adaptive grids.
    pub max_adaptive_steps: u64,
    /// Shorten adaptive steps so the grid hits every snapshot time and the
    /// horizon exactly. Off by default: snapshots then sit at the first grid
    /// time at or after the request.
    pub adaptive_land_on_snapshots: bool,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, delta: f64, horizon: f64) -> Self {
        Self {
            kind,
            delta,
            taming_mode: TamingMode::GradientNorm,
            kappa: 0.5,
            implicit_tol: 1e-12,
            implicit_max_iter: 100,
            r0: 0.0,
            horizon,
            max_adaptive_steps: 50_000_000,
            adaptive_land_on_snapshots: false,
        }
    }

    /// Checks the configuration against a model, including the step-size
    /// threshold of the chosen scheme.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return config_err(format!("key `delta`: must be positive, got {}", self.delta));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return config_err(format!("key `horizon`: must be nonnegative, got {}", self.horizon));
        }
        let no_mult = |name: &str| {
            if model.sigma0.is_some() {
                config_err(format!("key `L_mult`: the {name} scheme requires sigma0 = 0"))
            } else {
                Ok(())
            }
        };
        let c = &model.constants;
        match self.kind {
            SchemeKind::Explicit => {}
            SchemeKind::Backward => {
                no_mult("backward")?;
                let bound = backward_threshold(c);
                if !(self.delta < bound) {
                    return config_err(format!(
                        "key `delta`: backward EM needs delta < {bound} (got {})",
                        self.delta
                    ));
                }
                if !(self.implicit_tol > 0.0) || self.implicit_max_iter == 0 {
                    return config_err("key `implicit_tol`: solver tolerance and iteration cap must be positive");
                }
            }
            SchemeKind::Tamed => {
                no_mult("tamed")?;
                match self.taming_mode {
                    TamingMode::GradientNorm => {
                        let bound = delta_star_kappa(c)?;
                        if self.delta > bound {
                            return config_err(format!(
                                "key `delta`: tamed EM needs delta <= {bound} (got {})",
                                self.delta
                            ));
                        }
                    }
                    TamingMode::DriftNorm => {
                        if !(self.kappa > 0.0 && self.kappa <= 0.5) {
                            return config_err(format!("key `kappa`: must lie in (0, 1/2], got {}", self.kappa));
                        }
                    }
                }
            }
            SchemeKind::Adaptive => no_mult("adaptive")?,
            SchemeKind::Delay => {
                if !(self.r0 >= 0.0) {
                    return config_err(format!("key `r0`: must be nonnegative, got {}", self.r0));
                }
                self.delay_lag()?;
            }
        }
        Ok(())
    }

    /// `r₀ / δ` as an exact integer.
    pub fn delay_lag(&self) -> Result<usize> {
        if self.r0 == 0.0 {
            return Ok(0);
        }
        integer_ratio(self.r0, self.delta).ok_or_else(|| {
            Error::Config(format!("key `r0`: {} is not an integer multiple of delta = {}", self.r0, self.delta))
        })
    }
}

/// Well-posedness bound of the implicit step, `1 / (2(λ₀ + K))`.
pub fn backward_threshold(c: &Constants) -> f64 {
    1.0 / (2.0 * (c.lambda0 + c.k))
}

/// Step-size bound under which the backward scheme's error estimate is
/// stated. Reported alongside runs, not enforced.
pub fn delta_star_backward(c: &Constants) -> f64 {
    let m = ((1.0f64.max(c.lstar)) * (1.0 + c.lstar)).floor() + 1.0;
    let third = 3.0 * (c.lambda - 2.0 * c.k) / (4.0 * m * (1.0 + c.k).powf(m));
    1.0f64.min(backward_threshold(c)).min(third)
}

/// Step-size bound of the gradient-norm tamed scheme.
pub fn delta_star_kappa(c: &Constants) -> Result<f64> {
    let kappa = c.alpha * c.lambda_b1 - 2.0 * c.k;
    if !(kappa > 0.0) {
        return Err(Error::Regime(format!("alpha * lambda_b1 - 2K = {kappa} must be positive")));
    }
    if !(c.alpha > 0.0 && c.lambda_b1_hat > 0.0) {
        return Err(Error::Regime("alpha and lambda_b1_hat must be positive".into()));
    }
    let rho = 4.0 * c.k * (c.k + c.lambda_b1_hat);
    let x = 2.0 * c.k + rho * (1.0 + 1.0 / c.alpha) + c.lambda_b1_hat.powi(2);
    Ok(1.0f64
        .min(c.alpha.powf(-0.5))
        .min(c.lambda_b1.powi(2) / c.lambda_b1_hat.powi(4))
        .min(kappa * kappa / (2.0 * c.alpha * x).powi(2))
        .min(1.0 / (kappa / 4.0 + c.k + rho)))
}

/// Law of the initial particles (and of the constant delay segment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    PointMass(Vec<f64>),
    Gaussian { mean: Vec<f64>, std: f64 },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            Self::PointMass(x) => x.len(),
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Uniform { lo, .. } => lo.len(),
        }
    }

    /// `n` particles, particle `i` drawn from its own auxiliary stream.
    pub fn sample(&self, n: usize, seed: u64, experiment: u64) -> Result<Ensemble> {
        let d = self.dim();
        if let Self::Uniform { lo, hi } = self {
            if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                return config_err("uniform initial law needs lo <= hi componentwise");
            }
        }
        if let Self::Gaussian { std, .. } = self {
            if !(*std >= 0.0) {
                return config_err("key `init_std`: must be nonnegative");
            }
        }
        if n == 0 {
            return config_err("key `N`: need at least one particle");
        }
        let mut pos = vec![0.0; n * d];
        pos.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
            let mut rng = StreamRng::new(seed, StreamId::new(experiment, i as u64, MotionTag::Aux));
            match self {
                Self::PointMass(x) => row.copy_from_slice(x),
                Self::Gaussian { mean, std } => {
                    for c in 0..d {
                        row[c] = mean[c] + std * rng.normal();
                    }
                }
                Self::Uniform { lo, hi } => {
                    for c in 0..d {
                        row[c] = lo[c] + (hi[c] - lo[c]) * rng.uniform();
                    }
                }
            }
        });
        Ensemble::new(pos, d, 0.0)
    }
}

/// Where a run's noise comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub seed: u64,
    pub experiment: u64,
    /// Step of the underlying fine Brownian grid. Fixed-step schemes sum
    /// `δ / fine_dt` fine increments per step; adaptive runs bridge between
    /// fine grid points. Defaults to `δ`.
    pub fine_dt: Option<f64>,
}

impl NoisePlan {
    pub fn new(seed: u64, experiment: u64) -> Self {
        Self { seed, experiment, fine_dt: None }
    }

    pub fn labelled(seed: u64, label: &str, coords: &[u64]) -> Self {
        Self::new(seed, experiment_id(label, coords))
    }

    pub fn with_fine_dt(mut self, dt: f64) -> Self {
        self.fine_dt = Some(dt);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub requested: f64,
    /// `None` once the run has blown up.
    pub ensemble: Option<Ensemble>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub time: f64,
    pub step: u64,
    pub particle: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveStats {
    pub steps: u64,
    pub min_h: f64,
    pub max_h: f64,
    /// Largest `maxᵢ |b(xᵢ)|² h / δ` over the run; at most 1.
    pub max_drift_ratio: f64,
    pub reached_horizon: bool,
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub blow_up: Option<BlowUp>,
    pub adaptive: Option<AdaptiveStats>,
    pub solver: Option<SolveStats>,
    pub steps: u64,
}

impl Trajectory {
    /// Valid ensembles in request order; errors if any snapshot is missing.
    pub fn ensembles(&self) -> Result<Vec<&Ensemble>> {
        self.snapshots
            .iter()
            .map(|s| {
                s.ensemble
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState(format!("no valid snapshot at t = {} (blow-up)", s.requested)))
            })
            .collect()
    }

    pub fn last(&self) -> Option<&Ensemble> {
        self.snapshots.last().and_then(|s| s.ensemble.as_ref())
    }
}

fn grid_index(t: f64, delta: f64, what: &str) -> Result<u64> {
    if t == 0.0 {
        return Ok(0);
    }
    if !(t > 0.0) {
        return config_err(format!("{what} {t} must be nonnegative"));
    }
    integer_ratio(t, delta)
        .map(|k| k as u64)
        .ok_or_else(|| Error::Config(format!("{what} {t} is not on the grid of step {delta}")))
}

/// Runs `n` particles from `init` to `cfg.horizon`, returning the ensembles
/// at `snapshot_times` (ascending).
pub fn simulate(
    model: &ModelSpec,
    cfg: &SchemeConfig,
    n: usize,
    init: &InitialLaw,
    noise: &NoisePlan,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    cfg.validate(model)?;
    if init.dim() != model.dim {
        return config_err(format!("initial law has dimension {}, model has {}", init.dim(), model.dim));
    }
    if snapshot_times.windows(2).any(|w| !(w[0] <= w[1])) {
        return config_err("snapshot times must be ascending");
    }
    if snapshot_times.iter().any(|&t| !(t >= 0.0 && t <= cfg.horizon * (1.0 + 1e-12))) {
        return config_err("snapshot times must lie in [0, horizon]");
    }
    let ens = init.sample(n, noise.seed, noise.experiment)?;
    match cfg.kind {
        SchemeKind::Adaptive => run_adaptive(model, cfg, ens, noise, snapshot_times),
        _ => run_fixed(model, cfg, ens, noise, snapshot_times),
    }
}

/// Per-particle sources of fixed-step increments.
struct FixedNoise {
    w: Vec<StreamRng>,
    b: Vec<StreamRng>,
    factor: usize,
    scale: f64,
    d: usize,
    m: usize,
}

impl FixedNoise {
    fn new(noise: &NoisePlan, n: usize, d: usize, m: usize, delta: f64) -> Result<Self> {
        let fine = noise.fine_dt.unwrap_or(delta);
        let factor = integer_ratio(delta, fine)
            .ok_or_else(|| Error::Config(format!("delta = {delta} is not a multiple of the fine step {fine}")))?;
        let make = |tag| {
            (0..n)
                .map(|i| StreamRng::new(noise.seed, StreamId::new(noise.experiment, i as u64, tag)))
                .collect::<Vec<_>>()
        };
        Ok(Self { w: make(MotionTag::W), b: if m > 0 { make(MotionTag::B) } else { Vec::new() }, factor, scale: fine.sqrt(), d, m })
    }

    fn fill(&mut self, dw: &mut [f64], db: &mut [f64]) {
        let (factor, scale) = (self.factor, self.scale);
        let draw = |out: &mut [f64], rng: &mut StreamRng, buf: &mut Vec<f64>| {
            let k = out.len();
            buf.resize(factor * k, 0.0);
            for v in buf.iter_mut() {
                *v = scale * rng.normal();
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o = crate::paths::pairwise_sum_by(factor, |j| buf[j * k + c]);
            }
        };
        dw.par_chunks_mut(self.d)
            .zip(self.w.par_iter_mut())
            .for_each_init(Vec::new, |buf, (out, rng)| draw(out, rng, buf));
        if self.m > 0 {
            db.par_chunks_mut(self.m)
                .zip(self.b.par_iter_mut())
                .for_each_init(Vec::new, |buf, (out, rng)| draw(out, rng, buf));
        }
    }
}

fn run_fixed(
    model: &ModelSpec,
    cfg: &SchemeConfig,
    mut ens: Ensemble,
    noise: &NoisePlan,
    times: &[f64],
) -> Result<Trajectory> {
    let n = ens.len();
    let (d, m) = (model.dim, model.noise_dim());
    let total = grid_index(cfg.horizon, cfg.delta, "horizon")?;
    let targets = times
        .iter()
        .map(|&t| grid_index(t, cfg.delta, "snapshot time"))
        .collect::<Result<Vec<_>>>()?;
    let mut src = FixedNoise::new(noise, n, d, m, cfg.delta)?;
    let mut dw = vec![0.0; n * d];
    let mut db = vec![0.0; n * m];
    let mut history = match cfg.kind {
        SchemeKind::Delay => Some(DelayHistory::constant(ens.clone(), cfg.delay_lag()?)),
        _ => None,
    };
    let mut solver = (cfg.kind == SchemeKind::Backward).then(SolveStats::default);

    let mut snapshots = Vec::with_capacity(times.len());
    let mut next = 0;
    let mut blow_up = None;
    let mut step: u64 = 0;
    loop {
        while next < targets.len() && targets[next] == step {
            snapshots.push(Snapshot { requested: times[next], ensemble: Some(ens.clone()) });
            next += 1;
        }
        if step == total {
            break;
        }
        src.fill(&mut dw, &mut db);
        let db_opt = (m > 0).then_some(db.as_slice());
        ens = match cfg.kind {
            SchemeKind::Explicit => explicit_em_step(&ens, model, cfg, &dw, db_opt)?,
            SchemeKind::Backward => {
                let (e, stats) = backward_em_step(&ens, model, cfg, &dw)?;
                if let Some(s) = solver.as_mut() {
                    s.merge(&stats);
                }
                e
            }
            SchemeKind::Tamed => tamed_em_step(&ens, model, cfg, &dw)?,
            SchemeKind::Delay => {
                delay_em_step(history.as_mut().expect("delay history"), model, cfg, &dw, db_opt)?
            }
            SchemeKind::Adaptive => unreachable!(),
        };
        step += 1;
        // Keep time stamps exact multiples of δ.
        ens = Ensemble::from_parts_unchecked(ens.into_positions(), d, step as f64 * cfg.delta);
        if let Some(delay) = history.as_mut() {
            delay.restamp_latest(ens.time());
        }
        if let Some(p) = ens.find_blow_up() {
            blow_up = Some(BlowUp { time: ens.time(), step, particle: p });
            break;
        }
    }
    while next < times.len() {
        snapshots.push(Snapshot { requested: times[next], ensemble: None });
        next += 1;
    }
    Ok(Trajectory { snapshots, blow_up, adaptive: None, solver, steps: step })
}

fn run_adaptive(
    model: &ModelSpec,
    cfg: &SchemeConfig,
    mut ens: Ensemble,
    noise: &NoisePlan,
    times: &[f64],
) -> Result<Trajectory> {
    let fine = noise.fine_dt.unwrap_or(cfg.delta);
    if !(fine > 0.0) {
        return config_err("fine Brownian step must be positive");
    }
    let mut paths = AdaptivePaths::new(noise.seed, noise.experiment, ens.len(), model.dim, fine);
    let mut stats = AdaptiveStats {
        steps: 0,
        min_h: f64::INFINITY,
        max_h: 0.0,
        max_drift_ratio: 0.0,
        reached_horizon: false,
        grid: vec![0.0],
    };
    let mut snapshots = Vec::with_capacity(times.len());
    let mut next = 0;
    let mut blow_up = None;
    loop {
        while next < times.len() && ens.time() >= times[next] {
            snapshots.push(Snapshot { requested: times[next], ensemble: Some(ens.clone()) });
            next += 1;
        }
        if ens.time() >= cfg.horizon {
            stats.reached_horizon = true;
            break;
        }
        if stats.steps >= cfg.max_adaptive_steps {
            break;
        }
        let landing = cfg.adaptive_land_on_snapshots.then(|| times.get(next).copied().unwrap_or(cfg.horizon).min(cfg.horizon));
        let (new, h, ratio) = steps::adaptive_em_step_checked(&ens, model, cfg, &mut paths, landing)?;
        ens = new;
        stats.steps += 1;
        stats.min_h = stats.min_h.min(h);
        stats.max_h = stats.max_h.max(h);
        stats.max_drift_ratio = stats.max_drift_ratio.max(ratio);
        stats.grid.push(ens.time());
        if let Some(p) = ens.find_blow_up() {
            blow_up = Some(BlowUp { time: ens.time(), step: stats.steps, particle: p });
            break;
        }
    }
    while next < times.len() {
        snapshots.push(Snapshot { requested: times[next], ensemble: None });
        next += 1;
    }
    let steps = stats.steps;
    Ok(Trajectory { snapshots, blow_up, adaptive: Some(stats), solver: None, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelOverrides;

    fn dw() -> ModelSpec {
        ModelSpec::gallery("double-well-1d", &ModelOverrides { k_interaction: Some(0.05), ..Default::default() }).unwrap()
    }

    #[test]
    fn thresholds_of_the_double_well() {
        let c = dw().constants;
        assert!((backward_threshold(&c) - 1.0 / 2.1).abs() < 1e-15);
        let dk = delta_star_kappa(&c).unwrap();
        assert!((dk - 0.25).abs() < 1e-12, "{dk}");
        let db = delta_star_backward(&c);
        assert!(db > 0.0 && db < backward_threshold(&c));
    }

    #[test]
    fn config_validation() {
        let m = dw();
        assert!(SchemeConfig::new(SchemeKind::Backward, 0.5, 1.0).validate(&m).is_err());
        assert!(SchemeConfig::new(SchemeKind::Backward, 0.25, 1.0).validate(&m).is_ok());
        assert!(SchemeConfig::new(SchemeKind::Tamed, 0.3, 1.0).validate(&m).is_err());
        let mut c = SchemeConfig::new(SchemeKind::Tamed, 0.3, 1.0);
        c.taming_mode = TamingMode::DriftNorm;
        assert!(c.validate(&m).is_ok());
        c.kappa = 0.7;
        assert!(c.validate(&m).is_err());
        let mut c = SchemeConfig::new(SchemeKind::Delay, 0.01, 1.0);
        c.r0 = 0.025;
        let err = c.validate(&m).unwrap_err().to_string();
        assert!(err.contains("`r0`"), "{err}");
        c.r0 = 0.03;
        assert!(c.validate(&m).is_ok());
        assert!(SchemeConfig::new(SchemeKind::Explicit, 0.0, 1.0).validate(&m).is_err());
    }

    #[test]
    fn multiplicative_noise_rejected_for_implicit_and_tamed() {
        let m = ModelSpec::gallery("ou", &ModelOverrides { l_mult: Some(0.1), ..Default::default() }).unwrap();
        for k in [SchemeKind::Backward, SchemeKind::Tamed, SchemeKind::Adaptive] {
            assert!(SchemeConfig::new(k, 0.01, 1.0).validate(&m).is_err());
        }
        assert!(SchemeConfig::new(SchemeKind::Explicit, 0.01, 1.0).validate(&m).is_ok());
    }

    #[test]
    fn horizon_zero_returns_initial() {
        let m = dw();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 };
        let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.01, 0.0);
        let tr = simulate(&m, &cfg, 16, &init, &NoisePlan::new(1, 2), &[0.0]).unwrap();
        assert_eq!(tr.steps, 0);
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.snapshots[0].ensemble.as_ref().unwrap(), &init.sample(16, 1, 2).unwrap());
    }

    #[test]
    fn off_grid_snapshot_rejected() {
        let m = dw();
        let init = InitialLaw::PointMass(vec![0.0]);
        let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.1, 1.0);
        assert!(simulate(&m, &cfg, 4, &init, &NoisePlan::new(1, 2), &[0.25]).is_err());
    }

    #[test]
    fn explicit_blow_up_marks_remaining_snapshots() {
        let m = ModelSpec::gallery("double-well-1d", &ModelOverrides::default()).unwrap();
        let init = InitialLaw::PointMass(vec![3.0]);
        let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.25, 50.0);
        let tr = simulate(&m, &cfg, 8, &init, &NoisePlan::new(3, 4), &[0.0, 25.0, 50.0]).unwrap();
        assert!(tr.blow_up.is_some());
        assert!(tr.snapshots[0].ensemble.is_some());
        assert!(tr.snapshots[2].ensemble.is_none());
        assert!(tr.ensembles().is_err());
    }

    #[test]
    fn tamed_stays_bounded_where_explicit_blows_up() {
        let m = ModelSpec::gallery("double-well-1d", &ModelOverrides::default()).unwrap();
        let init = InitialLaw::PointMass(vec![3.0]);
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.25).collect();
        let tamed = SchemeConfig::new(SchemeKind::Tamed, 0.25, 50.0);
        let tr = simulate(&m, &tamed, 8, &init, &NoisePlan::new(3, 4), &times).unwrap();
        assert!(tr.blow_up.is_none());
        let max = tr.ensembles().unwrap().iter().flat_map(|e| e.positions().to_vec()).fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max <= 10.0, "{max}");
    }

    #[test]
    fn ou_terminal_mean_near_centre() {
        let m = ModelSpec::gallery(
            "ou",
            &ModelOverrides { beta: Some(1.0), alpha: Some(0.7), sigma: Some(0.1), ..Default::default() },
        )
        .unwrap();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 };
        let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.01, 10.0);
        let n = 2000;
        let tr = simulate(&m, &cfg, n, &init, &NoisePlan::new(9, 1), &[10.0]).unwrap();
        let e = tr.last().unwrap();
        let mean = e.mean()[0];
        // Stationary sd σ/√(2β) plus the e^{−10} remnant of the initial spread.
        let sd = (0.01f64 / 2.0 + (-20.0f64).exp()).sqrt();
        assert!((mean - 0.7).abs() < 4.0 * sd / (n as f64).sqrt() + 1e-4, "{mean}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let m = dw();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 };
        for kind in [SchemeKind::Explicit, SchemeKind::Backward, SchemeKind::Tamed, SchemeKind::Adaptive] {
            let cfg = SchemeConfig::new(kind, 0.02, 1.0);
            let run = |threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| simulate(&m, &cfg, 300, &init, &NoisePlan::new(5, 6), &[1.0]).unwrap())
            };
            let a = run(1);
            let b = run(8);
            let bits = |t: &Trajectory| t.last().unwrap().positions().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b), "{kind:?}");
        }
    }

    #[test]
    fn adaptive_run_terminates_with_bounds() {
        let m = dw();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 };
        let cfg = SchemeConfig::new(SchemeKind::Adaptive, 0.1, 100.0);
        let tr = simulate(&m, &cfg, 64, &init, &NoisePlan::new(2, 3), &[50.0, 100.0]).unwrap();
        let st = tr.adaptive.unwrap();
        assert!(st.reached_horizon);
        assert!(st.max_h <= 0.1 && st.max_drift_ratio <= 1.0);
        assert!(*st.grid.last().unwrap() >= 100.0);
        assert!(tr.snapshots[0].ensemble.as_ref().unwrap().time() >= 50.0);
    }

    #[test]
    fn fine_grid_noise_equals_coarsened_stream() {
        use crate::paths::{coarsen, gaussian_increments, NoiseStream};
        // Zero drift: positions are the summed noise.
        let mut m = ModelSpec::gallery("ou", &ModelOverrides::default()).unwrap();
        m.b1 = std::sync::Arc::new(|_: &[f64], out: &mut [f64]| out.fill(0.0));
        let init = InitialLaw::PointMass(vec![0.0]);
        let cfg = SchemeConfig::new(SchemeKind::Explicit, 0.08, 0.08);
        let plan = NoisePlan::new(4, 77).with_fine_dt(0.01);
        let tr = simulate(&m, &cfg, 3, &init, &plan, &[0.08]).unwrap();
        for i in 0..3u64 {
            let s = NoiseStream::new(4, StreamId::new(77, i, MotionTag::W), 1, 0.01);
            let coarse = coarsen(&gaussian_increments(&s, 8).unwrap(), 1, 8).unwrap();
            assert_eq!(tr.last().unwrap().positions()[i as usize], 0.0 + coarse[0]);
        }
    }
}
