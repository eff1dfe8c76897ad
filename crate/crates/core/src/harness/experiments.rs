//! Experiment drivers. Each takes a configuration, fills in its defaults,
//! runs, and returns a report whose numbers depend only on the resolved
//! configuration and seed.

use std::path::Path;
use std::time::Instant;

use serde_json::json;

use super::config::{ExperimentConfig, ExperimentKind};
use super::report::{Check, ExperimentReport, SeriesPoint, Window};
use crate::contraction::{lyapunov_constants, verify_contraction};
use crate::coupling::{marginal_validation, CouplingConfig};
use crate::error::{config_err, Error, Result};
use crate::metrics::{
    fit_exponential_decay, fit_loglog_weighted, moment, random_directions, sliced_w1_with_directions, w1_1d_sorted,
    RateFit, SampleSet, DEFAULT_PROJECTIONS,
};
use crate::model::{Ensemble, ModelSpec, GALLERY};
use crate::paths::integer_ratio;
use crate::schemes::{simulate, AdaptiveStats, InitialLaw, NoisePlan, SchemeConfig, SchemeKind, SolveStats, Trajectory};

/// Relative slack on the adaptive step bounds.
const ADAPTIVE_SLACK: f64 = 1e-12;

fn set<T: Clone>(slot: &mut Option<T>, default: T) -> T {
    slot.get_or_insert(default).clone()
}

pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut report = match kind {
        ExperimentKind::Chaos => run_chaos_experiment(cfg),
        ExperimentKind::DeltaRate => run_delta_experiment(cfg),
        ExperimentKind::Decay => run_decay_experiment(cfg),
        ExperimentKind::DelayRate => run_delay_experiment(cfg),
        ExperimentKind::Moments => run_moment_experiment(cfg),
        ExperimentKind::CoupleCheck => run_couple_check(cfg),
        ExperimentKind::ContractionCheck => run_contraction_check(cfg),
        ExperimentKind::Simulate => run_simulate(cfg).map(|(r, _)| r),
    }?;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

// ---------------------------------------------------------------------------
// pooled distances

/// Sorted union of `parts`, optionally leaving one part out.
fn sorted_pool(parts: &[Vec<f64>], skip: Option<usize>) -> Vec<f64> {
    let mut v: Vec<f64> = parts
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .flat_map(|(_, p)| p.iter().copied())
        .collect();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Removes the sorted multiset `part` from the sorted `full`.
fn remove_sorted(full: &[f64], part: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(full.len() - part.len());
    let mut j = 0;
    for &x in full {
        if j < part.len() && x.to_bits() == part[j].to_bits() {
            j += 1;
        } else {
            out.push(x);
        }
    }
    debug_assert_eq!(j, part.len());
    out
}

fn positions_checked(e: &Ensemble) -> Result<Vec<f64>> {
    if e.positions().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState("non-finite particle in a pooled sample".into()));
    }
    Ok(e.positions().to_vec())
}

/// W1 between the pooled repetitions of `a` and `b` with a delete-one-
/// repetition jackknife standard error. Repetition `r` of `a` and of `b` are
/// left out together, so common-noise pairs stay paired.
pub fn pooled_w1(a: &[Ensemble], b: &[Ensemble], seed: u64) -> Result<(f64, f64)> {
    if a.is_empty() || a.len() != b.len() {
        return config_err("pooled W1 needs the same positive number of repetitions on both sides");
    }
    let dim = a[0].dim();
    if a.iter().chain(b).any(|e| e.dim() != dim) {
        return config_err("pooled ensembles differ in dimension");
    }
    let pa: Vec<Vec<f64>> = a.iter().map(positions_checked).collect::<Result<_>>()?;
    let pb: Vec<Vec<f64>> = b.iter().map(positions_checked).collect::<Result<_>>()?;
    let r = a.len();
    let estimates: Vec<f64> = if dim == 1 {
        let fa = sorted_pool(&pa, None);
        let fb = sorted_pool(&pb, None);
        let full = w1_1d_sorted(&fa, &fb)?;
        let mut v = vec![full];
        if r > 1 {
            for k in 0..r {
                let mut sa = pa[k].clone();
                sa.sort_unstable_by(f64::total_cmp);
                let mut sb = pb[k].clone();
                sb.sort_unstable_by(f64::total_cmp);
                v.push(w1_1d_sorted(&remove_sorted(&fa, &sa), &remove_sorted(&fb, &sb))?);
            }
        }
        v
    } else {
        let dirs = random_directions(dim, DEFAULT_PROJECTIONS, seed);
        let cat = |parts: &[Vec<f64>], skip: Option<usize>| -> Vec<f64> {
            parts.iter().enumerate().filter(|(i, _)| Some(*i) != skip).flat_map(|(_, p)| p.clone()).collect()
        };
        let mut v = vec![sliced_w1_with_directions(&cat(&pa, None), &cat(&pb, None), dim, &dirs)?];
        if r > 1 {
            for k in 0..r {
                v.push(sliced_w1_with_directions(&cat(&pa, Some(k)), &cat(&pb, Some(k)), dim, &dirs)?);
            }
        }
        v
    };
    let full = estimates[0];
    if r == 1 {
        return Ok((full, 0.0));
    }
    let loo = &estimates[1..];
    let mean = loo.iter().sum::<f64>() / r as f64;
    let var = loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * (r - 1) as f64 / r as f64;
    Ok((full, var.sqrt()))
}

// ---------------------------------------------------------------------------
// repeated runs

#[derive(Clone, Debug, Default, serde::Serialize)]
struct AdaptiveSummary {
    runs: usize,
    steps: u64,
    min_h: f64,
    max_h: f64,
    max_drift_ratio: f64,
    all_reached_horizon: bool,
}

impl AdaptiveSummary {
    fn add(&mut self, s: &AdaptiveStats) {
        if self.runs == 0 {
            self.min_h = f64::INFINITY;
            self.all_reached_horizon = true;
        }
        self.runs += 1;
        self.steps += s.steps;
        self.min_h = self.min_h.min(s.min_h);
        self.max_h = self.max_h.max(s.max_h);
        self.max_drift_ratio = self.max_drift_ratio.max(s.max_drift_ratio);
        self.all_reached_horizon &= s.reached_horizon;
    }

    fn checks(&self, label: &str, delta_max: f64) -> Vec<Check> {
        vec![
            Check::at_most(format!("{label}: max |b|^2 h / delta"), self.max_drift_ratio, 1.0 + ADAPTIVE_SLACK),
            Check::at_most(format!("{label}: max h / delta"), self.max_h / delta_max, 1.0 + ADAPTIVE_SLACK),
            Check::flag(format!("{label}: every adaptive run reaches its horizon"), self.all_reached_horizon),
        ]
    }
}

/// Per-repetition trajectories of one configuration.
struct Runs {
    trajectories: Vec<Trajectory>,
    adaptive: AdaptiveSummary,
    solver: SolveStats,
    blow_up: Option<String>,
}

impl Runs {
    /// Snapshot `k` of every repetition.
    fn at(&self, k: usize) -> Result<Vec<Ensemble>> {
        self.trajectories
            .iter()
            .map(|t| {
                t.snapshots
                    .get(k)
                    .and_then(|s| s.ensemble.clone())
                    .ok_or_else(|| Error::InvalidState("missing snapshot".into()))
            })
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn repeat(
    model: &ModelSpec,
    scfg: &SchemeConfig,
    n: usize,
    init: &InitialLaw,
    reps: usize,
    times: &[f64],
    plan: impl Fn(u64) -> NoisePlan,
    what: &str,
) -> Result<Runs> {
    let mut runs = Runs {
        trajectories: Vec::with_capacity(reps),
        adaptive: AdaptiveSummary::default(),
        solver: SolveStats::default(),
        blow_up: None,
    };
    for r in 0..reps as u64 {
        let t = simulate(model, scfg, n, init, &plan(r), times)?;
        if let Some(a) = &t.adaptive {
            runs.adaptive.add(a);
        }
        if let Some(s) = &t.solver {
            runs.solver.merge(s);
        }
        if let Some(b) = &t.blow_up {
            runs.blow_up = Some(format!(
                "{what}, repetition {r}: particle {} blew up at t = {} (step {})",
                b.particle, b.time, b.step
            ));
            break;
        }
        runs.trajectories.push(t);
    }
    Ok(runs)
}

fn window_checks(report: &mut ExperimentReport, fit: &RateFit, value: f64, what: &str, w: Window) {
    report.checks.push(Check::at_least(format!("{what} >= window_lo"), value, w.lo));
    report.checks.push(Check::at_most(format!("{what} <= window_hi"), value, w.hi));
    report.checks.push(Check::at_least("r2 >= min_r2", fit.r2, w.min_r2));
    report.window = Some(w);
}

/// Weighted log-log fit over the report's points; recomputable from the CSV.
pub fn refit_loglog(points: &[SeriesPoint]) -> Result<RateFit> {
    let xs: Vec<f64> = points.iter().map(|p| p.grid_value).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.estimate).collect();
    let ses: Vec<f64> = points.iter().map(|p| p.stderr).collect();
    fit_loglog_weighted(&xs, &ys, &ses)
}

fn seed_of(cfg: &mut ExperimentConfig) -> u64 {
    set(&mut cfg.seed, 0)
}

// ---------------------------------------------------------------------------
// chaos

pub fn run_chaos_experiment(input: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = input.clone();
    set(&mut cfg.model, "double-well-1d".into());
    set(&mut cfg.k_interaction, 0.05);
    set(&mut cfg.sigma, 1.0);
    set(&mut cfg.scheme, "tamed".into());
    let delta = set(&mut cfg.delta, 0.01);
    let horizon = set(&mut cfg.horizon, 10.0);
    set(&mut cfg.grid, vec![64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0]);
    let n_ref = set(&mut cfg.n_ref, 16384);
    let reps = set(&mut cfg.repetitions, 32);
    let batches = set(&mut cfg.batches, 8);
    set(&mut cfg.init, "gaussian".into());
    set(&mut cfg.init_value, 0.0);
    set(&mut cfg.init_std, 1.0);
    let w = Window {
        lo: set(&mut cfg.window_lo, -0.65),
        hi: set(&mut cfg.window_hi, -0.35),
        min_r2: set(&mut cfg.min_r2, 0.85),
    };
    let seed = seed_of(&mut cfg);

    let model = cfg.build_model()?;
    let kind = cfg.scheme_kind()?;
    let scfg = cfg.scheme_config_at(kind, delta, horizon)?;
    let init = cfg.initial_law(model.dim, None)?;
    cfg.count("repetitions", Some(reps))?;
    cfg.count("batches", Some(batches))?;
    let sizes: Vec<usize> = cfg
        .nonempty_grid()?
        .iter()
        .map(|&g| {
            if g >= 1.0 && g.fract() == 0.0 {
                Ok(g as usize)
            } else {
                config_err(format!("key `grid`: particle counts must be positive integers, got {g}"))
            }
        })
        .collect::<Result<_>>()?;
    let max_n = *sizes.iter().max().expect("nonempty");
    if n_ref <= max_n {
        return config_err(format!("key `N_ref`: must exceed the largest grid N = {max_n}"));
    }

    let mut report = ExperimentReport::new(ExperimentKind::Chaos.name(), cfg.clone(), seed);
    let times = [horizon];
    let reference = repeat(&model, &scfg, n_ref, &init, reps, &times, |r| NoisePlan::labelled(seed, "chaos-ref", &[r]), "reference")?;
    if let Some(b) = &reference.blow_up {
        report.checks.push(Check::flag(format!("no blow-up ({b})"), false));
        report.finish();
        return Ok(report);
    }
    let ref_pool = reference.at(0)?;
    'grid: for &n in &sizes {
        // Each batch is one pooled estimate over `reps` systems of size N.
        let mut est = Vec::with_capacity(batches);
        let mut jack = 0.0;
        for b in 0..batches as u64 {
            let plan = |r| NoisePlan::labelled(seed, "chaos", &[n as u64, b, r]);
            let runs = repeat(&model, &scfg, n, &init, reps, &times, plan, &format!("N = {n}, batch {b}"))?;
            if let Some(msg) = &runs.blow_up {
                report.checks.push(Check::flag(format!("no blow-up ({msg})"), false));
                continue 'grid;
            }
            let (w1, se) = pooled_w1(&runs.at(0)?, &ref_pool, seed)?;
            est.push(w1);
            jack = se;
        }
        let set = SampleSet::new(est);
        let se = if batches > 1 { set.stderr() } else { jack };
        report.points.push(SeriesPoint { grid_value: n as f64, time: horizon, estimate: set.mean(), stderr: se });
    }
    match refit_loglog(&report.points) {
        Ok(fit) => {
            window_checks(&mut report, &fit, fit.slope, "slope", w);
            report.fit = Some(fit);
        }
        Err(e) => report.checks.push(Check::flag(format!("slope fit ({e})"), false)),
    }
    report.details = json!({
        "pooled_reference_samples": n_ref * reps,
        "reference_ratio": n_ref as f64 / max_n as f64,
    });
    report.finish();
    Ok(report)
}

// ---------------------------------------------------------------------------
// delta-rate

fn is_power_of_two_multiple(x: f64, base: f64) -> bool {
    integer_ratio(x, base).is_some_and(|k| k.is_power_of_two())
}

/// Smallest multiple of `step` that is at least `t`, as `k · step`.
fn round_up_to_grid(t: f64, step: f64) -> f64 {
    let k = (t / step - 1e-9).ceil().max(0.0);
    k * step
}

pub fn run_delta_experiment(input: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = input.clone();
    let kind = SchemeKind::parse(&set(&mut cfg.scheme, "tamed".into()))?;
    if !matches!(kind, SchemeKind::Backward | SchemeKind::Tamed | SchemeKind::Adaptive) {
        return config_err("key `scheme`: delta-rate supports backward, tamed and adaptive");
    }
    set(&mut cfg.model, "double-well-1d".into());
    set(&mut cfg.k_interaction, 0.05);
    set(&mut cfg.sigma, 1.0);
    let grid = set(&mut cfg.grid, vec![0.02, 0.04, 0.08, 0.16]);
    let t_req = set(&mut cfg.horizon, 10.0);
    let reps = set(&mut cfg.repetitions, 32);
    let n = set(&mut cfg.n, if kind == SchemeKind::Adaptive { 16 } else { 256 });
    set(&mut cfg.init, "gaussian".into());
    set(&mut cfg.init_value, 0.0);
    set(&mut cfg.init_std, 1.0);
    let w = Window {
        lo: set(&mut cfg.window_lo, 0.35),
        hi: set(&mut cfg.window_hi, if kind == SchemeKind::Backward { f64::MAX } else { 0.8 }),
        min_r2: set(&mut cfg.min_r2, if kind == SchemeKind::Backward { 0.0 } else { 0.8 }),
    };
    let seed = seed_of(&mut cfg);
    cfg.count("repetitions", Some(reps))?;

    let model = cfg.build_model()?;
    let init = cfg.initial_law(model.dim, None)?;
    cfg.nonempty_grid()?;
    if grid.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return config_err("key `grid`: step sizes must be positive");
    }
    let d_min = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = grid.iter().copied().fold(0.0, f64::max);
    if let Some(bad) = grid.iter().find(|&&d| !is_power_of_two_multiple(d, d_min)) {
        return config_err(format!("key `grid`: {bad} is not a power-of-two multiple of the finest step {d_min}"));
    }
    let d_ref = d_min / 8.0;
    set(&mut cfg.adaptive_landing, false);
    let divisions = set(&mut cfg.fine_divisions, if kind == SchemeKind::Adaptive { 32 } else { 1 });
    cfg.count("fine_divisions", Some(divisions))?;
    let fine_dt = d_ref / divisions as f64;
    // Every step of the grid must land on the measurement time.
    let horizon = round_up_to_grid(t_req, d_max);
    for &d in grid.iter().chain(std::iter::once(&d_ref)) {
        cfg.scheme_config_at(kind, d, horizon)?.validate(&model)?;
    }

    let mut report = ExperimentReport::new(ExperimentKind::DeltaRate.name(), cfg.clone(), seed);
    let times = [horizon];
    let plan = |r: u64| NoisePlan::labelled(seed, "delta", &[r]).with_fine_dt(fine_dt);
    let scheme_at = |d: f64| cfg.scheme_config_at(kind, d, horizon);
    let mut adaptive = AdaptiveSummary::default();
    let mut solver = SolveStats::default();
    let mut absorb = |runs: &Runs| {
        if runs.adaptive.runs > 0 {
            for t in &runs.trajectories {
                if let Some(a) = &t.adaptive {
                    adaptive.add(a);
                }
            }
        }
        solver.merge(&runs.solver);
    };
    let reference = repeat(&model, &scheme_at(d_ref)?, n, &init, reps, &times, plan, "reference")?;
    absorb(&reference);
    if let Some(b) = &reference.blow_up {
        report.checks.push(Check::flag(format!("no blow-up ({b})"), false));
        report.finish();
        return Ok(report);
    }
    let ref_pool = reference.at(0)?;
    let mut sorted_grid = grid.clone();
    sorted_grid.sort_by(f64::total_cmp);
    for &d in &sorted_grid {
        let runs = repeat(&model, &scheme_at(d)?, n, &init, reps, &times, plan, &format!("delta = {d}"))?;
        absorb(&runs);
        if let Some(b) = &runs.blow_up {
            report.checks.push(Check::flag(format!("no blow-up ({b})"), false));
            continue;
        }
        let (w1, se) = pooled_w1(&runs.at(0)?, &ref_pool, seed)?;
        report.points.push(SeriesPoint { grid_value: d, time: horizon, estimate: w1, stderr: se });
    }
    match refit_loglog(&report.points) {
        Ok(fit) => {
            window_checks(&mut report, &fit, fit.slope, "slope", w);
            report.fit = Some(fit);
        }
        Err(e) => report.checks.push(Check::flag(format!("slope fit ({e})"), false)),
    }
    if kind == SchemeKind::Adaptive {
        report.checks.extend(adaptive.checks("adaptive", d_max));
    }
    report.details = json!({
        "scheme": kind.name(),
        "delta_ref": d_ref,
        "fine_dt": fine_dt,
        "measurement_time": horizon,
        "adaptive": (kind == SchemeKind::Adaptive).then_some(&adaptive),
        "implicit_solver": (kind == SchemeKind::Backward).then_some(&solver),
    });
    report.finish();
    Ok(report)
}

// ---------------------------------------------------------------------------
// decay

fn time_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    let k = integer_ratio(horizon, step)
        .ok_or_else(|| Error::Config(format!("key `time_step`: {step} does not divide the horizon {horizon}")))?;
    Ok((0..=k).map(|i| i as f64 * step).collect())
}

/// W1 between two families of repeated runs at every snapshot.
fn w1_series(a: &Runs, b: &Runs, times: &[f64], seed: u64, grid_value: f64) -> Result<Vec<SeriesPoint>> {
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (w1, se) = pooled_w1(&a.at(k)?, &b.at(k)?, seed)?;
            Ok(SeriesPoint { grid_value, time: t, estimate: w1, stderr: se })
        })
        .collect()
}

fn tail_fit(points: &[SeriesPoint], lo: f64, hi: f64) -> Result<RateFit> {
    let (ts, ys): (Vec<f64>, Vec<f64>) =
        points.iter().filter(|p| p.time >= lo && p.time <= hi && p.estimate > 0.0).map(|p| (p.time, p.estimate)).unzip();
    fit_exponential_decay(&ts, &ys)
}

pub fn run_decay_experiment(input: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = input.clone();
    set(&mut cfg.model, "double-well-1d".into());
    set(&mut cfg.k_interaction, 0.05);
    let sigma = set(&mut cfg.sigma, 1.0);
    set(&mut cfg.scheme, "tamed".into());
    let delta = set(&mut cfg.delta, 0.01);
    let horizon = set(&mut cfg.horizon, 8.0);
    let step = set(&mut cfg.time_step, 0.25);
    let n = set(&mut cfg.n, 1024);
    let reps = set(&mut cfg.repetitions, 8);
    set(&mut cfg.init, "point".into());
    let x0 = set(&mut cfg.init_value, 2.0);
    let y0 = set(&mut cfg.init_second, -2.0);
    let lo = set(&mut cfg.fit_t_lo, 1.0);
    let hi = set(&mut cfg.fit_t_hi, 6.0);
    let min_r2 = set(&mut cfg.min_r2, 0.9);
    let tol = set(&mut cfg.control_tol, 0.1);
    let seed = seed_of(&mut cfg);
    cfg.count("repetitions", Some(reps))?;

    let model = cfg.build_model()?;
    let kind = cfg.scheme_kind()?;
    let scfg = cfg.scheme_config_at(kind, delta, horizon)?;
    let times = time_grid(horizon, step)?;
    let mut report = ExperimentReport::new(ExperimentKind::Decay.name(), cfg.clone(), seed);

    // Both laws are driven by the same Brownian motions.
    let plan = |r: u64| NoisePlan::labelled(seed, "decay", &[r]);
    let series = |model: &ModelSpec, scfg: &SchemeConfig, gv: f64, report: &mut ExperimentReport| -> Result<Option<Vec<SeriesPoint>>> {
        let a = repeat(model, scfg, n, &cfg.initial_law(model.dim, Some(x0))?, reps, &times, plan, "first law")?;
        let b = repeat(model, scfg, n, &cfg.initial_law(model.dim, Some(y0))?, reps, &times, plan, "second law")?;
        if let Some(blow) = a.blow_up.as_ref().or(b.blow_up.as_ref()) {
            report.checks.push(Check::flag(format!("no blow-up ({blow})"), false));
            return Ok(None);
        }
        w1_series(&a, &b, &times, seed, gv).map(Some)
    };

    if let Some(points) = series(&model, &scfg, 0.0, &mut report)? {
        report.points.extend(points);
        match tail_fit(&report.points, lo, hi) {
            Ok(fit) => {
                let rate = fit.rate.expect("decay fit has a rate");
                report.checks.push(Check::at_least("fitted decay rate > 0", rate, f64::MIN_POSITIVE));
                report.checks.push(Check::at_least("r2 >= min_r2", fit.r2, min_r2));
                report.window = Some(Window { lo: 0.0, hi: f64::MAX, min_r2 });
                report.fit = Some(fit);
            }
            Err(e) => report.checks.push(Check::flag(format!("decay fit ({e})"), false)),
        }
    }

    // OU control with a closed-form law: the two Gaussians stay at distance
    // |x0 − y0| e^{−t}.
    let ou_cfg = ExperimentConfig {
        model: Some("ou".into()),
        beta: Some(1.0),
        alpha: Some(0.0),
        k_interaction: Some(0.0),
        sigma: Some(sigma),
        l_mult: Some(0.0),
        dim: Some(model.dim),
        ..Default::default()
    };
    let ou = ou_cfg.build_model()?;
    // Explicit Euler, so the control rate carries no taming bias.
    let ou_scheme = cfg.scheme_config_at(SchemeKind::Explicit, delta, horizon)?;
    let mut control = serde_json::Value::Null;
    if let Some(points) = series(&ou, &ou_scheme, 1.0, &mut report)? {
        let exact: Vec<f64> = times.iter().map(|t| (x0 - y0).abs() * (-t).exp()).collect();
        let max_rel = points
            .iter()
            .zip(&exact)
            .map(|(p, e)| (p.estimate - e).abs() / e)
            .fold(0.0, f64::max);
        match tail_fit(&points, lo, hi) {
            Ok(fit) => {
                let rate = fit.rate.expect("decay fit has a rate");
                report.checks.push(Check::at_most("OU control |rate - 1|", (rate - 1.0).abs(), tol));
                control = json!({ "fit": fit, "closed_form_rate": 1.0, "max_relative_gap_to_closed_form": max_rel });
            }
            Err(e) => report.checks.push(Check::flag(format!("OU control fit ({e})"), false)),
        }
        report.points.extend(points);
    }

    let lyap = lyapunov_constants(&model).ok();
    if let Some(c) = &lyap {
        report.checks.push(Check::at_least("lambda* > 0", c.lambda_star, f64::MIN_POSITIVE));
    }
    report.details = json!({
        "series": { "0": model.name, "1": "ou control" },
        "lambda_star": lyap.as_ref().map(|c| c.lambda_star),
        "lambda_star_star": lyap.as_ref().map(|c| c.lambda_star_star),
        "ou_control": control,
    });
    report.finish();
    Ok(report)
}

// ---------------------------------------------------------------------------
// delay-rate

pub fn run_delay_experiment(input: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = input.clone();
    set(&mut cfg.model, "ou".into());
    set(&mut cfg.beta, 1.0);
    set(&mut cfg.alpha, 0.0);
    set(&mut cfg.k_interaction, 0.0);
    set(&mut cfg.sigma, 1.0);
    set(&mut cfg.l_mult, 0.0);
    let delta = set(&mut cfg.delta, 0.01);
    let horizon = set(&mut cfg.horizon, 10.0);
    let grid = set(&mut cfg.grid, vec![0.02, 0.04, 0.08, 0.16, 0.32]);
    let n = set(&mut cfg.n, 1024);
    let reps = set(&mut cfg.repetitions, 16);
    set(&mut cfg.init, "point".into());
    set(&mut cfg.init_value, 1.0);
    let w = Window {
        lo: set(&mut cfg.window_lo, 0.3),
        hi: set(&mut cfg.window_hi, 0.8),
        min_r2: set(&mut cfg.min_r2, 0.8),
    };
    let seed = seed_of(&mut cfg);
    cfg.count("repetitions", Some(reps))?;

    let model = cfg.build_model()?;
    let init = cfg.initial_law(model.dim, None)?;
    cfg.nonempty_grid()?;
    let times = [horizon];
    let plan = |r: u64| NoisePlan::labelled(seed, "delay", &[r]);
    let at = |r0: f64| -> Result<SchemeConfig> {
        let mut c = cfg.scheme_config_at(SchemeKind::Delay, delta, horizon)?;
        c.r0 = r0;
        c.validate(&model)?;
        Ok(c)
    };
    for &r0 in &grid {
        if !(r0 > 0.0) {
            return config_err(format!("key `grid`: delays must be positive, got {r0}"));
        }
        at(r0)?;
    }
    let mut report = ExperimentReport::new(ExperimentKind::DelayRate.name(), cfg.clone(), seed);
    let fail = |report: &mut ExperimentReport, b: &str| report.checks.push(Check::flag(format!("no blow-up ({b})"), false));

    let plain = repeat(&model, &cfg.scheme_config_at(SchemeKind::Explicit, delta, horizon)?, n, &init, reps, &times, plan, "no delay")?;
    if let Some(b) = &plain.blow_up {
        fail(&mut report, b);
        report.finish();
        return Ok(report);
    }
    let plain_pool = plain.at(0)?;
    let zero = repeat(&model, &at(0.0)?, n, &init, reps, &times, plan, "r0 = 0")?;
    let zero_point = match &zero.blow_up {
        Some(b) => {
            fail(&mut report, b);
            None
        }
        None => {
            let (w1, se) = pooled_w1(&zero.at(0)?, &plain_pool, seed)?;
            report.checks.push(Check::at_most("r0 = 0 distance / (3 stderr)", w1, 3.0 * se));
            Some(SeriesPoint { grid_value: 0.0, time: horizon, estimate: w1, stderr: se })
        }
    };

    let mut sorted_grid = grid.clone();
    sorted_grid.sort_by(f64::total_cmp);
    for &r0 in &sorted_grid {
        let runs = repeat(&model, &at(r0)?, n, &init, reps, &times, plan, &format!("r0 = {r0}"))?;
        if let Some(b) = &runs.blow_up {
            fail(&mut report, b);
            continue;
        }
        let (w1, se) = pooled_w1(&runs.at(0)?, &plain_pool, seed)?;
        report.points.push(SeriesPoint { grid_value: r0, time: horizon, estimate: w1, stderr: se });
    }
    match refit_loglog(&report.points) {
        Ok(fit) => {
            window_checks(&mut report, &fit, fit.slope, "slope", w);
            report.fit = Some(fit);
        }
        Err(e) => report.checks.push(Check::flag(format!("slope fit ({e})"), false)),
    }
    report.details = json!({ "r0_zero": zero_point });
    report.finish();
    Ok(report)
}

// ---------------------------------------------------------------------------
// moments

const MOMENT_SCHEMES: [SchemeKind; 3] = [SchemeKind::Backward, SchemeKind::Tamed, SchemeKind::Adaptive];

/// Index of a scheme in the moment series; `grid_value = p + 100 · index`.
pub fn moment_scheme_index(kind: SchemeKind) -> Option<usize> {
    MOMENT_SCHEMES.iter().position(|&k| k == kind)
}

/// Means of a time series over `[T/4, 3T/4)` and `[3T/4, T]`.
pub fn quartile_means(times: &[f64], values: &[f64], horizon: f64) -> (f64, f64) {
    let mean = |lo: f64, hi: f64, closed: bool| {
        let v: Vec<f64> = times
            .iter()
            .zip(values)
            .filter(|(t, _)| **t >= lo && (**t < hi || (closed && **t <= hi)))
            .map(|(_, v)| *v)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    (mean(horizon / 4.0, 3.0 * horizon / 4.0, false), mean(3.0 * horizon / 4.0, horizon, true))
}

pub fn run_moment_experiment(input: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = input.clone();
    set(&mut cfg.model, "double-well-1d".into());
    set(&mut cfg.k_interaction, 0.05);
    set(&mut cfg.sigma, 1.0);
    let delta = set(&mut cfg.delta, 0.25);
    let horizon = set(&mut cfg.horizon, 200.0);
    let step = set(&mut cfg.time_step, 1.0);
    let n = set(&mut cfg.n, 64);
    set(&mut cfg.init, "point".into());
    set(&mut cfg.init_value, 3.0);
    let ps = set(&mut cfg.p_grid, vec![2.0, 4.0, 6.0]);
    let ratio_max = set(&mut cfg.moment_ratio, 2.0);
    let blow_delta = set(&mut cfg.blowup_delta, delta);
    let seed = seed_of(&mut cfg);
    let kinds: Vec<SchemeKind> = match &cfg.scheme {
        Some(s) => {
            let k = SchemeKind::parse(s)?;
            if moment_scheme_index(k).is_none() {
                return config_err("key `scheme`: moments supports backward, tamed and adaptive");
            }
            vec![k]
        }
        None => MOMENT_SCHEMES.to_vec(),
    };
    if ps.is_empty() {
        return config_err("key `p_grid`: must be nonempty");
    }

    let model = cfg.build_model()?;
    let init = cfg.initial_law(model.dim, None)?;
    let times = time_grid(horizon, step)?;
    let mut report = ExperimentReport::new(ExperimentKind::Moments.name(), cfg.clone(), seed);
    let mut per_scheme = serde_json::Map::new();

    for &kind in &kinds {
        let scfg = cfg.scheme_config_at(kind, delta, horizon)?;
        let runs = repeat(&model, &scfg, n, &init, 1, &times, |r| NoisePlan::labelled(seed, "moments", &[r]), kind.name())?;
        if let Some(b) = &runs.blow_up {
            report.checks.push(Check::flag(format!("{}: no blow-up ({b})", kind.name()), false));
            continue;
        }
        report.checks.push(Check::flag(format!("{}: no blow-up", kind.name()), true));
        let traj = &runs.trajectories[0];
        let ens = traj.ensembles()?;
        let idx = moment_scheme_index(kind).expect("moment scheme") as f64;
        let mut ratios = serde_json::Map::new();
        for &p in &ps {
            let values: Vec<f64> = ens.iter().map(|e| moment(e, p)).collect();
            for (e, (&t, &v)) in ens.iter().zip(times.iter().zip(&values)) {
                let per: Vec<f64> = (0..e.len()).map(|i| e.particle(i).iter().map(|x| x * x).sum::<f64>().sqrt().powf(p)).collect();
                report.points.push(SeriesPoint { grid_value: p + 100.0 * idx, time: t, estimate: v, stderr: SampleSet::new(per).stderr() });
            }
            let (mid, last) = quartile_means(&times, &values, horizon);
            let ratio = last / mid;
            report.checks.push(Check::at_most(format!("{}: p = {p} last/middle quartile", kind.name()), ratio, ratio_max));
            ratios.insert(format!("{p}"), json!({ "middle": mid, "last": last, "ratio": ratio }));
        }
        if let Some(a) = &traj.adaptive {
            let mut s = AdaptiveSummary::default();
            s.add(a);
            report.checks.extend(s.checks("adaptive", delta));
        }
        per_scheme.insert(kind.name().into(), json!({ "steps": traj.steps, "quartiles": ratios }));
    }

    // Explicit Euler at the same step is expected to explode.
    let ex = cfg.scheme_config_at(SchemeKind::Explicit, blow_delta, horizon)?;
    let t = simulate(&model, &ex, n, &init, &NoisePlan::labelled(seed, "moments-explicit", &[0]), &[horizon])?;
    report.checks.push(Check::flag("explicit: blow-up flag raised", t.blow_up.is_some()));
    report.details = json!({
        "grid_value": "p + 100 * scheme index (0 backward, 1 tamed, 2 adaptive)",
        "schemes": per_scheme,
        "explicit_blow_up": t.blow_up,
    });
    report.finish();
    Ok(report)
}

// ---------------------------------------------------------------------------
// coupling and contraction checks

pub fn run_couple_check(input: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = input.clone();
    set(&mut cfg.model, "double-well-1d".into());
    set(&mut cfg.k_interaction, 0.05);
    set(&mut cfg.sigma, 1.0);
    let kind = SchemeKind::parse(&set(&mut cfg.scheme, "tamed".into()))?;
    let delta = set(&mut cfg.delta, 0.01);
    let horizon = set(&mut cfg.horizon, 1.0);
    let epsilon = set(&mut cfg.epsilon, 0.1);
    let inner = set(&mut cfg.inner_delta, 1e-3);
    let n = set(&mut cfg.n, 1000);
    let runs = set(&mut cfg.runs, 10);
    let proxy = set(&mut cfg.proxy_size, 1024);
    set(&mut cfg.init, "gaussian".into());
    set(&mut cfg.init_value, 0.0);
    set(&mut cfg.init_std, 1.0);
    let seed = seed_of(&mut cfg);

    let model = cfg.build_model()?;
    let init = cfg.initial_law(model.dim, None)?;
    let second = cfg.scheme_config_at(kind, delta, horizon)?;
    let ccfg = CouplingConfig { epsilon, inner_delta: inner, horizon, proxy_size: proxy };
    let rep = marginal_validation(&model, &ccfg, &second, n, runs, &init, seed)?;

    let mut report = ExperimentReport::new(ExperimentKind::CoupleCheck.name(), cfg.clone(), seed);
    for (gv, c, name) in [(1.0, &rep.first, "first"), (2.0, &rep.second, "second")] {
        report.points.push(SeriesPoint { grid_value: gv, time: horizon, estimate: c.w1, stderr: c.stderr });
        report.checks.push(Check::at_most(format!("{name} component W1 vs 3 stderr"), c.w1, 3.0 * c.stderr));
    }
    report.details = serde_json::to_value(&rep)?;
    report.finish();
    Ok(report)
}

pub fn run_contraction_check(input: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut cfg = input.clone();
    let n_grid = set(&mut cfg.rgrid, 10_000);
    let seed = seed_of(&mut cfg);
    let names: Vec<String> = match &cfg.model {
        Some(m) => vec![m.clone()],
        None => GALLERY.iter().map(|s| s.to_string()).collect(),
    };
    let mut report = ExperimentReport::new(ExperimentKind::ContractionCheck.name(), cfg.clone(), seed);
    let mut reports = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let model = ModelSpec::gallery(name, &cfg.overrides())?;
        let c = lyapunov_constants(&model)?;
        let r_max = cfg.rmax.unwrap_or(10.0 * model.constants.ell0);
        let rep = verify_contraction(&c, &model, r_max, n_grid)?;
        report.points.push(SeriesPoint { grid_value: i as f64, time: 0.0, estimate: rep.max_violation, stderr: 0.0 });
        report.checks.push(Check::flag(format!("{name}: contraction inequality on the grid"), rep.pass));
        reports.push(rep);
    }
    report.details = serde_json::to_value(&reports)?;
    report.finish();
    Ok(report)
}

// ---------------------------------------------------------------------------
// simulate

pub fn run_simulate(input: &ExperimentConfig) -> Result<(ExperimentReport, Trajectory)> {
    let mut cfg = input.clone();
    set(&mut cfg.model, "double-well-1d".into());
    let kind = SchemeKind::parse(&set(&mut cfg.scheme, "tamed".into()))?;
    let delta = set(&mut cfg.delta, 0.01);
    let horizon = set(&mut cfg.horizon, 1.0);
    let n = set(&mut cfg.n, 256);
    let times = set(&mut cfg.times, vec![horizon]);
    set(&mut cfg.format, "csv".into());
    let seed = seed_of(&mut cfg);

    let model = cfg.build_model()?;
    let init = cfg.initial_law(model.dim, None)?;
    let scfg = cfg.scheme_config_at(kind, delta, horizon)?;
    let traj = simulate(&model, &scfg, n, &init, &NoisePlan::labelled(seed, "simulate", &[]), &times)?;
    let mut report = ExperimentReport::new(ExperimentKind::Simulate.name(), cfg.clone(), seed);
    for s in &traj.snapshots {
        if let Some(e) = &s.ensemble {
            let per: Vec<f64> = (0..e.len()).map(|i| e.particle(i).iter().map(|x| x * x).sum()).collect();
            let set = SampleSet::new(per);
            report.points.push(SeriesPoint { grid_value: 2.0, time: s.requested, estimate: set.mean(), stderr: set.stderr() });
        }
    }
    report.checks.push(Check::flag("no blow-up", traj.blow_up.is_none()));
    report.details = json!({
        "estimate": "second moment",
        "steps": traj.steps,
        "blow_up": traj.blow_up,
        "adaptive_steps": traj.adaptive.as_ref().map(|a| a.steps),
    });
    report.finish();
    Ok((report, traj))
}

/// Writes snapshots as `trajectory.csv` (`time,particle,x0,…`) or as
/// `trajectory.bin`: little-endian `u64` count, then per snapshot `f64`
/// time, `u64` N, `u64` d and `N·d` `f64` positions.
pub fn write_trajectory(traj: &Trajectory, dir: &Path, format: &str) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let valid: Vec<(f64, &Ensemble)> =
        traj.snapshots.iter().filter_map(|s| s.ensemble.as_ref().map(|e| (s.requested, e))).collect();
    match format {
        "csv" => {
            use std::fmt::Write as _;
            let d = valid.first().map_or(0, |(_, e)| e.dim());
            let mut s = String::from("time,particle");
            for c in 0..d {
                let _ = write!(s, ",x{c}");
            }
            s.push('\n');
            for (t, e) in &valid {
                for i in 0..e.len() {
                    let _ = write!(s, "{t},{i}");
                    for v in e.particle(i) {
                        let _ = write!(s, ",{v}");
                    }
                    s.push('\n');
                }
            }
            let path = dir.join("trajectory.csv");
            std::fs::write(&path, s)?;
            Ok(path)
        }
        "bin" => {
            let mut b: Vec<u8> = Vec::new();
            b.extend((valid.len() as u64).to_le_bytes());
            for (t, e) in &valid {
                b.extend(t.to_le_bytes());
                b.extend((e.len() as u64).to_le_bytes());
                b.extend((e.dim() as u64).to_le_bytes());
                for v in e.positions() {
                    b.extend(v.to_le_bytes());
                }
            }
            let path = dir.join("trajectory.bin");
            std::fs::write(&path, b)?;
            Ok(path)
        }
        other => config_err(format!("key `format`: expected csv or bin, got {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(v: &[f64]) -> Ensemble {
        Ensemble::from_scalars(v, 0.0).unwrap()
    }

    #[test]
    fn remove_sorted_multiset() {
        assert_eq!(remove_sorted(&[1.0, 2.0, 2.0, 3.0], &[2.0, 3.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn pooled_w1_matches_direct_and_jackknife() {
        let a = vec![ens(&[0.0, 1.0]), ens(&[2.0, 3.0]), ens(&[4.0, 4.5])];
        let b = vec![ens(&[0.5, 1.5]), ens(&[2.5, 3.5]), ens(&[4.5, 5.0])];
        let (w, se) = pooled_w1(&a, &b, 0).unwrap();
        let all_a: Vec<f64> = a.iter().flat_map(|e| e.positions().to_vec()).collect();
        let all_b: Vec<f64> = b.iter().flat_map(|e| e.positions().to_vec()).collect();
        assert_eq!(w, crate::metrics::w1_1d(&all_a, &all_b).unwrap());
        // Leave-one-out values: 0.5, 0.5, 0.5 → zero spread.
        assert_eq!(se, 0.0);
    }

    #[test]
    fn quartiles() {
        let t: Vec<f64> = (0..=8).map(|i| i as f64).collect();
        let v: Vec<f64> = t.iter().map(|x| x * 10.0).collect();
        let (mid, last) = quartile_means(&t, &v, 8.0);
        assert_eq!(mid, (20.0 + 30.0 + 40.0 + 50.0) / 4.0);
        assert_eq!(last, (60.0 + 70.0 + 80.0) / 3.0);
    }

    #[test]
    fn grid_rounding() {
        assert!((round_up_to_grid(10.0, 0.16) - 10.08).abs() < 1e-12);
        assert_eq!(round_up_to_grid(10.0, 0.02), 10.0);
        assert!(is_power_of_two_multiple(0.16, 0.02));
        assert!(!is_power_of_two_multiple(0.06, 0.02));
    }
}
