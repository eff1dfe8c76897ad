//! Wasserstein-1 estimators, moments and rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::Ensemble;
use crate::paths::{experiment_id, MotionTag, StreamId, StreamRng};

/// Default number of slicing directions for `d ≥ 2`.
pub const DEFAULT_PROJECTIONS: usize = 64;

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return config_err("W1 needs nonempty samples");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidState("non-finite sample in W1".into()));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Exact W1 between two empirical measures on the line.
///
/// Equal sizes use the order-statistic matching; otherwise the CDF
/// difference is integrated exactly over the merged breakpoints.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    Ok(w1_sorted(&a, &b))
}

/// [`w1_1d`] on samples that are already ascending and finite.
pub fn w1_1d_sorted(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return config_err("W1 needs nonempty samples");
    }
    debug_assert!(a.windows(2).all(|w| w[0] <= w[1]) && b.windows(2).all(|w| w[0] <= w[1]));
    Ok(w1_sorted(a, b))
}

fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        return s / a.len() as f64;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total += (fa - fb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// `n^{-1/2} ∫ √(Fₙ(1 − Fₙ)) dx`, the usual scale of the fluctuation of an
/// empirical W1 around its mean.
pub fn w1_standard_error(sample: &[f64]) -> Result<f64> {
    let s = sorted(sample)?;
    let n = s.len() as f64;
    let mut acc = 0.0;
    for i in 1..s.len() {
        let f = i as f64 / n;
        acc += (s[i] - s[i - 1]) * (f * (1.0 - f)).sqrt();
    }
    Ok(acc / n.sqrt())
}

/// `√(se_a² + se_b²)` for a two-sample W1.
pub fn w1_combined_standard_error(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(w1_standard_error(a)?.hypot(w1_standard_error(b)?))
}

/// `n` unit vectors in `Rᵈ`, row-major.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StreamRng::new(seed, StreamId::new(experiment_id("sliced", &[]), dim as u64, MotionTag::Aux));
    let mut out = vec![0.0; dim * n];
    for row in out.chunks_mut(dim) {
        loop {
            rng.fill_normal(row);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                row.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
    }
    out
}

fn project(points: &[f64], dim: usize, dir: &[f64]) -> Vec<f64> {
    points
        .chunks(dim)
        .map(|p| p.iter().zip(dir).map(|(x, u)| x * u).sum())
        .collect()
}

fn check_shapes(a: &[f64], b: &[f64], dim: usize) -> Result<()> {
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return config_err("sample arrays are not whole rows of the given dimension");
    }
    Ok(())
}

/// Average of 1D W1 over the given unit directions.
pub fn sliced_w1_with_directions(a: &[f64], b: &[f64], dim: usize, dirs: &[f64]) -> Result<f64> {
    check_shapes(a, b, dim)?;
    if dirs.is_empty() || !dirs.len().is_multiple_of(dim) {
        return config_err("need at least one direction");
    }
    let mut total = 0.0;
    let k = dirs.len() / dim;
    for u in dirs.chunks(dim) {
        total += w1_1d(&project(a, dim, u), &project(b, dim, u))?;
    }
    Ok(total / k as f64)
}

pub fn sliced_w1(a: &[f64], b: &[f64], dim: usize, n_proj: usize, seed: u64) -> Result<f64> {
    if n_proj == 0 {
        return config_err("n_proj must be positive");
    }
    sliced_w1_with_directions(a, b, dim, &random_directions(dim, n_proj, seed))
}

/// Sliced estimate with the direction-averaged combined standard error.
pub fn sliced_w1_with_se(a: &[f64], b: &[f64], dim: usize, dirs: &[f64]) -> Result<(f64, f64)> {
    check_shapes(a, b, dim)?;
    let k = dirs.len() / dim;
    let (mut w, mut se) = (0.0, 0.0);
    for u in dirs.chunks(dim) {
        let pa = project(a, dim, u);
        let pb = project(b, dim, u);
        w += w1_1d(&pa, &pb)?;
        se += w1_combined_standard_error(&pa, &pb)?;
    }
    Ok((w / k as f64, se / k as f64))
}

/// W1 between ensembles: exact in 1D, sliced otherwise.
pub fn ensemble_w1(a: &Ensemble, b: &Ensemble, n_proj: usize, seed: u64) -> Result<f64> {
    if a.dim() != b.dim() {
        return config_err("ensembles have different dimensions");
    }
    if a.dim() == 1 {
        w1_1d(a.positions(), b.positions())
    } else {
        sliced_w1(a.positions(), b.positions(), a.dim(), n_proj, seed)
    }
}

/// W1 with its combined standard error; exact in 1D, sliced otherwise.
pub fn ensemble_w1_with_se(a: &Ensemble, b: &Ensemble, n_proj: usize, seed: u64) -> Result<(f64, f64)> {
    if a.dim() != b.dim() {
        return config_err("ensembles have different dimensions");
    }
    if a.dim() == 1 {
        Ok((w1_1d(a.positions(), b.positions())?, w1_combined_standard_error(a.positions(), b.positions())?))
    } else {
        sliced_w1_with_se(a.positions(), b.positions(), a.dim(), &random_directions(a.dim(), n_proj, seed))
    }
}

/// `(1/N) Σ |Xᵢ|ᵖ`.
pub fn moment(ens: &Ensemble, p: f64) -> f64 {
    let n = ens.len();
    let s: f64 = (0..n)
        .map(|i| ens.particle(i).iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
        .sum();
    s / n as f64
}

/// A set of scalar replicate estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation over `√n`; zero for a single value.
    pub fn stderr(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    /// Standard error from the means of `batches` contiguous batches, for
    /// correlated series.
    pub fn batch_stderr(&self, batches: usize) -> f64 {
        let n = self.values.len();
        if batches < 2 || n < batches {
            return self.stderr();
        }
        let size = n / batches;
        let means: Vec<f64> = (0..batches)
            .map(|b| self.values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
            .collect();
        SampleSet::new(means).stderr()
    }
}

/// Least-squares line fit in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_stderr: f64,
    pub n_points: usize,
    /// `−slope` and `e^{intercept}` for exponential-decay fits.
    pub rate: Option<f64>,
    pub prefactor: Option<f64>,
}

fn line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<RateFit> {
    let n = xs.len();
    if n < 3 {
        return config_err(format!("a rate fit needs at least 3 points, got {n}"));
    }
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
        syy += w * (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return config_err("rate fit needs at least two distinct abscissae");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_stderr = if n > 2 { (ss_res / (n - 2) as f64 / sxx).sqrt() } else { 0.0 };
    Ok(RateFit { slope, intercept, r2: r2.clamp(0.0, 1.0), slope_stderr, n_points: n, rate: None, prefactor: None })
}

fn logs(v: &[f64], what: &str) -> Result<Vec<f64>> {
    v.iter()
        .map(|&x| {
            if x > 0.0 && x.is_finite() {
                Ok(x.ln())
            } else {
                Err(Error::InvalidState(format!("{what} must be positive and finite for a log fit, got {x}")))
            }
        })
        .collect()
}

/// Slope of `log y` against `log x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return config_err("fit inputs differ in length");
    }
    line_fit(&logs(xs, "abscissa")?, &logs(ys, "ordinate")?, &vec![1.0; xs.len()])
}

/// Log-log fit weighted by the inverse variance of `log y`, taken as
/// `(se/y)²`. Points with zero standard error get the largest finite weight
/// present.
pub fn fit_loglog_weighted(xs: &[f64], ys: &[f64], ses: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() || xs.len() != ses.len() {
        return config_err("fit inputs differ in length");
    }
    let lx = logs(xs, "abscissa")?;
    let ly = logs(ys, "ordinate")?;
    let raw: Vec<f64> = ys.iter().zip(ses).map(|(y, s)| (y / s).powi(2)).collect();
    let cap = raw.iter().copied().filter(|w| w.is_finite()).fold(0.0, f64::max);
    let ws: Vec<f64> = raw.iter().map(|&w| if w.is_finite() { w } else if cap > 0.0 { cap } else { 1.0 }).collect();
    line_fit(&lx, &ly, &ws)
}

/// Slope of `log y` against `t`; the decay rate is its negative.
pub fn fit_exponential_decay(ts: &[f64], ys: &[f64]) -> Result<RateFit> {
    if ts.len() != ys.len() {
        return config_err("fit inputs differ in length");
    }
    let mut fit = line_fit(ts, &logs(ys, "ordinate")?, &vec![1.0; ts.len()])?;
    fit.rate = Some(-fit.slope);
    fit.prefactor = Some(fit.intercept.exp());
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w1_shift_and_equal() {
        assert_eq!(w1_1d(&[0.0, 1.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(w1_1d(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(w1_1d(&[0.0, 1.0], &[0.5, 1.5]).unwrap(), 0.5);
    }

    #[test]
    fn w1_unequal_sizes_cdf_integral() {
        let v = w1_1d(&[0.0, 1.0], &[2.0]).unwrap();
        assert!((v - 1.5).abs() < 1e-15);
        // |2/3 − 0| on [0,1) plus |2/3 − 1| on [1,3).
        let v = w1_1d(&[0.0, 0.0, 3.0], &[1.0]).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn w1_rejects_empty() {
        assert!(w1_1d(&[], &[1.0]).is_err());
        assert!(w1_1d(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn loglog_exact_line() {
        let xs = [0.01, 0.02, 0.04];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.sqrt()).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_decay_exact() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = ts.iter().map(|t: &f64| 2.0 * (-0.5 * t).exp()).collect();
        let f = fit_exponential_decay(&ts, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn fits_reject_bad_input() {
        assert!(fit_loglog(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
        assert!(fit_loglog(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn weighted_fit_exact_line_ignores_weights() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powf(-0.7)).collect();
        let f = fit_loglog_weighted(&xs, &ys, &[0.1, 0.01, 0.3, 0.0]).unwrap();
        assert!((f.slope + 0.7).abs() < 1e-12);
    }

    #[test]
    fn w1_se_uniform_grid() {
        // Uniform order statistics on [0,1]: ∫√(F(1−F)) ≈ π/8.
        let n = 20_000;
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let se = w1_standard_error(&pts).unwrap() * (n as f64).sqrt();
        assert!((se - std::f64::consts::PI / 8.0).abs() < 1e-3);
    }

    #[test]
    fn batch_stderr_of_constant_batches() {
        let s = SampleSet::new(vec![1.0, 1.0, 3.0, 3.0]);
        assert!((s.batch_stderr(2) - 1.0).abs() < 1e-15);
        assert_eq!(SampleSet::new(vec![2.0]).stderr(), 0.0);
    }

    #[test]
    fn moment_matches_definition() {
        let e = Ensemble::new(vec![3.0, 4.0, 0.0, 1.0], 2, 0.0).unwrap();
        assert!((moment(&e, 2.0) - 13.0).abs() < 1e-12);
    }

    #[test]
    fn directions_are_unit() {
        let d = random_directions(3, 10, 1);
        for u in d.chunks(3) {
            assert!((u.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
