//! SDE coefficients, particle ensembles and hypothesis diagnostics.
//!
//! A model is the drift `b(x, μ) = b₁(x) + (b₀ ∗ μ)(x)` together with an
//! additive intensity `σ` and an optional multiplicative part `σ₀(x)`.
//! Measures are always empirical here, so the convolution is a particle
//! average.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::paths::{pairwise_sum_by, MotionTag, StreamId, StreamRng};

/// Coordinates beyond this magnitude count as a blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e100;

/// `out ← F(x)`. Matrix-valued maps write row-major.
pub type VectorMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Structural constants of the drift and noise.
///
/// `lambda0` is the slope of the short-range profile `φ(r) = λ₀ r`;
/// `lambda`/`ell0` give long-range dissipativity beyond distance `ℓ₀`;
/// `k` and `l` are the Lipschitz constants of `b₀` and `σ₀`. The remaining
/// fields feed the tamed step-size threshold (`alpha` is the lower bound on
/// `‖∇b₁‖` far out, `lambda_b1`/`lambda_b1_hat` the growth constants) and
/// `lstar` is the polynomial degree of local Lipschitz growth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub lambda0: f64,
    pub lambda: f64,
    pub ell0: f64,
    pub k: f64,
    pub l: f64,
    pub alpha: f64,
    pub lambda_b1: f64,
    pub lambda_b1_hat: f64,
    pub lstar: f64,
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda0", self.lambda0),
            ("ell0", self.ell0),
            ("K", self.k),
            ("L", self.l),
            ("alpha", self.alpha),
            ("lambda_b1", self.lambda_b1),
            ("lambda_b1_hat", self.lambda_b1_hat),
            ("lstar", self.lstar),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return config_err(format!("constant {name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return config_err(format!("constant lambda must be > 0, got {}", self.lambda));
        }
        Ok(())
    }
}

/// Interaction kernel `b₀`, optionally declared linear `b₀(z) = −K z`.
#[derive(Clone)]
pub struct Kernel {
    map: VectorMap,
    linear: Option<f64>,
}

impl Kernel {
    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    pub fn linear(k: f64) -> Self {
        let map: VectorMap = Arc::new(move |z: &[f64], out: &mut [f64]| {
            for (o, zi) in out.iter_mut().zip(z) {
                *o = -k * zi;
            }
        });
        Self { map, linear: Some(k) }
    }

    pub fn general(map: VectorMap) -> Self {
        Self { map, linear: None }
    }

    /// A general map that additionally claims to equal `−K z`. The claim is
    /// checked by [`ModelSpec::check_linear_kernel`], not trusted blindly.
    pub fn declared_linear(map: VectorMap, k: f64) -> Self {
        Self { map, linear: Some(k) }
    }

    pub fn linear_coefficient(&self) -> Option<f64> {
        self.linear
    }

    pub fn is_zero(&self) -> bool {
        self.linear == Some(0.0)
    }

    pub fn eval(&self, z: &[f64], out: &mut [f64]) {
        (self.map)(z, out)
    }
}

/// Multiplicative noise `σ₀ : Rᵈ → Rᵈˣᵐ`.
#[derive(Clone)]
pub struct Multiplicative {
    pub m: usize,
    pub map: VectorMap,
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub b1: VectorMap,
    pub grad_b1: VectorMap,
    pub b0: Kernel,
    pub sigma: f64,
    pub sigma0: Option<Multiplicative>,
    pub constants: Constants,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("kernel_linear", &self.b0.linear)
            .field("sigma", &self.sigma)
            .field("sigma0_m", &self.sigma0.as_ref().map(|s| s.m))
            .field("constants", &self.constants)
            .finish()
    }
}

/// Numeric overrides accepted by the gallery.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOverrides {
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub k_interaction: Option<f64>,
    pub sigma: Option<f64>,
    pub l_mult: Option<f64>,
    pub dim: Option<usize>,
}

pub const GALLERY: [&str; 3] = ["double-well-1d", "ou", "double-well-nd"];

impl ModelSpec {
    /// Builds a gallery model by name.
    pub fn gallery(name: &str, ov: &ModelOverrides) -> Result<Self> {
        let sigma = ov.sigma.unwrap_or(1.0);
        let k = ov.k_interaction.unwrap_or(0.0);
        let l = ov.l_mult.unwrap_or(0.0);
        let model = match name {
            "double-well-1d" => {
                if ov.dim.is_some_and(|d| d != 1) {
                    return config_err("key `dim`: double-well-1d is one-dimensional");
                }
                double_well(1, k, sigma, l)
            }
            "double-well-nd" => double_well(ov.dim.unwrap_or(2), k, sigma, l),
            "ou" => ou(
                ov.dim.unwrap_or(1),
                ov.beta.unwrap_or(1.0),
                ov.alpha.unwrap_or(0.0),
                k,
                sigma,
                l,
            ),
            other => {
                return config_err(format!(
                    "key `model`: unknown model {other:?} (expected one of {GALLERY:?})"
                ))
            }
        };
        let model = Self { name: name.to_string(), ..model };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return config_err("model dimension must be positive");
        }
        if !self.sigma.is_finite() {
            return config_err("sigma must be finite");
        }
        self.constants.validate()
    }

    /// Additive noise must be non-degenerate for coupling and for the
    /// discretisation-error experiments.
    pub fn require_nondegenerate(&self) -> Result<()> {
        if self.sigma == 0.0 {
            return config_err("key `sigma`: must be nonzero for this experiment");
        }
        Ok(())
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma0.as_ref().map_or(0, |s| s.m)
    }

    /// `out ← (b₀ ∗ μ)(x)` with `μ` the ensemble's empirical measure.
    ///
    /// Declared-linear kernels use the cached ensemble mean, `−K(x − m̄)`.
    pub fn interaction_conv_into(&self, x: &[f64], ens: &Ensemble, out: &mut [f64], scratch: &mut [f64]) {
        let d = self.dim;
        if let Some(k) = self.b0.linear {
            for c in 0..d {
                out[c] = -k * (x[c] - ens.mean[c]);
            }
            return;
        }
        // General kernel: plain O(N) average. Accumulate per coordinate with
        // a pairwise tree to keep the result independent of N's parity.
        let n = ens.len();
        let (z, val) = scratch.split_at_mut(d);
        let mut acc = vec![0.0; n * d];
        for j in 0..n {
            let xj = ens.particle(j);
            for c in 0..d {
                z[c] = x[c] - xj[c];
            }
            self.b0.eval(z, &mut val[..d]);
            acc[j * d..(j + 1) * d].copy_from_slice(&val[..d]);
        }
        let inv = 1.0 / n as f64;
        for c in 0..d {
            out[c] = pairwise_sum_by(n, |j| acc[j * d + c]) * inv;
        }
    }

    pub fn interaction_conv(&self, x: &[f64], ens: &Ensemble) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        let mut scratch = vec![0.0; 2 * self.dim];
        self.interaction_conv_into(x, ens, &mut out, &mut scratch);
        Ok(out)
    }

    /// `out ← b₁(x) + (b₀ ∗ μ)(x)`.
    pub fn drift_into(&self, x: &[f64], ens: &Ensemble, out: &mut [f64], scratch: &mut [f64]) {
        let d = self.dim;
        let (conv, rest) = scratch.split_at_mut(d);
        self.interaction_conv_into(x, ens, conv, rest);
        (self.b1)(x, out);
        for c in 0..d {
            out[c] += conv[c];
        }
    }

    pub fn drift(&self, x: &[f64], ens: &Ensemble) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.scratch_len()];
        self.drift_into(x, ens, &mut out, &mut scratch);
        Ok(out)
    }

    /// Scratch length needed by [`Self::drift_into`].
    pub fn scratch_len(&self) -> usize {
        3 * self.dim
    }

    pub fn eval_b1(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.b1)(x, &mut out);
        out
    }

    pub fn eval_grad_b1(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.grad_b1)(x, &mut out);
        out
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return config_err(format!("point has dimension {}, model has {}", x.len(), self.dim));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite query point {x:?}")));
        }
        Ok(())
    }

    /// Samples pairs with `|x − y| ≤ radius` and measures the worst violation
    /// of the partial dissipativity of `b₁` (with `φ(r) = λ₀ r`) and of the
    /// Lipschitz bound on `b₀`.
    pub fn check_dissipativity(&self, n_pairs: usize, radius: f64, seed: u64) -> Result<DissipativityReport> {
        if n_pairs == 0 {
            return config_err("n_pairs must be at least 1");
        }
        let d = self.dim;
        let mut rng = StreamRng::new(seed, StreamId::new(0xd155, 0, MotionTag::Aux));
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut u = vec![0.0; d];
        let mut report = DissipativityReport { pairs: n_pairs, ..Default::default() };
        for _ in 0..n_pairs {
            for c in 0..d {
                x[c] = radius * (2.0 * rng.uniform() - 1.0);
                u[c] = rng.normal();
            }
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let len = radius * rng.uniform();
            for c in 0..d {
                y[c] = x[c] + len * u[c] / norm;
            }
            let (b1, b0) = self.pair_violations(&x, &y);
            if b1 > report.max_b1_violation {
                report.max_b1_violation = b1;
                report.worst_b1_pair = Some((x.clone(), y.clone()));
            }
            if b0 > report.max_b0_violation {
                report.max_b0_violation = b0;
                report.worst_b0_pair = Some((x.clone(), y.clone()));
            }
        }
        report.pass = report.max_b1_violation <= 0.0 && report.max_b0_violation <= 0.0;
        Ok(report)
    }

    /// Violation of the dissipativity inequality and of the kernel Lipschitz
    /// bound at one pair, with a rounding allowance already subtracted.
    /// Positive means violated.
    pub fn pair_violations(&self, x: &[f64], y: &[f64]) -> (f64, f64) {
        let c = &self.constants;
        let d = self.dim;
        let bx = self.eval_b1(x);
        let by = self.eval_b1(y);
        let mut inner = 0.0;
        let mut r2 = 0.0;
        for i in 0..d {
            let dz = x[i] - y[i];
            inner += dz * (bx[i] - by[i]);
            r2 += dz * dz;
        }
        let r = r2.sqrt();
        let bound = if r <= c.ell0 { c.lambda0 * r2 } else { -c.lambda * r2 };
        let scale = 1.0 + inner.abs() + bound.abs();
        let b1_violation = inner - bound - 1e-9 * scale;

        let z0: Vec<f64> = x.to_vec();
        let z1: Vec<f64> = y.to_vec();
        let mut k0 = vec![0.0; d];
        let mut k1 = vec![0.0; d];
        self.b0.eval(&z0, &mut k0);
        self.b0.eval(&z1, &mut k1);
        let diff = k0.iter().zip(&k1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let b0_violation = diff - c.k * r - 1e-9 * (1.0 + diff);
        (b1_violation, b0_violation)
    }

    /// Largest relative discrepancy (Frobenius norm, relative to
    /// `max(1, ‖∇b₁‖)`) between `grad_b1` and central differences of `b1`.
    pub fn check_gradient(&self, n_points: usize, max_norm: f64, step: f64, seed: u64) -> f64 {
        let d = self.dim;
        let mut rng = StreamRng::new(seed, StreamId::new(0x9ad, 0, MotionTag::Aux));
        let mut worst: f64 = 0.0;
        let mut x = vec![0.0; d];
        for _ in 0..n_points {
            let mut norm2 = 0.0;
            for c in 0..d {
                x[c] = rng.normal();
                norm2 += x[c] * x[c];
            }
            let target = max_norm * rng.uniform().powf(1.0 / d as f64);
            let scale = target / norm2.sqrt().max(f64::MIN_POSITIVE);
            x.iter_mut().for_each(|v| *v *= scale);

            let jac = self.eval_grad_b1(&x);
            let mut err2 = 0.0;
            let mut jac2 = 0.0;
            for col in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += step;
                xm[col] -= step;
                let fp = self.eval_b1(&xp);
                let fm = self.eval_b1(&xm);
                for row in 0..d {
                    let fd = (fp[row] - fm[row]) / (2.0 * step);
                    let j = jac[row * d + col];
                    err2 += (fd - j) * (fd - j);
                    jac2 += j * j;
                }
            }
            worst = worst.max(err2.sqrt() / jac2.sqrt().max(1.0));
        }
        worst
    }

    /// Largest relative discrepancy between the kernel map and its declared
    /// linear form on random inputs. `None` if no linear form is declared.
    pub fn check_linear_kernel(&self, n_points: usize, seed: u64) -> Option<f64> {
        let k = self.b0.linear?;
        let d = self.dim;
        let mut rng = StreamRng::new(seed, StreamId::new(0x11e, 0, MotionTag::Aux));
        let mut z = vec![0.0; d];
        let mut out = vec![0.0; d];
        let mut worst: f64 = 0.0;
        for _ in 0..n_points {
            for c in 0..d {
                z[c] = 10.0 * rng.normal();
            }
            self.b0.eval(&z, &mut out);
            for c in 0..d {
                let lin = -k * z[c];
                worst = worst.max((out[c] - lin).abs() / lin.abs().max(f64::MIN_POSITIVE).max(1e-300));
            }
        }
        Some(worst)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub pairs: usize,
    pub max_b1_violation: f64,
    pub worst_b1_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub max_b0_violation: f64,
    pub worst_b0_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub pass: bool,
}

fn multiplicative(dim: usize, l: f64) -> Option<Multiplicative> {
    if l <= 0.0 {
        return None;
    }
    // σ₀(x) = √L · diag(sin xₖ): ‖σ₀(x) − σ₀(y)‖²_HS ≤ L|x − y|².
    let s = l.sqrt();
    let map: VectorMap = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let d = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d + i] = s * x[i].sin();
        }
    });
    Some(Multiplicative { m: dim, map })
}

/// `b₁(x) = x − |x|² x`.
///
/// `⟨x−y, b₁(x)−b₁(y)⟩ ≤ |x−y|²(1 − |x−y|²/4)`, so `λ₀ = 1` and
/// `λ = ℓ₀²/4 − 1 = 1` at `ℓ₀ = 2√2`.
fn double_well(dim: usize, k: f64, sigma: f64, l: f64) -> ModelSpec {
    let b1: VectorMap = Arc::new(|x: &[f64], out: &mut [f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - r2 * xi;
        }
    });
    let grad_b1: VectorMap = Arc::new(|x: &[f64], out: &mut [f64]| {
        let d = x.len();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 - r2 } else { 0.0 };
                out[i * d + j] = id - 2.0 * x[i] * x[j];
            }
        }
    });
    let growth = 0.99 / (3.0 + ((dim - 1) as f64).sqrt());
    ModelSpec {
        name: String::new(),
        dim,
        b1,
        grad_b1,
        b0: Kernel::linear(k),
        sigma,
        sigma0: multiplicative(dim, l),
        constants: Constants {
            lambda0: 1.0,
            lambda: 1.0,
            ell0: 2.0 * std::f64::consts::SQRT_2,
            k,
            l,
            alpha: 16.0,
            lambda_b1: growth,
            lambda_b1_hat: 0.34,
            lstar: 2.0,
        },
    }
}

/// `b₁(x) = β(α − x)`, dissipative at every scale.
fn ou(dim: usize, beta: f64, center: f64, k: f64, sigma: f64, l: f64) -> ModelSpec {
    let b1: VectorMap = Arc::new(move |x: &[f64], out: &mut [f64]| {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = beta * (center - xi);
        }
    });
    let grad_b1: VectorMap = Arc::new(move |x: &[f64], out: &mut [f64]| {
        let d = x.len();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = if i == j { -beta } else { 0.0 };
            }
        }
    });
    let root_d = (dim as f64).sqrt();
    ModelSpec {
        name: String::new(),
        dim,
        b1,
        grad_b1,
        b0: Kernel::linear(k),
        sigma,
        sigma0: multiplicative(dim, l),
        constants: Constants {
            lambda0: 1.0,
            lambda: beta,
            ell0: 1.0,
            k,
            l,
            alpha: beta * root_d,
            lambda_b1: 0.9 / root_d,
            lambda_b1_hat: 1.0 / root_d,
            lstar: 0.0,
        },
    }
}

/// Particle positions at one time, with the cached empirical mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    positions: Vec<f64>,
    dim: usize,
    time: f64,
    mean: Vec<f64>,
}

impl Ensemble {
    pub fn new(positions: Vec<f64>, dim: usize, time: f64) -> Result<Self> {
        if dim == 0 || positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return config_err(format!(
                "ensemble needs at least one particle and a whole number of {dim}-vectors, got {} values",
                positions.len()
            ));
        }
        if !(time >= 0.0) {
            return config_err(format!("ensemble time must be nonnegative, got {time}"));
        }
        let mean = column_mean(&positions, dim);
        Ok(Self { positions, dim, time, mean })
    }

    pub fn from_scalars(values: &[f64], time: f64) -> Result<Self> {
        Self::new(values.to_vec(), 1, time)
    }

    pub(crate) fn from_parts_unchecked(positions: Vec<f64>, dim: usize, time: f64) -> Self {
        let mean = column_mean(&positions, dim);
        Self { positions, dim, time, mean }
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Index of the first particle with a non-finite or huge coordinate.
    pub fn find_blow_up(&self) -> Option<usize> {
        self.positions
            .iter()
            .position(|v| !(v.abs() <= BLOW_UP_THRESHOLD))
            .map(|k| k / self.dim)
    }
}

/// Per-coordinate mean through a fixed pairwise tree.
pub fn column_mean(positions: &[f64], dim: usize) -> Vec<f64> {
    let n = positions.len() / dim;
    let inv = 1.0 / n as f64;
    (0..dim)
        .map(|c| pairwise_sum_by(n, |j| positions[j * dim + c]) * inv)
        .collect()
}
