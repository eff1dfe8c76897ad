//! Lyapunov distance `f(r) = 1 − e^{−c₁r} + c₂r` and a grid check of the
//! contraction inequality `φ*(r) ≤ −λ* f(r)`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{Constants, ModelSpec};

/// Relative tolerance of the grid check; only rounding is admitted.
pub const CONTRACTION_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConstants {
    pub c1: f64,
    pub c2: f64,
    pub lambda_star: f64,
    pub lambda_star_star: f64,
    /// Whether `λ** > 0`, the regime where the constants close.
    pub closes: bool,
    pub sigma: f64,
}

pub fn lyapunov_constants(model: &ModelSpec) -> Result<LyapunovConstants> {
    lyapunov_constants_from(&model.constants, model.sigma)
}

pub fn lyapunov_constants_from(c: &Constants, sigma: f64) -> Result<LyapunovConstants> {
    if sigma == 0.0 || !sigma.is_finite() {
        return config_err("key `sigma`: the Lyapunov constants need a nonzero finite sigma");
    }
    let gap = c.lambda - c.k - c.l / 2.0;
    if !(gap > 0.0) {
        return Err(Error::Regime(format!(
            "lambda = {} must exceed K + L/2 = {}",
            c.lambda,
            c.k + c.l / 2.0
        )));
    }
    let s2 = sigma * sigma;
    let phi_l0 = c.lambda0 * c.ell0;
    let c1 = 2.0 * (phi_l0 + (c.l + 2.0 * c.k) * c.ell0 / 2.0) / s2;
    let c2 = c1 * (-c1 * c.ell0).exp();
    let head = (2.0 * phi_l0 + c.l * c.ell0).min(gap);
    let lambda_star = head * c2 / (-(-c1 * c.ell0).exp_m1() + c2 * c.ell0);
    let lambda_star_star = lambda_star - c.k * (1.0 + c1 / c2);
    Ok(LyapunovConstants {
        c1,
        c2,
        lambda_star,
        lambda_star_star,
        closes: lambda_star_star > 0.0,
        sigma,
    })
}

impl LyapunovConstants {
    pub fn f(&self, r: f64) -> f64 {
        -(-self.c1 * r).exp_m1() + self.c2 * r
    }

    pub fn f_prime(&self, r: f64) -> f64 {
        self.c1 * (-self.c1 * r).exp() + self.c2
    }

    pub fn f_double_prime(&self, r: f64) -> f64 {
        -self.c1 * self.c1 * (-self.c1 * r).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub model: String,
    pub constants: LyapunovConstants,
    pub r_max: f64,
    pub n_grid: usize,
    /// Largest `(φ*(r) + λ* f(r)) / max(1, |φ*(r)|)` over the grid.
    pub max_violation: f64,
    pub worst_r: f64,
    pub worst_phi_star: f64,
    /// `f' > 0` and `f'' < 0` at every grid point.
    pub concave_increasing: bool,
    pub pass: bool,
    pub note: String,
}

/// `φ*(r)` for the short-range profile `φ(r) = λ₀ r`.
pub fn phi_star(c: &LyapunovConstants, k: &Constants, r: f64) -> f64 {
    let short = if r <= k.ell0 { k.lambda0 * r + k.lambda * r } else { 0.0 };
    let gap = k.lambda - k.k - k.l / 2.0;
    let e = (-c.c1 * r).exp();
    (c.c1 * e + c.c2) * (short - gap * r) - 2.0 * c.sigma * c.sigma * c.c1 * c.c1 * e
}

pub fn verify_contraction(
    c: &LyapunovConstants,
    model: &ModelSpec,
    r_max: f64,
    n_grid: usize,
) -> Result<ContractionReport> {
    let k = &model.constants;
    if !(k.lambda > k.k + k.l / 2.0) {
        return Err(Error::Regime(format!("lambda = {} must exceed K + L/2", k.lambda)));
    }
    if !(r_max > 0.0) || n_grid == 0 {
        return config_err("contraction grid needs r_max > 0 and at least one point");
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_r = 0.0;
    let mut worst_phi = 0.0;
    let mut concave_increasing = true;
    for i in 1..=n_grid {
        let r = r_max * i as f64 / n_grid as f64;
        let ps = phi_star(c, k, r);
        let excess = (ps + c.lambda_star * c.f(r)) / ps.abs().max(1.0);
        if excess > worst {
            worst = excess;
            worst_r = r;
            worst_phi = ps;
        }
        concave_increasing &= c.f_prime(r) > 0.0 && c.f_double_prime(r) < 0.0;
    }
    Ok(ContractionReport {
        model: model.name.clone(),
        constants: c.clone(),
        r_max,
        n_grid,
        max_violation: worst,
        worst_r,
        worst_phi_star: worst_phi,
        concave_increasing,
        pass: worst <= CONTRACTION_TOL && concave_increasing,
        note: "the length scale in c1 is taken to be ell0".into(),
    })
}

/// Whether `r ↦ r / (1 − e^{−αr} + r)` is nondecreasing on the grid.
pub fn ratio_is_increasing(alpha: f64, r_max: f64, n_grid: usize) -> bool {
    let g = |r: f64| r / (1.0 - (-alpha * r).exp() + r);
    let mut prev = g(r_max / n_grid as f64);
    for i in 2..=n_grid {
        let cur = g(r_max * i as f64 / n_grid as f64);
        if cur < prev * (1.0 - 1e-14) {
            return false;
        }
        prev = cur;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelOverrides, GALLERY};

    fn consts(lambda0: f64, ell0: f64, lambda: f64, k: f64, l: f64) -> Constants {
        Constants { lambda0, lambda, ell0, k, l, alpha: 1.0, lambda_b1: 0.3, lambda_b1_hat: 0.34, lstar: 2.0 }
    }

    fn model_with(c: Constants) -> ModelSpec {
        let mut m = ModelSpec::gallery("double-well-1d", &ModelOverrides::default()).unwrap();
        m.constants = c;
        m
    }

    #[test]
    fn formula_evaluation() {
        let c = lyapunov_constants_from(&consts(3.0, 2.0, 1.0, 0.05, 0.0), 1.0).unwrap();
        assert!((c.c1 - 12.2).abs() < 1e-12);
        assert!((c.c2 - 12.2 * (-24.4f64).exp()).abs() <= 1e-12 * c.c2);
        assert_eq!(c.c2, c.c1 * (-c.c1 * 2.0).exp());
    }

    #[test]
    fn no_interaction_gives_equal_lambdas() {
        let c = lyapunov_constants_from(&consts(1.0, 2.0, 1.0, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(c.lambda_star, c.lambda_star_star);
    }

    #[test]
    fn regime_and_sigma_errors() {
        assert!(matches!(lyapunov_constants_from(&consts(1.0, 1.0, 0.1, 0.2, 0.0), 1.0), Err(Error::Regime(_))));
        assert!(matches!(lyapunov_constants_from(&consts(1.0, 1.0, 1.0, 0.0, 0.0), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn ou_small_ell0_limit() {
        let at = |ell0: f64| lyapunov_constants_from(&consts(1.0, ell0, 1.0, 0.0, 0.0), 1.0).unwrap().lambda_star;
        let a = at(1e-3);
        let b = at(1e-6);
        assert!((b - 1.0).abs() <= (a - 1.0).abs());
        assert!((b - 1.0).abs() < 1e-5);
    }

    #[test]
    fn f_basic_properties() {
        let c = lyapunov_constants_from(&consts(1.0, 2.0, 1.0, 0.05, 0.0), 1.0).unwrap();
        assert_eq!(c.f(0.0), 0.0);
        assert!((c.f_prime(0.0) - (c.c1 + c.c2)).abs() < 1e-15);
        // (1 − e^{−c₁r})/r is the gap, so go far enough out for a 1e-6 relative match.
        let far = 1e7 / c.c2;
        assert!((c.f(far) / far - c.c2).abs() <= 1e-6 * c.c2);
        for i in 0..10_000 {
            let r = 20.0 * i as f64 / 9999.0;
            let f = c.f(r);
            assert!(c.c2 * r <= f + 1e-15 && f <= (c.c1 + c.c2) * r + 1e-15, "r = {r}");
        }
    }

    #[test]
    fn double_well_example_passes() {
        let m = model_with(consts(3.0, 2.0, 1.0, 0.05, 0.0));
        let c = lyapunov_constants(&m).unwrap();
        let rep = verify_contraction(&c, &m, 20.0, 10_000).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(phi_star(&c, &m.constants, 1e-9) < 0.0);
        assert!(ratio_is_increasing(c.c1, 20.0, 10_000));
    }

    #[test]
    fn gallery_passes_on_ten_ell0() {
        for name in GALLERY {
            let m = ModelSpec::gallery(name, &ModelOverrides { k_interaction: Some(0.05), ..Default::default() }).unwrap();
            let c = lyapunov_constants(&m).unwrap();
            let rep = verify_contraction(&c, &m, 10.0 * m.constants.ell0, 10_000).unwrap();
            assert!(rep.pass, "{name}: {rep:?}");
        }
    }

    #[test]
    fn short_ell0_breaks_the_inequality() {
        // The λ* formula does not close the inequality when ℓ₀ is small.
        let m = model_with(consts(1.0, 0.5, 1.0, 0.0, 0.0));
        let c = lyapunov_constants(&m).unwrap();
        let rep = verify_contraction(&c, &m, 5.0, 10_000).unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn violating_model_rejected() {
        let m = model_with(consts(1.0, 2.0, 0.01, 0.05, 0.0));
        assert!(lyapunov_constants(&m).is_err());
    }
}
