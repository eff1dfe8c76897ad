//! Flat key-value experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{ModelOverrides, ModelSpec};
use crate::schemes::{InitialLaw, SchemeConfig, SchemeKind, TamingMode};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Chaos,
    DeltaRate,
    Decay,
    DelayRate,
    Moments,
    CoupleCheck,
    ContractionCheck,
    Simulate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Chaos => "chaos",
            Self::DeltaRate => "delta-rate",
            Self::Decay => "decay",
            Self::DelayRate => "delay-rate",
            Self::Moments => "moments",
            Self::CoupleCheck => "couple-check",
            Self::ContractionCheck => "contraction-check",
            Self::Simulate => "simulate",
        }
    }
}

/// Every key is optional; each experiment fills in its own defaults and
/// echoes the resolved values in its report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    // model
    pub model: Option<String>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(rename = "K_interaction")]
    pub k_interaction: Option<f64>,
    pub sigma: Option<f64>,
    #[serde(rename = "L_mult")]
    pub l_mult: Option<f64>,
    pub dim: Option<usize>,

    // scheme
    pub scheme: Option<String>,
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
    pub taming_mode: Option<String>,
    pub r0: Option<f64>,
    pub horizon: Option<f64>,
    pub implicit_tol: Option<f64>,
    pub implicit_max_iter: Option<usize>,
    /// Adaptive runs cut their last step to end on each snapshot time
    /// instead of reporting the first grid time past it.
    pub adaptive_landing: Option<bool>,

    // runs
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "N_ref")]
    pub n_ref: Option<usize>,
    pub grid: Option<Vec<f64>>,
    pub repetitions: Option<usize>,
    pub seed: Option<u64>,
    /// `point`, `gaussian` or `uniform`.
    pub init: Option<String>,
    pub init_value: Option<f64>,
    pub init_second: Option<f64>,
    pub init_std: Option<f64>,
    pub init_lo: Option<f64>,
    pub init_hi: Option<f64>,
    pub times: Option<Vec<f64>>,
    pub time_step: Option<f64>,
    /// Independent pooled estimates averaged per grid point.
    pub batches: Option<usize>,
    /// Fine Brownian steps per reference step in the delta-rate experiment.
    pub fine_divisions: Option<usize>,

    // acceptance windows
    pub window_lo: Option<f64>,
    pub window_hi: Option<f64>,
    pub min_r2: Option<f64>,
    pub fit_t_lo: Option<f64>,
    pub fit_t_hi: Option<f64>,
    pub control_tol: Option<f64>,
    pub moment_ratio: Option<f64>,

    // coupling
    pub epsilon: Option<f64>,
    pub inner_delta: Option<f64>,
    pub runs: Option<usize>,
    pub proxy_size: Option<usize>,

    // contraction
    pub rmax: Option<f64>,
    pub rgrid: Option<usize>,

    // moments
    pub p_grid: Option<Vec<f64>>,
    pub blowup_delta: Option<f64>,

    // simulate
    /// `csv` or `bin`.
    pub format: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn overrides(&self) -> ModelOverrides {
        ModelOverrides {
            beta: self.beta,
            alpha: self.alpha,
            k_interaction: self.k_interaction,
            sigma: self.sigma,
            l_mult: self.l_mult,
            dim: self.dim,
        }
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        let name = self.model.as_deref().ok_or_else(|| Error::Config("key `model`: missing".into()))?;
        ModelSpec::gallery(name, &self.overrides())
    }

    pub fn scheme_kind(&self) -> Result<SchemeKind> {
        SchemeKind::parse(self.scheme.as_deref().ok_or_else(|| Error::Config("key `scheme`: missing".into()))?)
    }

    /// Scheme configuration at step `delta` (the `delta` key is ignored).
    pub fn scheme_config_at(&self, kind: SchemeKind, delta: f64, horizon: f64) -> Result<SchemeConfig> {
        let mut c = SchemeConfig::new(kind, delta, horizon);
        if let Some(k) = self.kappa {
            c.kappa = k;
        }
        if let Some(m) = &self.taming_mode {
            c.taming_mode = TamingMode::parse(m)?;
        }
        if let Some(r) = self.r0 {
            c.r0 = r;
        }
        if let Some(t) = self.implicit_tol {
            c.implicit_tol = t;
        }
        if let Some(i) = self.implicit_max_iter {
            c.implicit_max_iter = i;
        }
        if let Some(l) = self.adaptive_landing {
            c.adaptive_land_on_snapshots = l;
        }
        Ok(c)
    }

    /// Initial law in `dim` dimensions; `value` overrides `init_value` (used
    /// for the second law of the decay experiment).
    pub fn initial_law(&self, dim: usize, value: Option<f64>) -> Result<InitialLaw> {
        let v = value.or(self.init_value).unwrap_or(0.0);
        match self.init.as_deref().unwrap_or("point") {
            "point" => Ok(InitialLaw::PointMass(vec![v; dim])),
            "gaussian" => Ok(InitialLaw::Gaussian { mean: vec![v; dim], std: self.init_std.unwrap_or(1.0) }),
            "uniform" => Ok(InitialLaw::Uniform {
                lo: vec![self.init_lo.unwrap_or(-1.0); dim],
                hi: vec![self.init_hi.unwrap_or(1.0); dim],
            }),
            other => config_err(format!("key `init`: unknown initial law {other:?}")),
        }
    }

    pub fn positive(&self, key: &str, v: Option<f64>) -> Result<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Ok(x),
            Some(x) => config_err(format!("key `{key}`: must be positive, got {x}")),
            None => config_err(format!("key `{key}`: missing")),
        }
    }

    pub fn count(&self, key: &str, v: Option<usize>) -> Result<usize> {
        match v {
            Some(0) => config_err(format!("key `{key}`: must be at least 1")),
            Some(x) => Ok(x),
            None => config_err(format!("key `{key}`: missing")),
        }
    }

    pub fn nonempty_grid(&self) -> Result<&[f64]> {
        match self.grid.as_deref() {
            Some([]) => config_err("key `grid`: must be nonempty"),
            Some(g) => Ok(g),
            None => config_err("key `grid`: missing"),
        }
    }
}
