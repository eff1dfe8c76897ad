//! Fixtures shared by the benchmarks in `benches/`.

use mvsde_core::model::ModelOverrides;
use mvsde_core::schemes::InitialLaw;
use mvsde_core::{Ensemble, ModelSpec};

pub fn double_well(k: f64) -> ModelSpec {
    ModelSpec::gallery("double-well-1d", &ModelOverrides { k_interaction: Some(k), ..Default::default() })
        .expect("gallery model")
}

/// `n` standard normal particles in 1D.
pub fn ensemble(n: usize, experiment: u64) -> Ensemble {
    InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 }.sample(n, 42, experiment).expect("valid law")
}

/// `n` one-dimensional Brownian increments over a step `dt`.
pub fn increments(n: usize, dt: f64, experiment: u64) -> Vec<f64> {
    ensemble(n, experiment).into_positions().into_iter().map(|z| z * dt.sqrt()).collect()
}
