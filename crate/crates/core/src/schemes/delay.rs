//! Euler scheme for the delay equation, drift read at `t − r₀`.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::steps::{check_noise, em_update, Scratch};
use super::SchemeConfig;
use crate::error::{config_err, Result};
use crate::model::{Ensemble, ModelSpec};

/// The last `lag + 1` ensembles on the step grid, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayHistory {
    buf: VecDeque<Ensemble>,
    lag: usize,
}

impl DelayHistory {
    /// History whose initial segment is constant in time and equal to `xi`.
    pub fn constant(xi: Ensemble, lag: usize) -> Self {
        Self { buf: std::iter::repeat_n(xi, lag + 1).collect(), lag }
    }

    /// History from a full initial segment on the grid of `[−r₀, 0]`.
    pub fn from_segment(segment: Vec<Ensemble>) -> Result<Self> {
        if segment.is_empty() {
            return config_err("delay segment must contain at least the time-0 ensemble");
        }
        let n = segment[0].len();
        if segment.iter().any(|e| e.len() != n || e.dim() != segment[0].dim()) {
            return config_err("delay segment ensembles differ in shape");
        }
        let lag = segment.len() - 1;
        Ok(Self { buf: segment.into(), lag })
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn current(&self) -> &Ensemble {
        self.buf.back().expect("history is never empty")
    }

    /// The ensemble `lag` steps back.
    pub fn delayed(&self) -> &Ensemble {
        self.buf.front().expect("history is never empty")
    }

    pub(crate) fn push(&mut self, e: Ensemble) {
        self.buf.push_back(e);
        self.buf.pop_front();
    }

    pub(crate) fn restamp_latest(&mut self, time: f64) {
        let last = self.buf.pop_back().expect("history is never empty");
        let d = last.dim();
        self.buf.push_back(Ensemble::from_parts_unchecked(last.into_positions(), d, time));
    }
}

/// `yᵢ ← yᵢ + b(yᵢ(t−r₀), μ_{t−r₀})δ + σ dWᵢ + σ₀(yᵢ) dBᵢ`, then rotates
/// the buffer.
pub fn delay_em_step(
    hist: &mut DelayHistory,
    model: &ModelSpec,
    cfg: &SchemeConfig,
    dw: &[f64],
    db: Option<&[f64]>,
) -> Result<Ensemble> {
    if cfg.delay_lag()? != hist.lag {
        return config_err(format!(
            "key `r0`: history holds lag {} but r0/delta = {}",
            hist.lag,
            cfg.delay_lag()?
        ));
    }
    let cur = hist.current();
    let old = hist.delayed();
    let (n, d, m) = (cur.len(), model.dim, model.noise_dim());
    check_noise(model, n, dw, db)?;
    let mut pos = vec![0.0; n * d];
    pos.par_chunks_mut(d)
        .enumerate()
        .for_each_init(
            || Scratch::new(model),
            |s, (i, o)| {
                let dbi = db.map(|b| &b[i * m..(i + 1) * m]);
                em_update(model, old.particle(i), old, cur.particle(i), &dw[i * d..(i + 1) * d], dbi, cfg.delta, o, s);
            },
        );
    let next = Ensemble::from_parts_unchecked(pos, d, cur.time() + cfg.delta);
    hist.push(next.clone());
    Ok(next)
}
