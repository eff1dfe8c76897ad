//! Counter-based Gaussian streams and common Brownian paths.
//!
//! Every stream is a ChaCha8 keystream keyed by
//! `(master_seed, experiment, particle, tag)`. Normals come from Box–Muller
//! on a fixed number of words per pair, so draw `n` of a stream can be
//! reached directly without generating the ones before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotionTag {
    /// Additive Brownian motion.
    W,
    /// Multiplicative Brownian motion.
    B,
    /// Second additive motion of a coupling.
    W2,
    /// Interior bridge samples of a common fine-grid path.
    Bridge,
    /// Initial conditions and other non-path draws.
    Aux,
}

impl MotionTag {
    fn code(self) -> u64 {
        match self {
            MotionTag::W => 1,
            MotionTag::B => 2,
            MotionTag::W2 => 3,
            MotionTag::Bridge => 4,
            MotionTag::Aux => 5,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId {
    pub experiment: u64,
    pub particle: u64,
    pub tag: MotionTag,
}

impl StreamId {
    pub fn new(experiment: u64, particle: u64, tag: MotionTag) -> Self {
        Self { experiment, particle, tag }
    }
}

/// Stable experiment identifier from a label and integer coordinates
/// (repetition, grid index, ...).
pub fn experiment_id(label: &str, coords: &[u64]) -> u64 {
    // FNV-1a over the label, then mixed with each coordinate.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for &c in coords {
        h = splitmix(h ^ splitmix(c.wrapping_add(0x51_7cc1_b727_220a)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_key(master_seed: u64, id: StreamId) -> [u8; 32] {
    let words = [
        splitmix(master_seed),
        splitmix(id.experiment ^ 0x6a09_e667_f3bc_c908),
        splitmix(id.particle ^ 0xbb67_ae85_84ca_a73b),
        splitmix(id.tag.code() ^ master_seed.rotate_left(17)),
    ];
    let mut key = [0u8; 32];
    for (i, w) in words.iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
    }
    key
}

/// Sequential reader over one stream.
#[derive(Clone, Debug)]
pub struct StreamRng {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

/// Words (u32) consumed per Box–Muller pair.
const WORDS_PER_PAIR: u128 = 4;

impl StreamRng {
    pub fn new(master_seed: u64, id: StreamId) -> Self {
        Self { rng: ChaCha8Rng::from_seed(stream_key(master_seed, id)), spare: None }
    }

    /// Positions the stream so the next [`Self::normal`] returns draw `index`.
    pub fn seek_normal(&mut self, index: u64) {
        self.rng.set_word_pos(WORDS_PER_PAIR * (index / 2) as u128);
        self.spare = None;
        if index % 2 == 1 {
            self.normal();
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// A stream of `dim`-dimensional Brownian increments over steps of `dt`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub id: StreamId,
    pub dim: usize,
    pub dt: f64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, id: StreamId, dim: usize, dt: f64) -> Self {
        Self { master_seed, id, dim, dt }
    }

    pub fn reader(&self) -> StreamRng {
        StreamRng::new(self.master_seed, self.id)
    }

    /// Increment number `index`, generated without producing earlier ones.
    pub fn increment_at(&self, index: u64) -> Vec<f64> {
        let mut rng = self.reader();
        rng.seek_normal(index * self.dim as u64);
        let s = self.dt.sqrt();
        (0..self.dim).map(|_| s * rng.normal()).collect()
    }
}

/// The first `count` increments, row-major `count × dim`.
pub fn gaussian_increments(stream: &NoiseStream, count: usize) -> Result<Vec<f64>> {
    if !(stream.dt > 0.0) {
        return config_err(format!("increment step must be positive, got {}", stream.dt));
    }
    let mut rng = stream.reader();
    let s = stream.dt.sqrt();
    let mut out = vec![0.0; count * stream.dim];
    for v in out.iter_mut() {
        *v = s * rng.normal();
    }
    Ok(out)
}

/// Sum of `f(0), …, f(n−1)` along a balanced binary tree split at `n/2`.
///
/// For `n` a power of two every aligned block of size `2ᵏ` is a subtree,
/// which makes nested coarsening bitwise associative.
pub fn pairwise_sum_by(n: usize, f: impl Fn(usize) -> f64 + Copy) -> f64 {
    fn rec(lo: usize, hi: usize, f: impl Fn(usize) -> f64 + Copy) -> f64 {
        match hi - lo {
            0 => 0.0,
            1 => f(lo),
            2 => f(lo) + f(lo + 1),
            len => {
                let mid = lo + len / 2;
                rec(lo, mid, f) + rec(mid, hi, f)
            }
        }
    }
    rec(0, n, f)
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values.len(), |i| values[i])
}

/// Sums consecutive groups of `factor` rows of a row-major `rows × dim`
/// increment array.
pub fn coarsen(increments: &[f64], dim: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || dim == 0 {
        return config_err("coarsening factor and dimension must be positive");
    }
    if !increments.len().is_multiple_of(dim) {
        return config_err("increment array is not a whole number of rows");
    }
    let rows = increments.len() / dim;
    if !rows.is_multiple_of(factor) {
        return config_err(format!("{rows} rows are not divisible by coarsening factor {factor}"));
    }
    let coarse_rows = rows / factor;
    let mut out = vec![0.0; coarse_rows * dim];
    for k in 0..coarse_rows {
        let block = &increments[k * factor * dim..(k + 1) * factor * dim];
        for c in 0..dim {
            out[k * dim + c] = pairwise_sum_by(factor, |j| block[j * dim + c]);
        }
    }
    Ok(out)
}

/// Integer ratio `coarse / fine`, if it is one up to rounding.
pub fn integer_ratio(coarse: f64, fine: f64) -> Option<usize> {
    let r = coarse / fine;
    let k = r.round();
    (k >= 1.0 && (r - k).abs() <= 1e-9 * k).then_some(k as usize)
}

/// A Brownian path fixed on a fine grid and refined on demand.
///
/// Grid values come from a `W` stream. Off-grid queries are answered by
/// exact Brownian-bridge sampling between the last queried point and the
/// next grid point, drawing from a separate `Bridge` stream. Queries must be
/// nondecreasing in time.
#[derive(Clone, Debug)]
pub struct BridgedPath {
    dim: usize,
    dt: f64,
    grid: StreamRng,
    bridge: StreamRng,
    cell: u64,
    last_t: f64,
    w_last: Vec<f64>,
    w_right: Vec<f64>,
}

impl BridgedPath {
    pub fn new(master_seed: u64, experiment: u64, particle: u64, dim: usize, dt: f64) -> Self {
        let mut grid = StreamRng::new(master_seed, StreamId::new(experiment, particle, MotionTag::W));
        let bridge = StreamRng::new(master_seed, StreamId::new(experiment, particle, MotionTag::Bridge));
        let s = dt.sqrt();
        let w_right = (0..dim).map(|_| s * grid.normal()).collect();
        Self { dim, dt, grid, bridge, cell: 0, last_t: 0.0, w_last: vec![0.0; dim], w_right, }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Writes `W(t)` into `out`.
    pub fn value_at(&mut self, t: f64, out: &mut [f64]) {
        debug_assert!(t >= self.last_t - 1e-12 * self.dt.max(t));
        let snap = 1e-9 * self.dt;
        loop {
            let right = (self.cell + 1) as f64 * self.dt;
            if t < right - snap {
                break;
            }
            // Advance to the next grid point.
            self.cell += 1;
            self.last_t = right;
            std::mem::swap(&mut self.w_last, &mut self.w_right);
            let s = self.dt.sqrt();
            for c in 0..self.dim {
                self.w_right[c] = self.w_last[c] + s * self.grid.normal();
            }
            if t <= right + snap {
                out.copy_from_slice(&self.w_last);
                return;
            }
        }
        if t <= self.last_t {
            out.copy_from_slice(&self.w_last);
            return;
        }
        let right = (self.cell + 1) as f64 * self.dt;
        let span = right - self.last_t;
        let frac = (t - self.last_t) / span;
        let sd = ((t - self.last_t) * (right - t) / span).max(0.0).sqrt();
        for c in 0..self.dim {
            let w = self.w_last[c] + frac * (self.w_right[c] - self.w_last[c]) + sd * self.bridge.normal();
            self.w_last[c] = w;
            out[c] = w;
        }
        self.last_t = t;
    }
}
