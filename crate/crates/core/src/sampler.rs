//! Counter-based uniform sampling.
//!
//! Every draw is addressed by `(seed, purpose, stream, index)`: the seed and
//! purpose select a ChaCha8 key, the stream id selects the ChaCha stream and
//! the index selects the word position. Any point can therefore be
//! recomputed without generating its predecessors, and parallel workers
//! produce the same values no matter how the index range is split.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::grid::Region;
use crate::par;
use crate::plant::PlantSet;

/// Sizes and seed of the Monte Carlo data sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleConfig {
    pub seed: u64,
    /// Points `(x, u)` drawn from `𝕏 × 𝕌`.
    pub n_xu: usize,
    /// Successors drawn per `(x, u)` point.
    pub n_succ: usize,
    /// State-only points used for level sets.
    pub n_x: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { seed: 0, n_xu: 5_000_000, n_succ: 500, n_x: 1_000_000 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("n_xu", self.n_xu), ("n_succ", self.n_succ), ("n_x", self.n_x)] {
            if value == 0 {
                return Err(Error::InvalidParameter(alloc::format!("{name} must be at least 1")));
            }
        }
        if self.n_xu > u32::MAX as usize || self.n_x > u32::MAX as usize {
            return Err(Error::InvalidParameter("sample counts must fit in 32 bits".into()));
        }
        Ok(())
    }
}

/// Independent sample families drawn from one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    StateControl = 1,
    Successor = 2,
    State = 3,
    Boundary = 4,
    Swarm = 5,
    Simulation = 6,
    Probe = 7,
    Noise = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, stream: u64) -> Self {
        Self { seed, purpose, stream }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }
}

/// A generator positioned at a given draw of a stream.
pub struct CounterRng {
    inner: ChaCha8Rng,
}

impl CounterRng {
    /// Positions the generator so the next `next_u64` is draw `index`.
    pub fn at(key: StreamKey, index: u64) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&key.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&(key.purpose as u64).to_le_bytes());
        seed[16..24].copy_from_slice(&0x6a09_e667_f3bc_c908u64.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_stream(key.stream);
        // one u64 draw consumes two 32-bit words
        inner.set_word_pos(u128::from(index) * 2);
        Self { inner }
    }

    /// Moves to draw `index` of `stream` under the same seed and purpose,
    /// without re-deriving the key.
    pub fn seek(&mut self, stream: u64, index: u64) {
        self.inner.set_stream(stream);
        self.inner.set_word_pos(u128::from(index) * 2);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lower, upper)`; returns `lower` when the interval is empty.
    pub fn next_in(&mut self, lower: f64, upper: f64) -> f64 {
        lower + (upper - lower) * self.next_unit()
    }

    /// Uniform index in `0..n` (`n > 0`), by rejection to avoid bias.
    pub fn next_below(&mut self, n: u64) -> u64 {
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }
}

/// A flat, row-major collection of equally sized points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Dimension { expected: dim, got: coords.len() });
        }
        Ok(Self { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Point `index` of the uniform sample of `region` under `key`.
pub fn sample_point(region: &Region, key: StreamKey, index: u64) -> Vec<f64> {
    let dim = region.dim();
    let mut rng = CounterRng::at(key, index * dim as u64);
    (0..dim).map(|d| rng.next_in(region.lower()[d], region.upper()[d])).collect()
}

const CHUNK_POINTS: usize = 4096;

/// `count` points drawn uniformly from `region`.
pub fn sample_box(region: &Region, count: usize, key: StreamKey) -> PointSet {
    let dim = region.dim();
    let mut coords = vec![0.0; count * dim];
    par::for_each_chunk(&mut coords, CHUNK_POINTS * dim, |chunk_index, chunk| {
        let first = (chunk_index * CHUNK_POINTS * dim) as u64;
        let mut rng = CounterRng::at(key, first);
        for point in chunk.chunks_exact_mut(dim) {
            for (d, c) in point.iter_mut().enumerate() {
                *c = rng.next_in(region.lower()[d], region.upper()[d]);
            }
        }
    });
    PointSet { dim, coords }
}

/// Draws `count` successors of `(x, u)` uniformly from the successor box.
/// A zero-width box yields copies of its centre.
pub fn sample_successors(
    plant: &PlantSet,
    x: &[f64],
    u: &[f64],
    count: usize,
    key: StreamKey,
) -> Result<PointSet> {
    let b = plant.successor_box(x, u)?;
    let n = plant.state_dim();
    let mut rng = CounterRng::at(key, 0);
    let mut coords = Vec::with_capacity(count * n);
    for _ in 0..count {
        for d in 0..n {
            coords.push(rng.next_in(b.lower[d], b.upper[d]));
        }
    }
    Ok(PointSet { dim: n, coords })
}
