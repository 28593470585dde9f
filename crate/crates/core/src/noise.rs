//! Driving noise: Brownian increments on dyadic grids and Poisson jump streams.
//!
//! One [`NoiseRealization`] is generated at the finest level of a study and
//! every coarser step size reuses it through [`BrownianGrid::coarsen`], so
//! coarse and reference solutions see the same Brownian path and the same
//! jumps. Each path draws from generators derived from
//! `(master_seed, path_index, stream)`, which makes a realization a pure
//! function of those indices and independent of thread scheduling.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::measure::MarkMeasure;

/// Generator used for every per-path stream.
pub type PathRng = ChaCha8Rng;

pub const BROWNIAN_STREAM: u64 = 0;
pub const JUMP_STREAM: u64 = 1;
pub const INITIAL_STREAM: u64 = 2;

/// Bumped whenever the mapping from seeds to variates changes.
pub const NOISE_ALGORITHM_VERSION: u32 = 1;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit seed of stream `stream_id` of path `path_index`.
pub fn derive_path_seed(master_seed: u64, path_index: u64, stream_id: u64) -> u64 {
    let mut s = mix64(master_seed.wrapping_add(GOLDEN_GAMMA));
    s = mix64(
        s ^ path_index
            .wrapping_mul(GOLDEN_GAMMA)
            .wrapping_add(0x632b_e59b_d9b4_e019),
    );
    mix64(s ^ stream_id.wrapping_mul(0xd6e8_feb8_6659_fd93).wrapping_add(GOLDEN_GAMMA))
}

pub fn derive_path_rng(master_seed: u64, path_index: u64, stream_id: u64) -> PathRng {
    PathRng::seed_from_u64(derive_path_seed(master_seed, path_index, stream_id))
}

/// Brownian increments over `2^level` uniform steps of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianGrid {
    level: u32,
    horizon: f64,
    dim: usize,
    /// Row-major `2^level × dim`.
    increments: Vec<f64>,
}

impl BrownianGrid {
    pub fn from_increments(level: u32, horizon: f64, dim: usize, increments: Vec<f64>) -> Result<Self> {
        ensure!(level < 63, Argument, "level {level} too large");
        ensure!(dim >= 1, Argument, "Brownian dimension must be at least 1");
        ensure!(
            increments.len() == (1usize << level) * dim,
            Argument,
            "expected {} increments, got {}",
            (1usize << level) * dim,
            increments.len()
        );
        Ok(Self {
            level,
            horizon,
            dim,
            increments,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        1 << self.level
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// `ΔW` over step `n`.
    #[inline]
    pub fn increment(&self, n: usize) -> &[f64] {
        &self.increments[n * self.dim..(n + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Coarse grid whose increments are sums of `factor` fine increments.
    ///
    /// Summation is pairwise (one halving per factor of two), so
    /// `coarsen(coarsen(g, a), b) == coarsen(g, a * b)` holds bit-exactly.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianGrid> {
        ensure!(
            factor.is_power_of_two() && factor <= self.steps(),
            Argument,
            "coarsening factor {factor} must be a power of two not exceeding {}",
            self.steps()
        );
        let mut grid = self.clone();
        for _ in 0..factor.trailing_zeros() {
            grid = grid.halve();
        }
        Ok(grid)
    }

    fn halve(&self) -> BrownianGrid {
        let m = self.dim;
        let coarse_steps = self.steps() / 2;
        let mut increments = Vec::with_capacity(coarse_steps * m);
        for n in 0..coarse_steps {
            let a = self.increment(2 * n);
            let b = self.increment(2 * n + 1);
            increments.extend(a.iter().zip(b).map(|(x, y)| x + y));
        }
        BrownianGrid {
            level: self.level - 1,
            horizon: self.horizon,
            dim: m,
            increments,
        }
    }

    /// `W(t_k)` for `t_k = k·T/2^level`.
    ///
    /// `[0, t_k]` is split into its maximal aligned dyadic blocks, each block
    /// is summed pairwise and the blocks are added left to right. The result
    /// therefore does not depend on the resolution at which `t_k` is viewed.
    pub fn brownian_value(&self, k: usize) -> Vec<f64> {
        assert!(k <= self.steps(), "grid index {k} beyond {}", self.steps());
        let mut value = vec![0.0; self.dim];
        let mut start = 0usize;
        for bit in (0..=self.level).rev() {
            let block = 1usize << bit;
            if k & block != 0 {
                let sum = self.pairwise_block(start, block);
                for (v, s) in value.iter_mut().zip(&sum) {
                    *v += s;
                }
                start += block;
            }
        }
        value
    }

    /// `W(t_k)` for every `k = 0..=2^level`, row-major `(N + 1) × m`.
    ///
    /// Bit-identical to [`brownian_value`](Self::brownian_value) at each
    /// index: the last dyadic block of `[0, t_k]` is its lowest set bit.
    pub fn brownian_path(&self) -> Vec<f64> {
        let m = self.dim;
        let n = self.steps();
        // pyramid[j] holds the pairwise sums over aligned blocks of 2^j steps
        let mut pyramid = vec![self.increments.clone()];
        let mut grid = self.clone();
        while grid.level > 0 {
            grid = grid.halve();
            pyramid.push(grid.increments.clone());
        }
        let mut path = vec![0.0; (n + 1) * m];
        for k in 1..=n {
            let j = k.trailing_zeros() as usize;
            let start = k - (1 << j);
            let block = &pyramid[j][(start >> j) * m..((start >> j) + 1) * m];
            for c in 0..m {
                path[k * m + c] = path[start * m + c] + block[c];
            }
        }
        path
    }

    fn pairwise_block(&self, start: usize, len: usize) -> Vec<f64> {
        if len == 1 {
            return self.increment(start).to_vec();
        }
        let half = len / 2;
        let a = self.pairwise_block(start, half);
        let b = self.pairwise_block(start + half, half);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }
}

/// `2^level × m` i.i.d. `N(0, T/2^level)` increments.
pub fn sample_brownian<R: Rng + ?Sized>(rng: &mut R, horizon: f64, level: u32, dim: usize) -> BrownianGrid {
    let steps = 1usize << level;
    let scale = (horizon / steps as f64).sqrt();
    let increments = (0..steps * dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    BrownianGrid {
        level,
        horizon,
        dim,
        increments,
    }
}

/// One realized jump: its time and the index of its mark's atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub atom: usize,
}

/// Jumps of a Poisson random measure on `(0, T]`, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpStream {
    events: Vec<JumpEvent>,
}

impl JumpStream {
    pub fn new(mut events: Vec<JumpEvent>) -> Result<Self> {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        for pair in events.windows(2) {
            ensure!(
                pair[0].time < pair[1].time,
                Argument,
                "jump times must be distinct, found {} twice",
                pair[0].time
            );
        }
        ensure!(
            events.first().is_none_or(|e| e.time > 0.0),
            Argument,
            "jump times must be positive"
        );
        Ok(Self { events })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[JumpEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Jumps with time in the half-open window `(t0, t1]`.
    pub fn jumps_in_window(&self, t0: f64, t1: f64) -> Result<&[JumpEvent]> {
        ensure!(t0 <= t1, Argument, "reversed window ({t0}, {t1}]");
        Ok(self.window(t0, t1))
    }

    #[inline]
    pub(crate) fn window(&self, t0: f64, t1: f64) -> &[JumpEvent] {
        let start = self.events.partition_point(|e| e.time <= t0);
        let end = self.events.partition_point(|e| e.time <= t1);
        &self.events[start..end.max(start)]
    }

    /// Marks of the jumps in `(t0, t1]`.
    pub fn marks_in_window<'m>(&self, measure: &'m MarkMeasure, t0: f64, t1: f64) -> Result<Vec<&'m [f64]>> {
        Ok(self
            .jumps_in_window(t0, t1)?
            .iter()
            .map(|e| measure.atom(e.atom).mark.as_slice())
            .collect())
    }
}

/// `K ~ Poisson(λT)` jumps at sorted i.i.d. uniform times in `(0, T]`, marks
/// drawn from `ν/λ`.
pub fn sample_jump_stream<R: Rng + ?Sized>(rng: &mut R, measure: &MarkMeasure, horizon: f64) -> JumpStream {
    let mean = measure.total_mass() * horizon;
    let count = match Poisson::new(mean) {
        Ok(poisson) => poisson.sample(rng) as usize,
        Err(_) => 0,
    };
    if count == 0 {
        return JumpStream::empty();
    }
    let mut times: Vec<f64> = (0..count).map(|_| horizon * (1.0 - rng.random::<f64>())).collect();
    times.sort_by(f64::total_cmp);
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            times[i] = times[i - 1].next_up();
        }
    }
    let atoms: Vec<usize> = if measure.len() == 1 {
        vec![0; count]
    } else {
        let weights = WeightedIndex::new(measure.atoms().iter().map(|a| a.weight))
            .expect("validated measure has positive weights");
        (0..count).map(|_| weights.sample(rng)).collect()
    };
    JumpStream {
        events: times
            .into_iter()
            .zip(atoms)
            .map(|(time, atom)| JumpEvent { time, atom })
            .collect(),
    }
}

/// All randomness driving one Monte Carlo path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub brownian: BrownianGrid,
    pub jumps: JumpStream,
    pub master_seed: u64,
    pub path_index: u64,
}

impl NoiseRealization {
    /// Regenerates the noise of `path_index`; bit-identical on every call.
    pub fn generate(
        master_seed: u64,
        path_index: u64,
        level: u32,
        horizon: f64,
        brownian_dim: usize,
        measure: &MarkMeasure,
    ) -> Self {
        Self::generate_streams(
            master_seed,
            path_index,
            (BROWNIAN_STREAM, JUMP_STREAM),
            level,
            horizon,
            brownian_dim,
            measure,
        )
    }

    /// As [`generate`](Self::generate) with caller-chosen stream ids.
    pub fn generate_streams(
        master_seed: u64,
        path_index: u64,
        streams: (u64, u64),
        level: u32,
        horizon: f64,
        brownian_dim: usize,
        measure: &MarkMeasure,
    ) -> Self {
        let mut rng = derive_path_rng(master_seed, path_index, streams.0);
        let brownian = sample_brownian(&mut rng, horizon, level, brownian_dim);
        let mut rng = derive_path_rng(master_seed, path_index, streams.1);
        let jumps = sample_jump_stream(&mut rng, measure, horizon);
        Self {
            brownian,
            jumps,
            master_seed,
            path_index,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.brownian.horizon
    }

    pub fn level(&self) -> u32 {
        self.brownian.level
    }

    const MAGIC: &'static [u8; 8] = b"JSDENOIS";
    const FORMAT_VERSION: u32 = 1;

    /// Little-endian dump: magic, version, seed, path, level, T, m, counts,
    /// increments, then `(time, atom)` pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.master_seed.to_le_bytes())?;
        w.write_all(&self.path_index.to_le_bytes())?;
        w.write_all(&self.brownian.level.to_le_bytes())?;
        w.write_all(&self.brownian.horizon.to_le_bytes())?;
        w.write_all(&(self.brownian.dim as u64).to_le_bytes())?;
        w.write_all(&(self.brownian.increments.len() as u64).to_le_bytes())?;
        w.write_all(&(self.jumps.len() as u64).to_le_bytes())?;
        for v in &self.brownian.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        for e in self.jumps.events() {
            w.write_all(&e.time.to_le_bytes())?;
            w.write_all(&(e.atom as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Decode(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        ensure!(&magic == Self::MAGIC, Decode, "bad magic {magic:?}");
        let version = read_u32(&mut r)?;
        ensure!(
            version == Self::FORMAT_VERSION,
            Decode,
            "unsupported noise format version {version}"
        );
        let master_seed = read_u64(&mut r)?;
        let path_index = read_u64(&mut r)?;
        let level = read_u32(&mut r)?;
        let horizon = f64::from_bits(read_u64(&mut r)?);
        let dim = read_u64(&mut r)? as usize;
        let n_increments = read_u64(&mut r)? as usize;
        let n_jumps = read_u64(&mut r)? as usize;
        ensure!(
            level < 40 && dim > 0,
            Decode,
            "implausible header: level {level}, dim {dim}"
        );
        let increments = (0..n_increments)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let brownian =
            BrownianGrid::from_increments(level, horizon, dim, increments).map_err(|e| Error::Decode(e.to_string()))?;
        let mut events = Vec::with_capacity(n_jumps.min(1 << 20));
        for _ in 0..n_jumps {
            let time = f64::from_bits(read_u64(&mut r)?);
            let atom = read_u64(&mut r)? as usize;
            events.push(JumpEvent { time, atom });
        }
        let jumps = JumpStream::new(events).map_err(|e| Error::Decode(e.to_string()))?;
        Ok(Self {
            brownian,
            jumps,
            master_seed,
            path_index,
        })
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Decode(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Decode(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}
