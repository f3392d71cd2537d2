//! Weighted epoch sampling with per-worker local accumulators.
//!
//! Each worker walks its shard of a seeded permutation of the pool, adds the
//! sequence probability to its accumulator and emits one copy for every
//! integer the accumulator crosses.

use std::io::{Read, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

const PLAN_MAGIC: &[u8; 8] = b"MTRJPLN1";

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("sampling probability {p} for sequence {id} must be positive and finite")]
    BadProbability { id: u32, p: f64 },
    #[error("need at least one worker")]
    NoWorkers,
    #[error("plan file: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub l: f64,
}

impl Accumulator {
    pub fn new(l: f64) -> Self {
        Self { l }
    }

    /// Adds `p` and returns the number of integers crossed.
    pub fn encounter(&mut self, p: f64) -> Option<u64> {
        if !(p > 0.0 && p.is_finite()) {
            return None;
        }
        let before = self.l.floor();
        self.l += p;
        Some((self.l.floor() - before) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub workers: usize,
    pub seed: u64,
    /// Keep accumulator values across epochs instead of resetting to 0.
    pub carry_over: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { workers: 4, seed: 0, carry_over: false }
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u32) -> Vec<u32> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut ids: Vec<u32> = (0..n as u32).collect();
    ids.shuffle(&mut rng);
    ids
}

/// Contiguous, near-equal shards; the first `n % workers` get one extra.
pub fn shard_ranges(n: usize, workers: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / workers, n % workers);
    let mut start = 0;
    (0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Runs one worker over its shard. Returns `(sequence id, copies)` for every
/// selected sequence in encounter order.
pub fn run_shard(shard: &[u32], weights: &[f64], acc: &mut Accumulator) -> Result<Vec<(u32, u32)>, SamplerError> {
    let mut out = Vec::new();
    for &id in shard {
        let p = weights[id as usize];
        let copies = acc.encounter(p).ok_or(SamplerError::BadProbability { id, p })?;
        if copies > 0 {
            out.push((id, copies as u32));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub epoch: u32,
    pub seed: u64,
    pub workers: Vec<Vec<(u32, u32)>>,
}

impl EpochPlan {
    pub fn total_copies(&self) -> u64 {
        self.workers.iter().flatten().map(|&(_, c)| c as u64).sum()
    }

    /// Selected ids with repeats, workers concatenated in order.
    pub fn expand(&self) -> Vec<u32> {
        self.workers
            .iter()
            .flatten()
            .flat_map(|&(id, c)| std::iter::repeat_n(id, c as usize))
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(PLAN_MAGIC)?;
        w.write_all(&self.epoch.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.workers.len() as u32).to_le_bytes())?;
        for sel in &self.workers {
            w.write_all(&(sel.len() as u32).to_le_bytes())?;
            for &(id, c) in sel {
                w.write_all(&id.to_le_bytes())?;
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, SamplerError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| SamplerError::Io(e.to_string()))?;
        if buf.len() < 24 || &buf[..8] != PLAN_MAGIC {
            return Err(SamplerError::Malformed("bad magic".into()));
        }
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8], SamplerError> {
            let s = buf.get(pos..pos + n).ok_or_else(|| SamplerError::Malformed("truncated".into()))?;
            pos += n;
            Ok(s)
        };
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let epoch = u32_of(take(4)?);
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let n_workers = u32_of(take(4)?);
        let mut workers = Vec::with_capacity(n_workers as usize);
        for _ in 0..n_workers {
            let n = u32_of(take(4)?);
            let mut sel = Vec::with_capacity(n as usize);
            for _ in 0..n {
                sel.push((u32_of(take(4)?), u32_of(take(4)?)));
            }
            workers.push(sel);
        }
        if pos != buf.len() {
            return Err(SamplerError::Malformed("trailing bytes".into()));
        }
        Ok(Self { epoch, seed, workers })
    }
}

/// Plans one epoch. `accumulators` holds one entry per worker and is updated
/// in place.
pub fn plan_epoch(
    weights: &[f64],
    cfg: &SamplerConfig,
    epoch: u32,
    accumulators: &mut [Accumulator],
) -> Result<EpochPlan, SamplerError> {
    if cfg.workers == 0 || accumulators.len() != cfg.workers {
        return Err(SamplerError::NoWorkers);
    }
    let perm = epoch_permutation(weights.len(), cfg.seed, epoch);
    let shards = shard_ranges(perm.len(), cfg.workers);
    let workers = shards
        .into_par_iter()
        .zip(accumulators.par_iter_mut())
        .map(|(range, acc)| {
            if !cfg.carry_over {
                *acc = Accumulator::default();
            }
            run_shard(&perm[range], weights, acc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EpochPlan { epoch, seed: cfg.seed, workers })
}

pub fn plan_epochs(weights: &[f64], cfg: &SamplerConfig, epochs: u32) -> Result<Vec<EpochPlan>, SamplerError> {
    let mut accs = vec![Accumulator::default(); cfg.workers];
    (0..epochs).map(|e| plan_epoch(weights, cfg, e, &mut accs)).collect()
}
