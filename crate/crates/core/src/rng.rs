//! Seeded random streams.
//!
//! Every stochastic routine draws from ChaCha8, a counter-based generator, so
//! a stream is fully identified by `(seed, stream_id)`. Parallel work is split
//! into fixed-size chunks and chunk `c` always reads stream `c`, which makes
//! results independent of the number of worker threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

/// Name recorded in manifests for the generator behind [`stream`].
pub const GENERATOR_NAME: &str = "chacha8";

/// Number of draws handled by one parallel work unit.
pub const CHUNK: usize = 4096;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Derives an independent child seed; used to give each stage or replicate
/// of an experiment its own seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // Stream ids below 2^32 are reserved for chunked sampling.
    stream(seed, (1 << 40) + index).next_u64()
}

/// Splits `count` draws into `CHUNK`-sized pieces, chunk `c` reading
/// `stream(seed, c)`, and concatenates whatever `fill` pushes per piece.
pub fn chunked<T, F>(count: usize, seed: u64, fill: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut StreamRng, usize, &mut Vec<T>) -> Result<()> + Sync,
{
    let n_chunks = count.div_ceil(CHUNK);
    let pieces: Vec<Result<Vec<T>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(count - c * CHUNK);
            let mut rng = stream(seed, c as u64);
            let mut out = Vec::with_capacity(len);
            fill(&mut rng, len, &mut out)?;
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(count);
    for piece in pieces {
        all.extend(piece?);
    }
    Ok(all)
}
