//! In-network aggregation emulator.
//!
//! Workers stream NAT8C-coded chunks to an aggregator that decodes them to
//! 64-bit fixed point, sums across workers, stochastically rounds the sum
//! back to a power of two with integer operations only, and multicasts the
//! re-encoded chunk to every worker.

pub mod client;
pub mod fixed;
pub mod server;
pub mod wire;

pub use client::{InaGroup, InaWorker};
pub use server::{InaServer, ServerConfig, ServerStats};
pub use wire::{ChunkFrame, Hello, Message, MAX_CHUNK};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Worker id carried by aggregated frames.
pub const AGGREGATOR_ID: u16 = u16::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkOutcome {
    pub frame: ChunkFrame,
    /// Elements whose running sum hit the accumulator cap.
    pub saturated: u64,
    /// Elements whose rounded exponent exceeded the code range.
    pub clipped: u64,
}

/// Position of element `j` of chunk `c` in the session's random stream.
pub fn draw_index(chunk_index: u64, j: usize) -> u64 {
    chunk_index.wrapping_mul(MAX_CHUNK as u64).wrapping_add(j as u64)
}

/// Sums one chunk across workers and recompresses it.
pub fn aggregate_chunk(frames: &[ChunkFrame], rng: &RngStream) -> Result<ChunkOutcome> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Protocol("no frames to aggregate".into()))?;
    let len = first.payload.len();
    let mut seen = std::collections::HashSet::new();
    for f in frames {
        if f.session_id != first.session_id || f.chunk_index != first.chunk_index {
            return Err(Error::Protocol("frames from different chunks".into()));
        }
        if f.payload.len() != len {
            return Err(Error::Protocol(format!(
                "chunk {} length mismatch: {} vs {len}",
                f.chunk_index,
                f.payload.len()
            )));
        }
        if !seen.insert(f.worker_id) {
            return Err(Error::Protocol(format!("duplicate frame from worker {}", f.worker_id)));
        }
    }
    let mut acc = vec![0i64; len];
    let mut saturated = 0;
    for f in frames {
        saturated += fixed::accumulate(&mut acc, &f.payload)
            .map_err(|e| Error::Protocol(format!("worker {}: bad code {e:?}", f.worker_id)))?;
    }
    let mut clipped = 0;
    let payload = acc
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let (code, c) = fixed::recompress(s, rng.bits_at(draw_index(first.chunk_index, j)));
            clipped += c as u64;
            code
        })
        .collect();
    Ok(ChunkOutcome {
        frame: ChunkFrame {
            session_id: first.session_id,
            chunk_index: first.chunk_index,
            worker_id: AGGREGATOR_ID,
            payload,
        },
        saturated,
        clipped,
    })
}
