//! Counter-based random streams.
//!
//! Every noise path is drawn from a ChaCha8 stream selected by
//! `(master seed, path index, lane, substream)`. Streams never overlap, so an
//! ensemble produces the same per-path randomness no matter how paths are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies the stream that produced a [`NoisePath`](crate::levy::NoisePath).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub master: u64,
    pub path: u64,
    /// Independent driver family for the same path index (0 = primary noise,
    /// 1 = perturbation noise, ...). At most 8 lanes.
    pub lane: u8,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Substream {
    Brownian = 0,
    Jumps = 1,
}

impl StreamId {
    pub const fn new(master: u64, path: u64) -> Self {
        Self {
            master,
            path,
            lane: 0,
        }
    }

    pub const fn with_lane(self, lane: u8) -> Self {
        Self { lane, ..self }
    }

    /// Stream for drawing experiment parameters (endpoints, windows, ...)
    /// attached to this path index. It lives on lane 7, which noise never uses.
    pub fn parameter_rng(&self) -> ChaCha8Rng {
        self.with_lane(7).rng(Substream::Brownian)
    }

    pub(crate) fn rng(&self, sub: Substream) -> ChaCha8Rng {
        debug_assert!(self.lane < 8);
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        let stream = self
            .path
            .wrapping_mul(16)
            .wrapping_add(u64::from(self.lane & 7) * 2)
            .wrapping_add(sub as u64);
        rng.set_stream(stream);
        rng
    }
}

impl std::fmt::Display for StreamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.master, self.path, self.lane)
    }
}
