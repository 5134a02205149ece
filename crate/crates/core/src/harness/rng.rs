//! Independent random substreams derived from one seed.
//!
//! Each consumer owns a ChaCha8 stream selected by stream id, so drawing
//! more or fewer values in one consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BanditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Context = 0,
    Reward = 1,
    Policy = 2,
    Noise = 3,
    Init = 4,
}

pub const STREAMS: [Stream; 5] = [
    Stream::Context,
    Stream::Reward,
    Stream::Policy,
    Stream::Noise,
    Stream::Init,
];

#[derive(Debug, Clone, PartialEq)]
pub struct RngStreams {
    seed: u64,
    rngs: Vec<ChaCha8Rng>,
}

/// Word positions of every stream, enough to restore them exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Decimal `u128` word positions in stream order.
    pub word_pos: Vec<String>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let rngs = STREAMS
            .iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                rng
            })
            .collect();
        Self { seed, rngs }
    }

    pub fn get(&mut self, stream: Stream) -> &mut ChaCha8Rng {
        &mut self.rngs[stream as usize]
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.rngs.iter().map(|r| r.get_word_pos().to_string()).collect(),
        }
    }

    pub fn restore(state: &RngState) -> Result<Self> {
        if state.word_pos.len() != STREAMS.len() {
            return Err(BanditError::Checkpoint(format!(
                "expected {} rng streams, found {}",
                STREAMS.len(),
                state.word_pos.len()
            )));
        }
        let mut streams = Self::new(state.seed);
        for (rng, pos) in streams.rngs.iter_mut().zip(&state.word_pos) {
            let pos: u128 = pos
                .parse()
                .map_err(|_| BanditError::Checkpoint(format!("bad rng word position `{pos}`")))?;
            rng.set_word_pos(pos);
        }
        Ok(streams)
    }
}
