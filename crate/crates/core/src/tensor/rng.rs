use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const RNG_ALGORITHM: &str = "chacha8";

/// Serializable position of a [`SeededRng`] stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    /// Keystream selected by [`SeededRng::fork`]; 0 for [`SeededRng::new`].
    pub stream: u64,
    pub algorithm: String,
    /// Word position inside the keystream.
    pub counter: u128,
}

/// Deterministic random source: identical seed and call sequence give
/// bit-identical draws on every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// An independent stream for a named purpose, e.g. weight init vs data.
    pub fn fork(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.inner.get_stream(),
            algorithm: RNG_ALGORITHM.to_string(),
            counter: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        if state.algorithm != RNG_ALGORITHM {
            return Err(Error::Format(format!("unsupported rng algorithm {:?}", state.algorithm)));
        }
        let mut rng = SeededRng::fork(state.seed, state.stream);
        rng.inner.set_word_pos(state.counter);
        Ok(rng)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
