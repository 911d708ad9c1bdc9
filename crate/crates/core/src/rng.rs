//! Seedable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the 64-bit run seed, with a
//! 64-bit stream id selecting an independent keystream. Stream ids are
//! `(purpose << 40) | index`, so one seed yields disjoint streams for data,
//! rollouts, evaluation and initialization. Gaussian draws use Box–Muller.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Rollout = 3,
    Eval = 4,
    Projection = 5,
    HeldOut = 6,
    Sample = 7,
    Noise = 8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// Serializable generator position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub key: String,
    pub stream: u64,
    pub word_pos: String,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn stream(seed: u64, purpose: Stream, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((purpose as u64) << 40) | (index & ((1 << 40) - 1)));
        Self { inner }
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// One standard normal draw (the Box–Muller sine partner is discarded).
    pub fn normal(&mut self) -> f64 {
        let (z, _) = self.box_muller();
        z
    }

    fn box_muller(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = std::f64::consts::TAU * u2;
        (r * th.cos(), r * th.sin())
    }

    /// `n` standard normal draws, consuming Box–Muller pairs.
    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.box_muller();
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn state(&self) -> RngState {
        let key: String = self.inner.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        RngState { key, stream: self.inner.get_stream(), word_pos: self.inner.get_word_pos().to_string() }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        let bad = |what: &str| Error::Invalid(format!("rng state: bad {what}"));
        if state.key.len() != 64 {
            return Err(bad("key"));
        }
        let mut key = [0u8; 32];
        for (i, b) in key.iter_mut().enumerate() {
            *b = u8::from_str_radix(&state.key[2 * i..2 * i + 2], 16).map_err(|_| bad("key"))?;
        }
        let pos: u128 = state.word_pos.parse().map_err(|_| bad("word_pos"))?;
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(state.stream);
        inner.set_word_pos(pos);
        Ok(Self { inner })
    }
}
