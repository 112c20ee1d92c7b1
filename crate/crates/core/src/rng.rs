//! Reproducible uniform streams.
//!
//! Every replication owns a [`Stream`] keyed on `(master_seed, domain, index)`.
//! The underlying generator is ChaCha8, a counter-based cipher: the key is
//! derived from the master seed and the domain tag, and the replication
//! index selects the 64-bit stream id. Streams never overlap and can be
//! created in any order, so parallel execution reproduces sequential runs
//! bit for bit.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// A source of uniform variates on the open interval (0, 1).
///
/// Samplers in this crate consume uniforms only through this trait so the
/// number of draws per sample is part of their documented contract.
pub trait UniformSource {
    fn uniform(&mut self) -> f64;
}

impl<U: UniformSource + ?Sized> UniformSource for &mut U {
    fn uniform(&mut self) -> f64 {
        (**self).uniform()
    }
}

/// Domain tags separate independent uses of one master seed.
pub mod domain {
    pub const WALK: u64 = 0;
    pub const RUNNING_MAX: u64 = 1;
    pub const LIMIT: u64 = 2;
    pub const REFERENCE: u64 = 3;
}

#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Stream for replication `index` in the walk domain.
    pub fn new(master_seed: u64, index: u64) -> Self {
        Self::with_domain(master_seed, domain::WALK, index)
    }

    pub fn with_domain(master_seed: u64, domain: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Stream { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Maps 64 random bits to the midpoint grid `(k + 1/2) / 2^52`, which never
/// hits 0 or 1.
#[inline]
pub fn bits_to_open_unit(bits: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 52) as f64;
    ((bits >> 12) as f64 + 0.5) * SCALE
}

impl UniformSource for Stream {
    #[inline]
    fn uniform(&mut self) -> f64 {
        bits_to_open_unit(self.rng.next_u64())
    }
}

/// Replays a fixed list of uniforms, cycling when exhausted. Useful for
/// pinning samplers to known inputs.
#[derive(Clone, Debug)]
pub struct FixedUniforms<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> FixedUniforms<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        assert!(!values.is_empty(), "FixedUniforms needs at least one value");
        FixedUniforms { values, pos: 0 }
    }

    /// Number of uniforms handed out so far.
    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl UniformSource for FixedUniforms<'_> {
    fn uniform(&mut self) -> f64 {
        let v = self.values[self.pos % self.values.len()];
        self.pos += 1;
        v
    }
}
