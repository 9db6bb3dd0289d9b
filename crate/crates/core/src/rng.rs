//! Keyed deterministic randomness. Every random draw in a scenario comes
//! from a ChaCha8 stream keyed on `(domain, seed, id, index)`, so draws never
//! depend on the order in which other draws happened.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Domain {
    Counter = 1,
    Delta = 2,
    Tamper = 3,
    Topology = 4,
    Device = 5,
    Attack = 6,
    Patch = 7,
    Loss = 8,
}

pub(crate) fn keyed_rng(domain: Domain, seed: u64, id: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&(domain as u64).to_le_bytes());
    key[8..16].copy_from_slice(&seed.to_le_bytes());
    key[16..24].copy_from_slice(&id.to_le_bytes());
    key[24..].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
