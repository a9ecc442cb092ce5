//! Small shared helpers: stable hashing and temperature keys.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes. Stable across platforms and releases.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Incrementally mixes heterogeneous fields into a 64-bit seed.
#[derive(Debug, Clone)]
pub(crate) struct SeedMixer(u64);

impl SeedMixer {
    pub(crate) fn new(seed: u64) -> Self {
        Self(splitmix(seed ^ FNV_OFFSET))
    }

    pub(crate) fn u64(mut self, v: u64) -> Self {
        self.0 = splitmix(self.0 ^ v);
        self
    }

    pub(crate) fn str(self, s: &str) -> Self {
        // length prefix keeps ("ab","c") and ("a","bc") apart
        self.u64(s.len() as u64).u64(fnv1a(s.as_bytes()))
    }

    pub(crate) fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashable, exact key for a temperature value.
pub(crate) fn temp_key(t: f64) -> u64 {
    t.to_bits()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Argmax with ties resolved toward the earliest position.
pub(crate) fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if *v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}
