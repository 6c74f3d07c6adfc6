//! Rigid-surjection combinatorics and the constructive net machinery
//! behind the two quantitative Ramsey lemmas: nets P and Q, the α
//! encodings, and the rigid surjection τ.

pub mod epi;
pub mod nets;

use serde::{Deserialize, Serialize};

/// Coloring specification shared by the combinatorial search and the
/// embedding-space oscillation machinery.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColoringSpec {
    /// r-valued coloring evaluated through a backend.
    Discrete {
        r: u32,
        backend: DiscreteBackend,
        #[serde(default)]
        seed: u64,
    },
    /// 1-Lipschitz coloring c(φ) = min over a reference set of
    /// d_cb(φ, ref), clipped to [0,1]. References are indices into
    /// whatever net the caller evaluates against.
    Lipschitz {
        reference_indices: Vec<usize>,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum DiscreteBackend {
    /// c(f) = |f⁻¹(class)| mod r.
    PreimageCount { class: u32 },
    /// Lookup keyed by the member's enumeration index.
    Table { values: Vec<u32> },
    /// FNV hash of the member's serialized values, mod r.
    Hashed,
}

pub(crate) fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
