//! Seed derivation and random streams.
//!
//! Every random quantity in a run is drawn from a stream keyed by a 64-bit
//! seed. Sub-seeds are derived from a master seed, a purpose tag and an index
//! by hashing; the scheme is:
//!
//! ```text
//! derive_seed(master, tag, index) =
//!     first 8 bytes (little endian) of
//!     SHA-256( master as u64 LE || len(tag) as u64 LE || tag bytes || index as u64 LE )
//! ```
//!
//! A seed is turned into a stream with ChaCha8 (`rand_chacha`), seeded through
//! `SeedableRng::seed_from_u64`. Both algorithms are fully specified, so runs
//! are reproducible across platforms and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Tag for the stored-pattern stream of a master seed.
pub const TAG_PATTERNS: &str = "patterns";
/// Tag for per-trial corruption streams.
pub const TAG_TRIAL: &str = "trial";

pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn derive_seed_is_pure() {
        assert_eq!(derive_seed(7, "trial", 3), derive_seed(7, "trial", 3));
    }

    #[test]
    fn tags_separate_streams() {
        assert_ne!(
            derive_seed(1, TAG_PATTERNS, 0),
            derive_seed(1, TAG_TRIAL, 0)
        );
        // the length prefix keeps ("ab", ..) and ("a", ..) apart
        assert_ne!(derive_seed(1, "ab", 0), derive_seed(1, "a", 0));
    }

    #[test]
    fn frozen_values() {
        // Computed with Python's hashlib from the scheme in the module docs.
        assert_eq!(derive_seed(0, TAG_PATTERNS, 0), 3776527032128501459);
        assert_eq!(derive_seed(1, TAG_PATTERNS, 0), 16462132538823851310);
        assert_eq!(derive_seed(1, TAG_TRIAL, 0), 759584527679935127);
        assert_eq!(derive_seed(12345, TAG_TRIAL, 7), 7981942805519890907);
    }

    #[test]
    fn no_duplicates_in_1e5_seeds() {
        let mut seen = HashSet::with_capacity(100_000);
        for i in 0..100_000u64 {
            assert!(
                seen.insert(derive_seed(42, TAG_TRIAL, i)),
                "duplicate at {i}"
            );
        }
    }
}
