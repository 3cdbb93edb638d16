//! Deterministic per-replication random streams.
//!
//! Every replication draws from ChaCha8 streams keyed by
//! `(base_seed, replication index, purpose)`: the base seed selects the
//! cipher key and the pair `(replication, purpose)` selects the stream id
//! `replication * STREAMS_PER_REPLICATION + purpose`. Distinct pairs map to
//! distinct streams by construction, and the mapping is part of the output
//! contract: changing it changes every simulated dataset.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag for covariate-path noise.
pub const STREAM_COVARIATES: u64 = 0;
/// Purpose tag for point-process event noise.
pub const STREAM_EVENTS: u64 = 1;
/// Purpose tag for diffusion response noise.
pub const STREAM_RESPONSE: u64 = 2;

/// Stream slots reserved per replication (one spare for future use).
pub const STREAMS_PER_REPLICATION: u64 = 4;

/// Returns the RNG for one `(replication, purpose)` pair under `base_seed`.
pub fn replication_rng(base_seed: u64, replication: u64, purpose: u64) -> ChaCha8Rng {
    assert!(purpose < STREAMS_PER_REPLICATION, "unknown stream purpose {purpose}");
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replication * STREAMS_PER_REPLICATION + purpose);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn distinct_pairs_give_distinct_streams() {
        let mut seen = std::collections::HashSet::new();
        for rep in 0..64 {
            for purpose in 0..STREAMS_PER_REPLICATION {
                let mut rng = replication_rng(42, rep, purpose);
                let word = (rng.next_u64(), rng.next_u64());
                assert!(seen.insert(word), "stream collision at rep={rep}, purpose={purpose}");
            }
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = replication_rng(7, 3, STREAM_EVENTS);
        let mut b = replication_rng(7, 3, STREAM_EVENTS);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn base_seed_changes_everything() {
        let mut a = replication_rng(1, 0, STREAM_COVARIATES);
        let mut b = replication_rng(2, 0, STREAM_COVARIATES);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    /// Frozen first draws pin the stream mapping across releases.
    #[test]
    fn stream_mapping_is_stable() {
        let cases: [(u64, u64, u64, u64); 3] = [
            (0, STREAM_COVARIATES, 0xae90bfb5395d5ba1, 0xf3453fc625799188),
            (3, STREAM_EVENTS, 0x21e1cd5a9c395da3, 0x1f6739d25349cf6f),
            (7, STREAM_RESPONSE, 0x8a8198d9c0a639e9, 0x9bb939b1b44df90b),
        ];
        for (rep, purpose, first, second) in cases {
            let mut rng = replication_rng(42, rep, purpose);
            assert_eq!(rng.next_u64(), first);
            assert_eq!(rng.next_u64(), second);
        }
    }
}
