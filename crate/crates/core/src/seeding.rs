//! Deterministic seed derivation.
//!
//! Every stochastic step in the simulator (weight init, epoch shuffles,
//! feature sampling) draws from a ChaCha stream whose seed is derived here.
//! Derivation is a pure function of the master seed plus integer tags, so
//! runs are reproducible regardless of execution schedule.
//!
//! The rule that makes single-silo federated runs reducible to plain
//! training: within one local training call, epoch `e` shuffles with
//! `epoch_seed(shuffle_seed, e) = mix(shuffle_seed + e)`. A federated run
//! hands silo `i` at global cycle `t` the shuffle seed
//! `silo_stream(master, i) + t * E`, so cycle-local epoch `e` draws the
//! same generator as flat epoch `t * E + e` of one long training run
//! seeded with `silo_stream(master, i)`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Finalizer from the splitmix64 generator. Bijective on u64, well mixed,
/// and stable across platforms and crate versions.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of tags into a master seed, one mix round per tag.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut state = mix(master);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// Stable 64-bit id for a silo name, used wherever a seed must depend on
/// which silo is training. FNV-1a over the UTF-8 bytes.
pub fn silo_tag(silo_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in silo_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Seed of the shuffle-seed stream a federated run assigns to one silo.
/// Cycle `t` of a run with `local_epochs` epochs per cycle uses
/// `silo_stream(..) + t * local_epochs` as its local shuffle seed.
pub fn silo_stream(master: u64, silo_id: &str) -> u64 {
    derive(master, &[silo_tag(silo_id)])
}

/// Shuffle generator for one epoch. Additive in the epoch index so that
/// consecutive training calls can be spliced into one long run.
pub fn epoch_rng(shuffle_seed: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(shuffle_seed.wrapping_add(epoch)))
}

/// General-purpose generator for a derived stream.
pub fn stream_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tags))
}
