//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! `(master seed, group, index, role)`, so results never depend on how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    BurnIn = 0,
    Sample = 1,
    Jitter = 2,
    Bootstrap = 3,
    Bridge = 4,
}

const ROLES: u64 = 8;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for `(master, group, index, role)`. `group` separates scenarios
/// or other top-level units; `index` is typically a replication number.
pub fn stream(master: u64, group: u64, index: u64, role: Role) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(master) ^ group.wrapping_mul(0xA24B_AED4_963E_E407));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index.wrapping_mul(ROLES).wrapping_add(role as u64));
    rng
}
