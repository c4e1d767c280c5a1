//! Sub-seed derivation.
//!
//! `derive(master, role) = splitmix64(master ^ h(role))` where `h` is the
//! first eight bytes (little-endian) of SHA-256 over the role string. Roles
//! are plain paths such as `"trainer/2/episode/0"`, so two runs that name the
//! same role see the same stream regardless of what else they do.

use sha2::{Digest, Sha256};

pub fn role_hash(role: &str) -> u64 {
    let digest = Sha256::digest(role.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn derive(master: u64, role: &str) -> u64 {
    splitmix64(master ^ role_hash(role))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
