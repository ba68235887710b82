use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

/// Stable 64-bit digest of a sequence of byte strings (length-prefixed, so
/// `["ab", "c"]` and `["a", "bc"]` differ).
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    let digest = digest_parts(parts);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

/// Lower-case hex SHA-256 of the length-prefixed parts.
pub fn stable_hash_hex(parts: &[&[u8]]) -> String {
    let digest = digest_parts(parts);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn digest_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}
