//! Stable content digests used for cache keys and stage bookkeeping.

use sha2::{Digest as _, Sha256};

/// Incremental SHA-256 over length-prefixed fields.
///
/// Length prefixes make the encoding unambiguous, so `("ab", "c")` and
/// `("a", "bc")` hash differently.
#[derive(Clone, Default)]
pub struct ContentDigest {
    hasher: Sha256,
}

impl ContentDigest {
    pub fn new(domain: &str) -> Self {
        let mut d = Self::default();
        d.field(domain.as_bytes());
        d
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.field(s.as_bytes())
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

/// SHA-256 of raw bytes, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_prefix_disambiguates() {
        let mut a = ContentDigest::new("t");
        a.str("ab").str("c");
        let mut b = ContentDigest::new("t");
        b.str("a").str("bc");
        assert_ne!(a.finish(), b.finish());
    }

    #[test]
    fn known_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
