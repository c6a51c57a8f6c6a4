//! Sparse capabilities: unguessable tokens that both designate an object
//! and authorize access to it.
//!
//! A token is 32 bytes from a cryptographic randomness source, base32
//! encoded in lowercase, prefixed by a single-purpose kind marker. Tokens
//! are never derived from object state, so holding one is the only way to
//! name the object it guards.

use rand::RngCore;
use std::fmt;

/// What a capability authorizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CapKind {
    Worker,
    Job,
    Mutable,
}

impl CapKind {
    fn prefix(self) -> &'static str {
        match self {
            CapKind::Worker => "W-",
            CapKind::Job => "J-",
            CapKind::Mutable => "M-",
        }
    }
}

/// An unguessable single-purpose access token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Capability(String);

impl Capability {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn kind(&self) -> Option<CapKind> {
        for kind in [CapKind::Worker, CapKind::Job, CapKind::Mutable] {
            if self.0.starts_with(kind.prefix()) {
                return Some(kind);
            }
        }
        None
    }

    /// Wrap a caller-supplied token string. No validity is implied; the
    /// registries decide whether the token designates anything.
    pub fn from_token(token: &str) -> Capability {
        Capability(token.to_owned())
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shortened token form safe to place in journals and error messages.
pub fn redact(token: &str) -> String {
    token.chars().take(12).collect()
}

/// Mints capabilities from an injectable randomness source.
pub struct CapMinter {
    rng: Box<dyn RngCore + Send>,
}

impl CapMinter {
    /// Minter backed by the operating system entropy source.
    pub fn system() -> CapMinter {
        CapMinter { rng: Box::new(rand::rngs::OsRng) }
    }

    /// Minter with a caller-supplied generator (deterministic tests).
    pub fn with_rng(rng: Box<dyn RngCore + Send>) -> CapMinter {
        CapMinter { rng }
    }

    pub fn mint(&mut self, kind: CapKind) -> Capability {
        let mut bytes = [0u8; 32];
        self.rng.fill_bytes(&mut bytes);
        Capability(format!("{}{}", kind.prefix(), base32_lower(&bytes)))
    }
}

/// RFC 4648 base32 without padding, lowercase alphabet.
fn base32_lower(data: &[u8]) -> String {
    const ALPHABET: &[u8; 32] = b"abcdefghijklmnopqrstuvwxyz234567";
    let mut out = String::with_capacity(data.len().div_ceil(5) * 8);
    let mut buffer: u64 = 0;
    let mut bits = 0u32;
    for &byte in data {
        buffer = (buffer << 8) | u64::from(byte);
        bits += 8;
        while bits >= 5 {
            bits -= 5;
            out.push(ALPHABET[((buffer >> bits) & 0x1f) as usize] as char);
        }
    }
    if bits > 0 {
        out.push(ALPHABET[((buffer << (5 - bits)) & 0x1f) as usize] as char);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base32_known_vectors() {
        // RFC 4648 test vectors, lowered, padding stripped.
        assert_eq!(base32_lower(b""), "");
        assert_eq!(base32_lower(b"f"), "my");
        assert_eq!(base32_lower(b"fo"), "mzxq");
        assert_eq!(base32_lower(b"foo"), "mzxw6");
        assert_eq!(base32_lower(b"foob"), "mzxw6yq");
        assert_eq!(base32_lower(b"fooba"), "mzxw6ytb");
        assert_eq!(base32_lower(b"foobar"), "mzxw6ytboi");
    }

    #[test]
    fn minted_caps_carry_kind_and_length() {
        let mut minter = CapMinter::system();
        let cap = minter.mint(CapKind::Job);
        assert_eq!(cap.kind(), Some(CapKind::Job));
        // 32 bytes -> 52 base32 chars plus the prefix.
        assert_eq!(cap.as_str().len(), 2 + 52);
        assert!(cap.as_str()[2..].bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()));
    }

    #[test]
    fn redaction_truncates() {
        let mut minter = CapMinter::system();
        let cap = minter.mint(CapKind::Worker);
        let short = redact(cap.as_str());
        assert_eq!(short.len(), 12);
        assert!(cap.as_str().starts_with(&short));
    }
}
