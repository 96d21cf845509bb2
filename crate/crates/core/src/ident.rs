//! Deterministic pseudonymization of sample identifiers.
//!
//! All parties in a session hold the same secret key and map each raw ID to
//! a fixed 32-byte digest by applying HMAC-SHA256 twice: the second pass
//! consumes the raw 32 octets of the first digest. Hashing is one-way; there
//! is no decryption path.

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::error::{Error, Result};

type HmacSha256 = Hmac<Sha256>;

pub const MIN_KEY_LEN: usize = 16;

/// Shared secret key. Never serialized into wire messages or logs.
#[derive(Clone)]
pub struct SecretKey {
    bytes: Vec<u8>,
}

// Debug deliberately hides the key material.
impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SecretKey({} bytes)", self.bytes.len())
    }
}

impl SecretKey {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.len() < MIN_KEY_LEN {
            return Err(Error::Config(format!(
                "secret key must be at least {MIN_KEY_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(SecretKey { bytes })
    }

    /// Parses key material: 32+ hex characters decode to their byte value,
    /// anything else is taken as raw bytes.
    pub fn from_material(material: &[u8]) -> Result<Self> {
        let trimmed: &[u8] = {
            let s = material;
            let start = s.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(0);
            let end = s.iter().rposition(|b| !b.is_ascii_whitespace()).map_or(0, |i| i + 1);
            &s[start.min(end)..end]
        };
        if trimmed.len() >= 32
            && trimmed.len() % 2 == 0
            && trimmed.iter().all(|b| b.is_ascii_hexdigit())
        {
            let decoded = hex::decode(trimmed)
                .map_err(|e| Error::Config(format!("invalid hex key: {e}")))?;
            Self::from_bytes(decoded)
        } else {
            Self::from_bytes(trimmed.to_vec())
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let material = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read key file {}: {e}", path.display())))?;
        Self::from_material(&material)
    }

    pub fn from_env(var: &str) -> Result<Self> {
        let value = std::env::var(var)
            .map_err(|_| Error::Config(format!("environment variable {var} not set")))?;
        Self::from_material(value.as_bytes())
    }

    pub(crate) fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// 32-byte pseudonym of a raw sample identifier; travels as 64 lowercase
/// hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EncryptedId([u8; 32]);

impl EncryptedId {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        EncryptedId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 64 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(Error::Input(format!(
                "encrypted ID must be 64 lowercase hex characters, got {:?}",
                s
            )));
        }
        let bytes = hex::decode(s).map_err(|e| Error::Input(format!("invalid hex: {e}")))?;
        let mut arr = [0u8; 32];
        arr.copy_from_slice(&bytes);
        Ok(EncryptedId(arr))
    }
}

impl std::fmt::Debug for EncryptedId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "EncryptedId({})", self.to_hex())
    }
}

impl std::fmt::Display for EncryptedId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl serde::Serialize for EncryptedId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for EncryptedId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        EncryptedId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// The keyed-hash primitive both passes are built from. Public so
/// conformance tests can exercise it directly against reference vectors.
pub fn hmac_sha256_raw(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

fn hmac_sha256(key: &SecretKey, message: &[u8]) -> [u8; 32] {
    hmac_sha256_raw(key.bytes(), message)
}

/// Double keyed hash: HMAC-SHA256(key, HMAC-SHA256(key, raw_id)).
///
/// The outer pass consumes the 32 raw octets of the inner digest, not a hex
/// rendering, so independent implementations interoperate bit-exactly.
pub fn encrypt_id(key: &SecretKey, raw_id: &[u8]) -> EncryptedId {
    let inner = hmac_sha256(key, raw_id);
    EncryptedId(hmac_sha256(key, &inner))
}

/// Element-wise `encrypt_id`, order preserved. Duplicate raw IDs map to
/// equal digests.
pub fn encrypt_column<I, B>(key: &SecretKey, raw_ids: I) -> Vec<EncryptedId>
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    raw_ids
        .into_iter()
        .map(|id| encrypt_id(key, id.as_ref()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn key(bytes: &[u8]) -> SecretKey {
        SecretKey::from_bytes(bytes.to_vec()).unwrap()
    }

    #[test]
    fn short_key_rejected() {
        assert!(SecretKey::from_bytes(vec![0u8; 15]).is_err());
        assert!(SecretKey::from_bytes(Vec::new()).is_err());
        assert!(SecretKey::from_bytes(vec![0u8; 16]).is_ok());
    }

    #[test]
    fn key_material_hex_and_raw() {
        let k = SecretKey::from_material(b"00112233445566778899aabbccddeeff").unwrap();
        assert_eq!(k.bytes(), hex::decode("00112233445566778899aabbccddeeff").unwrap());
        // Non-hex material is taken verbatim.
        let k = SecretKey::from_material(b"a plain passphrase, long enough!").unwrap();
        assert_eq!(k.bytes(), b"a plain passphrase, long enough!");
    }

    #[test]
    fn deterministic() {
        let k = key(&[0x0b; 20]);
        assert_eq!(encrypt_id(&k, b"id_001"), encrypt_id(&k, b"id_001"));
    }

    #[test]
    fn double_hmac_matches_rfc4231_composition() {
        // RFC 4231 test case 1 for the inner pass; outer value computed by
        // composing two reference HMAC-SHA256 applications.
        let k = key(&[0x0b; 20]);
        let inner = hmac_sha256(&k, b"Hi There");
        assert_eq!(
            hex::encode(inner),
            "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"
        );
        assert_eq!(
            encrypt_id(&k, b"Hi There").to_hex(),
            "3cc0a9d3cdb5b6ed6b959cbfdfc1bf0dcc4e720546a5e1dbda86234427996fd3"
        );
    }

    #[test]
    fn distinct_ids_distinct_digests() {
        let k = key(b"0123456789abcdef");
        assert_ne!(encrypt_id(&k, b"id_001"), encrypt_id(&k, b"id_002"));
    }

    #[test]
    fn injective_on_fuzz_corpus() {
        let k = key(b"0123456789abcdef");
        let ids: Vec<String> = (0..10_000).map(|i| format!("id_{i}")).collect();
        let digests: HashSet<EncryptedId> =
            encrypt_column(&k, ids.iter().map(|s| s.as_bytes())).into_iter().collect();
        assert_eq!(digests.len(), 10_000);
    }

    #[test]
    fn key_bit_flip_changes_digest() {
        let base = [0x42u8; 16];
        let k0 = key(&base);
        for i in 0..100 {
            let mut flipped = base;
            flipped[i % 16] ^= 1 << (i % 8);
            let k1 = key(&flipped);
            assert_ne!(encrypt_id(&k0, b"sample"), encrypt_id(&k1, b"sample"));
        }
    }

    #[test]
    fn encrypt_column_basics() {
        let k = key(b"0123456789abcdef");
        assert!(encrypt_column(&k, Vec::<&[u8]>::new()).is_empty());
        let out = encrypt_column(&k, [b"a".as_slice(), b"a".as_slice()]);
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn hex_round_trip() {
        let k = key(b"0123456789abcdef");
        let e = encrypt_id(&k, b"x");
        assert_eq!(EncryptedId::from_hex(&e.to_hex()).unwrap(), e);
        assert!(EncryptedId::from_hex("ABCD").is_err());
        assert!(EncryptedId::from_hex(&e.to_hex().to_uppercase()).is_err());
    }
}
