//! Hash algorithm selection, the fixed-width [`Digest`] type and bit-chunk
//! extraction used to walk digests as trie search keys.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256, Sha512};
use thiserror::Error;

/// Largest digest supported by any [`HashAlg`].
pub const MAX_DIGEST_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlg {
    #[default]
    Sha256,
    Sha512,
}

impl HashAlg {
    pub const fn output_len(self) -> usize {
        match self {
            HashAlg::Sha256 => 32,
            HashAlg::Sha512 => 64,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            HashAlg::Sha256 => "sha256",
            HashAlg::Sha512 => "sha512",
        }
    }

    /// One-byte wire identifier used in binary artifact headers.
    pub const fn wire_id(self) -> u8 {
        match self {
            HashAlg::Sha256 => 1,
            HashAlg::Sha512 => 2,
        }
    }

    pub fn from_wire_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(HashAlg::Sha256),
            2 => Some(HashAlg::Sha512),
            _ => None,
        }
    }

    pub fn hash(self, data: &[u8]) -> Digest {
        self.hash_parts(&[data])
    }

    /// Hashes the concatenation of `parts` without materializing it.
    pub fn hash_parts(self, parts: &[&[u8]]) -> Digest {
        match self {
            HashAlg::Sha256 => {
                let mut h = Sha256::new();
                for p in parts {
                    h.update(p);
                }
                Digest::from_slice(&h.finalize()).expect("sha256 output is 32 bytes")
            }
            HashAlg::Sha512 => {
                let mut h = Sha512::new();
                for p in parts {
                    h.update(p);
                }
                Digest::from_slice(&h.finalize()).expect("sha512 output is 64 bytes")
            }
        }
    }

    /// The all-zero "no previous root" sentinel for this algorithm.
    pub fn zero(self) -> Digest {
        Digest {
            len: self.output_len() as u8,
            bytes: [0; MAX_DIGEST_LEN],
        }
    }
}

impl fmt::Display for HashAlg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HashAlg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "sha256" => Ok(HashAlg::Sha256),
            "sha512" => Ok(HashAlg::Sha512),
            other => Err(format!("unknown hash algorithm `{other}`")),
        }
    }
}

/// A hash output. Stored inline so it is `Copy`; only the first `len`
/// bytes are meaningful and participate in comparisons.
#[derive(Clone, Copy)]
pub struct Digest {
    len: u8,
    bytes: [u8; MAX_DIGEST_LEN],
}

impl Digest {
    /// Accepts exactly 32 or 64 bytes.
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 32 && bytes.len() != MAX_DIGEST_LEN {
            return None;
        }
        let mut out = [0u8; MAX_DIGEST_LEN];
        out[..bytes.len()].copy_from_slice(bytes);
        Some(Digest {
            len: bytes.len() as u8,
            bytes: out,
        })
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        Self::from_slice(&raw)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_zero(&self) -> bool {
        self.as_bytes().iter().all(|&b| b == 0)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }
}

impl PartialEq for Digest {
    fn eq(&self, other: &Self) -> bool {
        self.as_bytes() == other.as_bytes()
    }
}

impl Eq for Digest {}

impl Hash for Digest {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.as_bytes().hash(state)
    }
}

impl PartialOrd for Digest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Digest {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_bytes().cmp(other.as_bytes())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        self.as_bytes()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid digest hex"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("key exhausted: no {bits}-bit label at depth {depth} of a {key_bits}-bit key")]
pub struct KeyExhausted {
    pub depth: usize,
    pub bits: u32,
    pub key_bits: usize,
}

/// Returns the `log2(arity)`-bit label of `key` at edge `depth`, reading
/// bits most-significant first. `arity` must be a power of two in 2..=256.
pub fn label_at(key: &Digest, depth: usize, arity: u16) -> Result<u8, KeyExhausted> {
    debug_assert!(arity.is_power_of_two() && (2..=256).contains(&arity));
    let bits = arity.trailing_zeros();
    let key_bytes = key.as_bytes();
    let key_bits = key_bytes.len() * 8;
    let start = depth * bits as usize;
    if start + bits as usize > key_bits {
        return Err(KeyExhausted {
            depth,
            bits,
            key_bits,
        });
    }
    let byte = start / 8;
    let shift = (start % 8) as u32;
    let hi = u16::from(key_bytes[byte]);
    let lo = u16::from(key_bytes.get(byte + 1).copied().unwrap_or(0));
    let window = (hi << 8) | lo;
    let mask = (1u16 << bits) - 1;
    Ok(((window >> (16 - shift - bits)) & mask) as u8)
}

/// Number of whole labels a key of `alg` can supply at `arity`.
pub fn max_depth(alg: HashAlg, arity: u16) -> usize {
    alg.output_len() * 8 / arity.trailing_zeros() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key_with_prefix(prefix: &[u8]) -> Digest {
        let mut b = [0u8; 32];
        b[..prefix.len()].copy_from_slice(prefix);
        Digest::from_slice(&b).unwrap()
    }

    #[test]
    fn sha256_empty_vector() {
        // FIPS 180-2 test vector for the empty message.
        assert_eq!(
            HashAlg::Sha256.hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            HashAlg::Sha256.hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sha512_abc_vector() {
        assert_eq!(
            HashAlg::Sha512.hash(b"abc").to_hex(),
            "ddaf35a193617abacc417349ae20413112e6fa4e89a97ea20a9eeee64b55d39a\
             2192992a274fc1a836ba3c23a3feebbd454d4423643ce80e2a9ac94fa54ca49f"
        );
        assert_eq!(HashAlg::Sha512.hash(b"").len(), 64);
    }

    #[test]
    fn hash_is_deterministic_and_distinguishes_inputs() {
        for alg in [HashAlg::Sha256, HashAlg::Sha512] {
            assert_eq!(alg.hash(b"x"), alg.hash(b"x"));
            assert_ne!(alg.hash(b"a"), alg.hash(b"b"));
            assert_eq!(alg.hash(b"ab"), alg.hash_parts(&[b"a", b"b"]));
        }
    }

    #[test]
    fn label_examples() {
        let key = key_with_prefix(&[0b1011_0000]);
        assert_eq!(label_at(&key, 0, 2).unwrap(), 1);
        assert_eq!(label_at(&key, 1, 2).unwrap(), 0);
        assert_eq!(label_at(&key, 2, 2).unwrap(), 1);
        assert_eq!(label_at(&key, 0, 4).unwrap(), 2);
        assert_eq!(label_at(&key, 1, 4).unwrap(), 3);
        let zero = HashAlg::Sha256.zero();
        for r in [2u16, 4, 8, 16, 32, 64, 128, 256] {
            for d in 0..max_depth(HashAlg::Sha256, r) {
                assert_eq!(label_at(&zero, d, r).unwrap(), 0);
            }
        }
    }

    #[test]
    fn label_crossing_byte_boundary() {
        // r = 8 reads 3-bit chunks; depth 2 covers bits 6..9.
        let key = key_with_prefix(&[0b0000_0010, 0b1000_0000]);
        assert_eq!(label_at(&key, 2, 8).unwrap(), 0b101);
    }

    #[test]
    fn label_out_of_range_is_key_exhausted() {
        let key = HashAlg::Sha256.hash(b"k");
        assert!(label_at(&key, 255, 2).is_ok());
        assert!(label_at(&key, 256, 2).is_err());
        // 256 bits hold 85 whole 3-bit labels.
        assert!(label_at(&key, 84, 8).is_ok());
        let err = label_at(&key, 85, 8).unwrap_err();
        assert_eq!(err.depth, 85);
        assert_eq!(max_depth(HashAlg::Sha256, 8), 85);
        assert_eq!(max_depth(HashAlg::Sha512, 256), 64);
    }

    #[test]
    fn digest_rejects_bad_lengths() {
        assert!(Digest::from_slice(&[0u8; 31]).is_none());
        assert!(Digest::from_slice(&[0u8; 33]).is_none());
        assert!(HashAlg::Sha256.zero().is_zero());
        let d = HashAlg::Sha256.hash(b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
    }

    proptest! {
        #[test]
        fn labels_reconstruct_key_prefix(bytes in proptest::collection::vec(any::<u8>(), 32), log_r in 1u32..=8) {
            let key = Digest::from_slice(&bytes).unwrap();
            let r = 1u16 << log_r;
            let depth = max_depth(HashAlg::Sha256, r);
            let mut bits = Vec::new();
            for d in 0..depth {
                let label = label_at(&key, d, r).unwrap();
                prop_assert!(u16::from(label) < r);
                for i in (0..log_r).rev() {
                    bits.push((label >> i) & 1);
                }
            }
            for (i, bit) in bits.iter().enumerate() {
                prop_assert_eq!(*bit, (bytes[i / 8] >> (7 - i % 8)) & 1);
            }
        }
    }
}
