//! Keys and the keyed pseudorandom function.
//!
//! `F_sk(seed, index)` is HMAC-SHA256 over
//! `"WMv1" ‖ be32(seed_bitlen) ‖ seed bits (MSB-first, zero-padded) ‖ be64(index)`;
//! the first eight MAC bytes, read big-endian, give `z`, and the unit real is
//! `(z + 0.5) / 2^64`. Tags for the simple scheme use the separate domain
//! `"WMv1S"`, so the two MAC input spaces never overlap.

mod lanes;
mod oracle;

use std::fmt;
use std::path::Path;

use hmac::{Hmac, KeyInit, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use lanes::HmacMidstate;

pub use oracle::{oracle_unit, OracleTable, RandomOracle};

const UNIT_DOMAIN: &[u8] = b"WMv1";
const TAG_DOMAIN: &[u8] = b"WMv1S";

/// Which watermarking scheme a key belongs to.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    Simple,
    Complete,
    Substring,
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeId::Simple => "simple",
            SchemeId::Complete => "complete",
            SchemeId::Substring => "substring",
        })
    }
}

impl std::str::FromStr for SchemeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(SchemeId::Simple),
            "complete" => Ok(SchemeId::Complete),
            "substring" => Ok(SchemeId::Substring),
            other => Err(Error::InvalidKey(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Largest tag length accepted for the simple scheme at a given `lambda`.
pub fn max_tag_bits(lambda: u32) -> u32 {
    3 * ceil_log2(lambda) + 8
}

fn ceil_log2(x: u32) -> u32 {
    if x <= 1 {
        0
    } else {
        32 - (x - 1).leading_zeros()
    }
}

/// Watermarking key plus the parameters that generator and detector share.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    key_bytes: [u8; 32],
    lambda: u32,
    scheme: SchemeId,
    b: Option<u32>,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretKey")
            .field("fingerprint", &self.fingerprint())
            .field("lambda", &self.lambda)
            .field("scheme", &self.scheme)
            .field("b", &self.b)
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    version: u32,
    scheme_id: SchemeId,
    lambda: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<u32>,
    key_hex: String,
}

impl SecretKey {
    /// Builds a key from explicit bytes, validating the parameters.
    pub fn from_bytes(key_bytes: [u8; 32], lambda: u32, scheme: SchemeId, b: Option<u32>) -> Result<Self> {
        if lambda < 1 {
            return Err(Error::InvalidKey("lambda must be at least 1".into()));
        }
        match (scheme, b) {
            (SchemeId::Simple, None) => return Err(Error::InvalidKey("the simple scheme needs a tag length b".into())),
            (SchemeId::Simple, Some(b)) => {
                let max = max_tag_bits(lambda);
                if b < 1 || b > max {
                    return Err(Error::InvalidKey(format!("b = {b} is outside 1..={max} for lambda = {lambda}")));
                }
            }
            (_, Some(_)) => {
                return Err(Error::InvalidKey(format!("b only applies to the simple scheme, not {scheme}")))
            }
            (_, None) => {}
        }
        Ok(SecretKey { key_bytes, lambda, scheme, b })
    }

    pub fn key_bytes(&self) -> &[u8; 32] {
        &self.key_bytes
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    /// Tag length for the simple scheme.
    pub fn b(&self) -> Option<u32> {
        self.b
    }

    /// First 8 hex characters of SHA-256 over the key bytes.
    pub fn fingerprint(&self) -> String {
        hex::encode(&Sha256::digest(self.key_bytes)[..4])
    }

    /// Fails unless the key belongs to `expected`.
    pub fn require_scheme(&self, expected: SchemeId) -> Result<()> {
        if self.scheme == expected {
            Ok(())
        } else {
            Err(Error::SchemeMismatch { expected, found: self.scheme })
        }
    }

    pub fn to_json(&self) -> String {
        let file = KeyFile {
            version: 1,
            scheme_id: self.scheme,
            lambda: self.lambda,
            b: self.b,
            key_hex: hex::encode(self.key_bytes),
        };
        serde_json::to_string_pretty(&file).expect("key serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KeyFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(Error::InvalidKey(format!("unsupported key file version {}", file.version)));
        }
        let raw = hex::decode(&file.key_hex).map_err(|e| Error::InvalidKey(format!("key_hex: {e}")))?;
        let key_bytes: [u8; 32] =
            raw.try_into().map_err(|_| Error::InvalidKey("key_hex must be 64 hex characters".into()))?;
        SecretKey::from_bytes(key_bytes, file.lambda, file.scheme_id, file.b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SecretKey::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Draws a fresh key. `b` is required for, and only accepted by, the simple scheme.
pub fn setup<R: RngCore + CryptoRng + ?Sized>(
    lambda: u32,
    scheme: SchemeId,
    b: Option<u32>,
    rng: &mut R,
) -> Result<SecretKey> {
    let mut key_bytes = [0u8; 32];
    rng.fill_bytes(&mut key_bytes);
    SecretKey::from_bytes(key_bytes, lambda, scheme, b)
}

/// A PRF output in the open unit interval with 64 fraction bits.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(transparent)]
pub struct UnitReal(u64);

impl UnitReal {
    pub fn from_z(z: u64) -> Self {
        UnitReal(z)
    }

    pub fn z(self) -> u64 {
        self.0
    }

    /// `(z + 0.5) / 2^64`, rounded to the nearest double but never to 0 or 1.
    pub fn value(self) -> f64 {
        let v = (self.0 as f64 + 0.5) * (1.0 / 18_446_744_073_709_551_616.0);
        v.min(1.0 - f64::EPSILON / 2.0)
    }

    /// Exact `u <= p`, i.e. `z + 0.5 <= p * 2^64`, without rounding `u` to a double.
    pub fn at_most(self, p: f64) -> bool {
        const TWO_64: f64 = 18_446_744_073_709_551_616.0;
        const TWO_52: f64 = 4_503_599_627_370_496.0;
        if p.is_nan() || p <= 0.0 {
            return false;
        }
        let scaled = p * TWO_64;
        if scaled >= TWO_64 {
            return true;
        }
        // Number of grid points z with z + 0.5 <= scaled.
        let count: u128 = if scaled < 0.5 {
            0
        } else if scaled < TWO_52 {
            // Exact: below 2^52 the spacing of doubles is at most 1/2.
            (scaled - 0.5).floor() as u128 + 1
        } else {
            scaled as u128
        };
        u128::from(self.0) < count
    }

    /// `1 - u`, computed exactly on the integer grid.
    pub fn complement(self) -> Self {
        UnitReal(!self.0)
    }

    /// Uniform draw from the same 64-bit grid.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        UnitReal(rng.next_u64())
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &bit) in bits.iter().enumerate() {
        if bit {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

fn seed_len_prefix(seed: &[bool]) -> [u8; 4] {
    u32::try_from(seed.len()).expect("seed longer than 2^32 bits").to_be_bytes()
}

fn new_mac(sk: &SecretKey) -> Hmac<Sha256> {
    <Hmac<Sha256> as KeyInit>::new_from_slice(&sk.key_bytes).expect("HMAC accepts any key length")
}

/// Straightforward single evaluation of `F_sk(seed, index)`.
pub fn prf_unit(sk: &SecretKey, seed: &[bool], index: u64) -> UnitReal {
    let mut mac = new_mac(sk);
    mac.update(UNIT_DOMAIN);
    mac.update(&seed_len_prefix(seed));
    mac.update(&pack_bits(seed));
    mac.update(&index.to_be_bytes());
    let out = mac.finalize().into_bytes();
    UnitReal(u64::from_be_bytes(out[..8].try_into().unwrap()))
}

/// The first `b` bits of `HMAC(key, "WMv1S" ‖ message)`, where `b` comes from the key.
///
/// # Panics
/// Panics if the key has no tag length, i.e. it is not a simple-scheme key.
pub fn prf_tag(sk: &SecretKey, message: &[u8]) -> Vec<bool> {
    let b = sk.b.expect("prf_tag needs a simple-scheme key") as usize;
    let mut mac = new_mac(sk);
    mac.update(TAG_DOMAIN);
    mac.update(message);
    let out = mac.finalize().into_bytes();
    (0..b).map(|i| out[i / 8] & (0x80 >> (i % 8)) != 0).collect()
}

/// `F_sk(seed, ·)` with everything before the index absorbed once.
///
/// Evaluating many indices under one seed is what the detectors do; this
/// type makes each evaluation cost two SHA-256 compressions (three when
/// the seed's byte length puts the index across a block boundary).
#[derive(Clone, Debug)]
pub struct SeedPrf {
    mid: HmacMidstate,
}

impl SeedPrf {
    pub fn new(sk: &SecretKey, seed: &[bool]) -> Self {
        let mid = HmacMidstate::new(&sk.key_bytes, &[UNIT_DOMAIN, &seed_len_prefix(seed), &pack_bits(seed)]);
        SeedPrf { mid }
    }

    pub fn unit(&self, index: u64) -> UnitReal {
        UnitReal(self.mid.finish(index.to_be_bytes()))
    }

    /// `out[k] = F(seed, first + k)`.
    pub fn fill(&self, first: u64, out: &mut [UnitReal]) {
        // SAFETY: `UnitReal` is a transparent wrapper around `u64`.
        let raw = unsafe { std::slice::from_raw_parts_mut(out.as_mut_ptr().cast::<u64>(), out.len()) };
        self.fill_z(first, raw);
    }

    /// Raw `z` values for consecutive indices starting at `first`.
    pub fn fill_z(&self, first: u64, out: &mut [u64]) {
        self.mid.finish_indices(first, out);
    }
}

/// Anything that can play the role of `F_sk` inside generators and detectors.
pub trait PrfSource {
    fn unit(&mut self, seed: &[bool], index: u64) -> UnitReal;

    /// `out[k] = unit(seed, first + k)`.
    fn fill(&mut self, seed: &[bool], first: u64, out: &mut [UnitReal]) {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.unit(seed, first + k as u64);
        }
    }
}

/// The real keyed PRF, caching the midstate of the most recent seed.
#[derive(Debug)]
pub struct KeyedPrf<'k> {
    key: &'k SecretKey,
    cached: Option<(Vec<bool>, SeedPrf)>,
}

impl<'k> KeyedPrf<'k> {
    pub fn new(key: &'k SecretKey) -> Self {
        KeyedPrf { key, cached: None }
    }

    fn seeded(&mut self, seed: &[bool]) -> &SeedPrf {
        let stale = !matches!(&self.cached, Some((s, _)) if s.as_slice() == seed);
        if stale {
            self.cached = Some((seed.to_vec(), SeedPrf::new(self.key, seed)));
        }
        &self.cached.as_ref().unwrap().1
    }
}

impl PrfSource for KeyedPrf<'_> {
    fn unit(&mut self, seed: &[bool], index: u64) -> UnitReal {
        self.seeded(seed).unit(index)
    }

    fn fill(&mut self, seed: &[bool], first: u64, out: &mut [UnitReal]) {
        self.seeded(seed).fill(first, out)
    }
}

impl<P: PrfSource + ?Sized> PrfSource for &mut P {
    fn unit(&mut self, seed: &[bool], index: u64) -> UnitReal {
        (**self).unit(seed, index)
    }

    fn fill(&mut self, seed: &[bool], first: u64, out: &mut [UnitReal]) {
        (**self).fill(seed, first, out)
    }
}
