//! The complete scheme: sample honestly until `λ` bits of empirical entropy
//! have been consumed, then fix that prefix as the PRF seed `r` and emit
//! every later bit as `x_i = 1[F(r, i) <= p_i(1)]`.
//!
//! The detector tries every prefix of its input as the seed and sums
//! `ln(1/v_j)` over the remaining bits, comparing against `m + λ√m`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{bit_surprisal, run_bits, Candidate, DetectionReport, Embedder, Generated};
use crate::codec::BinaryModel;
use crate::error::{Error, Result};
use crate::prf::{KeyedPrf, PrfSource, SchemeId, SecretKey, UnitReal};
use crate::score::{score_bit, threshold_unchecked};

/// Seed bookkeeping for one response.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyLedger {
    /// Entropy (bits) accumulated before the seed was fixed.
    pub h: f64,
    pub seed: Option<Vec<bool>>,
    /// 1-based position of the last seed bit.
    pub seed_end_index: Option<usize>,
}

struct CompleteEmbedder<'p, P: ?Sized> {
    prf: &'p mut P,
    lambda: f64,
    ledger: EntropyLedger,
}

impl<P: PrfSource + ?Sized> Embedder for CompleteEmbedder<'_, P> {
    fn choose(&mut self, i: usize, p1: f64, _bits: &[bool]) -> Option<bool> {
        let seed = self.ledger.seed.as_ref()?;
        Some(self.prf.unit(seed, i as u64).at_most(p1))
    }

    fn observe(&mut self, i: usize, p1: f64, bits: &[bool]) {
        if self.ledger.seed.is_some() {
            return;
        }
        self.ledger.h += bit_surprisal(bits[i - 1], p1);
        if self.ledger.h >= self.lambda {
            self.ledger.seed = Some(bits.to_vec());
            self.ledger.seed_end_index = Some(i);
        }
    }
}

/// Generates a watermarked response under `sk`.
pub fn wat_complete<B, R>(sk: &SecretKey, bmodel: &B, prompt: &[u8], rng: &mut R) -> Result<Generated<EntropyLedger>>
where
    B: BinaryModel + ?Sized,
    R: RngCore + ?Sized,
{
    sk.require_scheme(SchemeId::Complete)?;
    wat_complete_with(&mut KeyedPrf::new(sk), sk.lambda(), bmodel, prompt, rng, &[])
}

/// Generator with an explicit PRF source. The first `forced.len()` bits are
/// taken from `forced` and replayed through the ledger.
pub fn wat_complete_with<P, B, R>(
    prf: &mut P,
    lambda: u32,
    bmodel: &B,
    prompt: &[u8],
    rng: &mut R,
    forced: &[bool],
) -> Result<Generated<EntropyLedger>>
where
    P: PrfSource + ?Sized,
    B: BinaryModel + ?Sized,
    R: RngCore + ?Sized,
{
    let mut cursor = bmodel.cursor(prompt)?;
    let mut embedder = CompleteEmbedder { prf, lambda: f64::from(lambda), ledger: EntropyLedger::default() };
    let (bits, truncated, entropy) = run_bits(cursor.as_mut(), forced, &mut embedder, rng)?;
    Ok(Generated { bits, tokens: cursor.tokens().to_vec(), ledger: embedder.ledger, truncated, entropy })
}

/// Scans every prefix of `bits` as a candidate seed.
pub fn detect_complete(sk: &SecretKey, bits: &[bool], lambda: u32) -> Result<DetectionReport> {
    sk.require_scheme(SchemeId::Complete)?;
    detect_complete_with(&mut KeyedPrf::new(sk), bits, lambda)
}

pub fn detect_complete_with<P: PrfSource + ?Sized>(prf: &mut P, bits: &[bool], lambda: u32) -> Result<DetectionReport> {
    let len = bits.len();
    if len < 2 {
        return Err(Error::InputTooShort { need: 2, got: len });
    }
    let mut report = DetectionReport::empty(1);
    let mut units = vec![UnitReal::from_z(0); len - 1];
    for i in 1..len {
        let m = len - i;
        let window = &mut units[..m];
        prf.fill(&bits[..i], (i + 1) as u64, window);
        let score: f64 = bits[i..].iter().zip(window.iter()).map(|(x, u)| score_bit(*x, *u)).sum();
        let threshold = threshold_unchecked(m, lambda);
        report.candidates_scanned += 1;
        report.prf_evaluations += m as u64;
        report.offer(Candidate { seed_start: 1, seed_end: i, window_end: len, score, threshold });
        if score > threshold {
            report.verdict = true;
            report.best_candidate = Some(Candidate { seed_start: 1, seed_end: i, window_end: len, score, threshold });
            report.margin = Some(score - threshold);
            break;
        }
    }
    Ok(report)
}
