//! The substring-complete scheme: the response is cut into blocks, each
//! closing once it has accumulated `(2/ln2)·λ·√m` bits of empirical entropy
//! (`m` = block length so far, current bit included). Every bit after the
//! first block is embedded with the previous block as PRF seed, indexed
//! relative to that block's end, so any window containing two consecutive
//! blocks is detectable on its own.

use std::f64::consts::LN_2;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{bit_surprisal, run_bits, Candidate, DetectionReport, Embedder, Generated};
use crate::codec::BinaryModel;
use crate::error::{Error, Result};
use crate::prf::{KeyedPrf, PrfSource, SchemeId, SecretKey, UnitReal};
use crate::score::{score_bit, threshold_unchecked};

/// Entropy a block of length `m` needs before it closes.
pub fn block_entropy_threshold(lambda: u32, m: usize) -> f64 {
    2.0 / LN_2 * f64::from(lambda) * (m as f64).sqrt()
}

/// A closed block, 1-based inclusive.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    /// Empirical entropy of the block, in bits.
    pub entropy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockLedger {
    pub blocks: Vec<Block>,
    /// Entropy of the open block.
    pub h: f64,
    /// Bits in the open block.
    pub current_len: usize,
}

struct SubstringEmbedder<'p, P: ?Sized> {
    prf: &'p mut P,
    lambda: u32,
    ledger: BlockLedger,
    seed: Option<Vec<bool>>,
}

impl<P: PrfSource + ?Sized> Embedder for SubstringEmbedder<'_, P> {
    fn choose(&mut self, i: usize, p1: f64, _bits: &[bool]) -> Option<bool> {
        let seed = self.seed.as_ref()?;
        let seed_end = self.ledger.blocks.last().map_or(0, |b| b.end);
        Some(self.prf.unit(seed, (i - seed_end) as u64).at_most(p1))
    }

    fn observe(&mut self, i: usize, p1: f64, bits: &[bool]) {
        let ledger = &mut self.ledger;
        ledger.h += bit_surprisal(bits[i - 1], p1);
        ledger.current_len += 1;
        if ledger.h >= block_entropy_threshold(self.lambda, ledger.current_len) {
            let start = i + 1 - ledger.current_len;
            ledger.blocks.push(Block { start, end: i, entropy: ledger.h });
            self.seed = Some(bits[start - 1..i].to_vec());
            ledger.h = 0.0;
            ledger.current_len = 0;
        }
    }
}

pub fn wat_substring<B, R>(sk: &SecretKey, bmodel: &B, prompt: &[u8], rng: &mut R) -> Result<Generated<BlockLedger>>
where
    B: BinaryModel + ?Sized,
    R: RngCore + ?Sized,
{
    sk.require_scheme(SchemeId::Substring)?;
    wat_substring_with(&mut KeyedPrf::new(sk), sk.lambda(), bmodel, prompt, rng, &[])
}

/// Generator with an explicit PRF source and forced leading bits.
pub fn wat_substring_with<P, B, R>(
    prf: &mut P,
    lambda: u32,
    bmodel: &B,
    prompt: &[u8],
    rng: &mut R,
    forced: &[bool],
) -> Result<Generated<BlockLedger>>
where
    P: PrfSource + ?Sized,
    B: BinaryModel + ?Sized,
    R: RngCore + ?Sized,
{
    let mut cursor = bmodel.cursor(prompt)?;
    let mut embedder = SubstringEmbedder { prf, lambda, ledger: BlockLedger::default(), seed: None };
    let (bits, truncated, entropy) = run_bits(cursor.as_mut(), forced, &mut embedder, rng)?;
    Ok(Generated { bits, tokens: cursor.tokens().to_vec(), ledger: embedder.ledger, truncated, entropy })
}

/// Exhaustive scan over every seed window and window end.
pub fn detect_substring(sk: &SecretKey, bits: &[bool], lambda: u32) -> Result<DetectionReport> {
    sk.require_scheme(SchemeId::Substring)?;
    detect_substring_with(&mut KeyedPrf::new(sk), bits, lambda, 1)
}

/// Seed windows end at `i` (ascending) and hold `ℓ + 1` bits for
/// `ℓ = 0, stride, 2·stride, … < i`; for each, scores accumulate over
/// `k = i+1 ..= L` with PRF index `k - i`. Any stride above 1 skips
/// candidates and so gives up the completeness guarantee.
pub fn detect_substring_with<P: PrfSource + ?Sized>(
    prf: &mut P,
    bits: &[bool],
    lambda: u32,
    stride: usize,
) -> Result<DetectionReport> {
    let len = bits.len();
    if len < 2 {
        return Err(Error::InputTooShort { need: 2, got: len });
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let thresholds = thresholds(len, lambda);
    let mut units = vec![UnitReal::from_z(0); len - 1];
    let mut report = DetectionReport::empty(stride);
    for i in 1..len {
        for ell in (0..i).step_by(stride) {
            let scan = scan_seed(prf, bits, i - ell, i, &thresholds, &mut units);
            report.candidates_scanned += 1;
            report.prf_evaluations += (len - i) as u64;
            if scan.passed {
                report.verdict = true;
                report.margin = Some(scan.candidate.margin());
                report.best_candidate = Some(scan.candidate);
                return Ok(report);
            }
            report.offer(scan.candidate);
        }
    }
    Ok(report)
}

fn thresholds(len: usize, lambda: u32) -> Vec<f64> {
    (0..len).map(|m| threshold_unchecked(m, lambda)).collect()
}

struct SeedScan {
    passed: bool,
    /// First passing window end, or the best one if none passed.
    candidate: Candidate,
}

fn scan_seed<P: PrfSource + ?Sized>(
    prf: &mut P,
    bits: &[bool],
    seed_start: usize,
    seed_end: usize,
    thresholds: &[f64],
    units: &mut [UnitReal],
) -> SeedScan {
    let tail = &bits[seed_end..];
    let window = &mut units[..tail.len()];
    prf.fill(&bits[seed_start - 1..seed_end], 1, window);
    let mut running = 0.0;
    let mut best = (0usize, f64::NEG_INFINITY, 0.0);
    for (t, (x, u)) in tail.iter().zip(window.iter()).enumerate() {
        running += score_bit(*x, *u);
        let m = t + 1;
        let margin = running - thresholds[m];
        if margin > best.1 {
            best = (m, margin, running);
        }
        if margin > 0.0 {
            break;
        }
    }
    let (m, margin, score) = best;
    SeedScan {
        passed: margin > 0.0,
        candidate: Candidate { seed_start, seed_end, window_end: seed_end + m, score, threshold: thresholds[m] },
    }
}

/// Scores the single seed window `seed_start..=seed_end` (1-based) of
/// `bits`, returning the first passing window end or else the best one.
pub fn score_seed_window(
    sk: &SecretKey,
    bits: &[bool],
    seed_start: usize,
    seed_end: usize,
    lambda: u32,
) -> Result<(bool, Candidate)> {
    if seed_start < 1 || seed_start > seed_end || seed_end >= bits.len() {
        return Err(Error::Config(format!(
            "seed window [{seed_start}, {seed_end}] leaves nothing to score in {} bits",
            bits.len()
        )));
    }
    let thresholds = thresholds(bits.len(), lambda);
    let mut units = vec![UnitReal::from_z(0); bits.len() - seed_end];
    let scan = scan_seed(&mut KeyedPrf::new(sk), bits, seed_start, seed_end, &thresholds, &mut units);
    Ok((scan.passed, scan.candidate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Binarized;
    use crate::model::{make_synthetic_model, SyntheticModelSpec};
    use crate::prf::setup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(seed: u64, lambda: u32) -> SecretKey {
        setup(lambda, SchemeId::Substring, None, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn uniform_blocks_have_length_533_at_lambda_8() {
        // Oracle: the smallest integer m with m >= (2/ln2)·8·√m.
        let m_min = (1..10_000usize).find(|&m| m as f64 >= 2.0 / 2f64.ln() * 8.0 * (m as f64).sqrt()).unwrap();
        assert_eq!(m_min, 533);
        let sk = key(1, 8);
        let m = make_synthetic_model(&SyntheticModelSpec::uniform(2048)).unwrap();
        let bm = Binarized::native(&m).unwrap();
        let out = wat_substring(&sk, &bm, b"", &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let spans: Vec<(usize, usize)> = out.ledger.blocks.iter().map(|b| (b.start, b.end)).collect();
        assert_eq!(spans, vec![(1, 533), (534, 1066), (1067, 1599)]);
        for b in &out.ledger.blocks {
            assert!(b.entropy >= 2.0 / 2f64.ln() * 8.0);
        }
    }

    #[test]
    fn ledger_blocks_pass_and_shift_invariantly() {
        let sk = key(3, 4);
        let m = make_synthetic_model(&SyntheticModelSpec::uniform(600)).unwrap();
        let bm = Binarized::native(&m).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let out = wat_substring(&sk, &bm, b"", &mut rng).unwrap();
        assert!(out.ledger.blocks.len() >= 3);
        let first = out.ledger.blocks[0];
        let (passed, c) = score_seed_window(&sk, &out.bits, first.start, first.end, 4).unwrap();
        assert!(passed, "{c:?}");

        // Prepending unrelated bits shifts positions but not scores.
        let pad: Vec<bool> = (0..37).map(|_| rng.next_u32() & 1 == 1).collect();
        let shifted: Vec<bool> = pad.iter().chain(&out.bits).copied().collect();
        let (again, c2) = score_seed_window(&sk, &shifted, first.start + 37, first.end + 37, 4).unwrap();
        assert!(again);
        assert_eq!(c2.score, c.score);
        assert_eq!(c2.window_end, c.window_end + 37);

        let report = detect_substring(&sk, &out.bits, 4).unwrap();
        assert!(report.verdict);
    }

    #[test]
    fn deterministic_model_never_closes_a_block() {
        let sk = key(5, 8);
        let spec = SyntheticModelSpec::deterministic(vec![0, 1, 1, 0], 3, 2);
        let m = make_synthetic_model(&spec).unwrap();
        let bm = Binarized::native(&m).unwrap();
        let out = wat_substring(&sk, &bm, b"", &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        assert!(out.ledger.blocks.is_empty());
        assert_eq!(out.bits, vec![false, true, true, false]);
    }

    #[test]
    fn work_bound_on_random_input() {
        let sk = key(7, 24);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let bits: Vec<bool> = (0..64).map(|_| rng.next_u32() & 1 == 1).collect();
        let r = detect_substring(&sk, &bits, 24).unwrap();
        assert!(!r.verdict);
        let l = 64u64;
        let expected: u64 = (1..l).map(|i| i * (l - i)).sum();
        assert_eq!(r.prf_evaluations, expected);
        assert_eq!(r.candidates_scanned, l * (l - 1) / 2);
        assert!(r.prf_evaluations <= l * l * l / 2);
    }

    #[test]
    fn stride_is_reported() {
        let sk = key(9, 4);
        let r = detect_substring_with(&mut KeyedPrf::new(&sk), &[true; 20], 4, 3).unwrap();
        assert_eq!(r.stride, 3);
        assert!(!r.exhaustive());
        assert!(detect_substring_with(&mut KeyedPrf::new(&sk), &[true; 20], 4, 0).is_err());
    }
}
