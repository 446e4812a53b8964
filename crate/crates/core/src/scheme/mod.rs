//! The three watermarking schemes and their detectors.

pub mod complete;
pub mod simple;
pub mod substring;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::codec::{Binarized, BinaryModel, BitCursor, BitStep, TokenCodec};
use crate::error::{Error, Result};
use crate::model::{surprisal, Response, TokenId, TokenModel, BIT_DONE, BIT_ONE, BIT_ZERO};
use crate::prf::{KeyedPrf, SchemeId, SecretKey};

use complete::{detect_complete, wat_complete_with, EntropyLedger};
use simple::{detect_simple, wat_simple, SimpleRunStats};
use substring::{detect_substring_with, wat_substring_with, BlockLedger};

/// A scored window: seed bits `seed_start..=seed_end`, scores over
/// `seed_end+1..=window_end` (1-based positions in the detector input).
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub seed_start: usize,
    pub seed_end: usize,
    pub window_end: usize,
    pub score: f64,
    pub threshold: f64,
}

impl Candidate {
    pub fn margin(&self) -> f64 {
        self.score - self.threshold
    }
}

/// Outcome of a detector scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub verdict: bool,
    /// The passing candidate when `verdict` is true, otherwise the one with the largest margin.
    pub best_candidate: Option<Candidate>,
    /// `score - threshold` at `best_candidate`.
    pub margin: Option<f64>,
    pub candidates_scanned: u64,
    pub prf_evaluations: u64,
    /// Seed-length stride of the substring detector (1 means exhaustive).
    pub stride: usize,
    /// Set by callers when the scanned text was cut off by `max_len`.
    #[serde(default)]
    pub truncated: bool,
}

impl DetectionReport {
    pub(crate) fn empty(stride: usize) -> Self {
        DetectionReport {
            verdict: false,
            best_candidate: None,
            margin: None,
            candidates_scanned: 0,
            prf_evaluations: 0,
            stride,
            truncated: false,
        }
    }

    pub(crate) fn offer(&mut self, candidate: Candidate) {
        let better = self.margin.is_none_or(|m| candidate.margin() > m);
        if better {
            self.margin = Some(candidate.margin());
            self.best_candidate = Some(candidate);
        }
    }

    /// Whether the substring detector covered every candidate.
    pub fn exhaustive(&self) -> bool {
        self.stride == 1
    }
}

/// A generator's output: the bits written, their token decoding, and the
/// total empirical entropy of the response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generated<L> {
    pub bits: Vec<bool>,
    pub tokens: Vec<TokenId>,
    pub ledger: L,
    pub truncated: bool,
    /// Empirical entropy of the whole response, in bits.
    pub entropy: f64,
}

/// Per-bit policy of an embedding generator.
pub(crate) trait Embedder {
    /// The bit at 1-based position `i`, or `None` to sample it with fresh randomness.
    fn choose(&mut self, i: usize, p1: f64, bits: &[bool]) -> Option<bool>;

    /// Called once the bit at position `i` is fixed (`bits` includes it).
    fn observe(&mut self, i: usize, p1: f64, bits: &[bool]);
}

/// Drives `cursor` to the end of the response. Bits in `forced` are used
/// verbatim (the embedder still observes them), later ones come from `embedder`.
pub(crate) fn run_bits<E, R>(
    cursor: &mut dyn BitCursor,
    forced: &[bool],
    embedder: &mut E,
    rng: &mut R,
) -> Result<(Vec<bool>, bool, f64)>
where
    E: Embedder + ?Sized,
    R: RngCore + ?Sized,
{
    let mut bits = Vec::new();
    let mut entropy = 0.0;
    let truncated = loop {
        let p1 = match cursor.step()? {
            BitStep::Bit(p) => p,
            BitStep::Done => break false,
            BitStep::Truncated => break true,
        };
        let i = bits.len() + 1;
        let x = match forced.get(i - 1) {
            Some(&f) => f,
            None => match embedder.choose(i, p1, &bits) {
                Some(x) => x,
                None => rng.random::<f64>() < p1,
            },
        };
        cursor.push(x)?;
        entropy += bit_surprisal(x, p1);
        bits.push(x);
        embedder.observe(i, p1, &bits);
    };
    if bits.len() < forced.len() {
        return Err(Error::ImpossiblePrefix);
    }
    Ok((bits, truncated, entropy))
}

/// Per-bit surprisal of `bits` under `bmodel`, in bits.
pub fn bit_surprisals<B: BinaryModel + ?Sized>(bmodel: &B, prompt: &[u8], bits: &[bool]) -> Result<Vec<f64>> {
    let mut cursor = bmodel.cursor(prompt)?;
    let mut out = Vec::with_capacity(bits.len());
    for (pos, &x) in bits.iter().enumerate() {
        let BitStep::Bit(p1) = cursor.step()? else {
            return Err(Error::ImpossibleResponse { position: pos + 1 });
        };
        if (x && p1 <= 0.0) || (!x && p1 >= 1.0) {
            return Err(Error::ImpossibleResponse { position: pos + 1 });
        }
        cursor.push(x)?;
        out.push(bit_surprisal(x, p1));
    }
    Ok(out)
}

/// `-log2` of the probability the model assigned to bit `x`.
pub(crate) fn bit_surprisal(x: bool, p1: f64) -> f64 {
    surprisal(if x { p1 } else { 1.0 - p1 })
}

/// Output of whichever generator the key selects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Watermarked {
    Simple { response: Response, stats: SimpleRunStats },
    Complete(Generated<EntropyLedger>),
    Substring(Generated<BlockLedger>),
}

impl Watermarked {
    pub fn tokens(&self) -> &[TokenId] {
        match self {
            Watermarked::Simple { response, .. } => &response.tokens,
            Watermarked::Complete(g) => &g.tokens,
            Watermarked::Substring(g) => &g.tokens,
        }
    }

    pub fn truncated(&self) -> bool {
        match self {
            Watermarked::Simple { response, .. } => response.truncated,
            Watermarked::Complete(g) => g.truncated,
            Watermarked::Substring(g) => g.truncated,
        }
    }

    /// Empirical entropy of the response in bits.
    pub fn entropy(&self) -> f64 {
        match self {
            Watermarked::Simple { response, .. } => response.entropy(),
            Watermarked::Complete(g) => g.entropy,
            Watermarked::Substring(g) => g.entropy,
        }
    }
}

/// Runs the generator for `sk`'s scheme. The bit schemes use `codec` when
/// given and otherwise require a bit-valued model.
pub fn generate<M, R>(
    sk: &SecretKey,
    model: &M,
    codec: Option<&TokenCodec>,
    prompt: &[u8],
    rng: &mut R,
) -> Result<Watermarked>
where
    M: TokenModel + ?Sized,
    R: RngCore + ?Sized,
{
    generate_forced(sk, model, codec, prompt, rng, &[])
}

/// Like [`generate`], but the response is forced to begin with `prefix`
/// and the generator's ledger is replayed over it. The simple scheme has no
/// per-bit state, so it rejects a non-empty prefix.
pub fn generate_forced<M, R>(
    sk: &SecretKey,
    model: &M,
    codec: Option<&TokenCodec>,
    prompt: &[u8],
    rng: &mut R,
    prefix: &[TokenId],
) -> Result<Watermarked>
where
    M: TokenModel + ?Sized,
    R: RngCore + ?Sized,
{
    if sk.scheme() == SchemeId::Simple {
        if !prefix.is_empty() {
            return Err(Error::Config("the simple scheme cannot replay a forced prefix".into()));
        }
        let (response, stats) = wat_simple(sk, model, prompt, rng)?;
        return Ok(Watermarked::Simple { response, stats });
    }
    let bm = Binarized::new(model, codec)?;
    let forced = bits_for_tokens(codec, prefix)?;
    let mut prf = KeyedPrf::new(sk);
    Ok(match sk.scheme() {
        SchemeId::Complete => {
            Watermarked::Complete(wat_complete_with(&mut prf, sk.lambda(), &bm, prompt, rng, &forced)?)
        }
        _ => Watermarked::Substring(wat_substring_with(&mut prf, sk.lambda(), &bm, prompt, rng, &forced)?),
    })
}

/// The bit string a detector sees for `tokens`. Without a codec the tokens
/// must be bits, optionally ending in `done`.
pub fn bits_for_tokens(codec: Option<&TokenCodec>, tokens: &[TokenId]) -> Result<Vec<bool>> {
    if let Some(c) = codec {
        if let Some(bad) = tokens.iter().find(|t| t.index() >= c.alphabet_size()) {
            return Err(Error::Format(format!("token {} is outside the codec's alphabet", bad.0)));
        }
        return Ok(c.encode(tokens));
    }
    let mut bits = Vec::with_capacity(tokens.len());
    for (pos, t) in tokens.iter().enumerate() {
        match *t {
            BIT_ZERO => bits.push(false),
            BIT_ONE => bits.push(true),
            BIT_DONE if pos + 1 == tokens.len() => {}
            other => {
                return Err(Error::Format(format!(
                    "token {} at position {} is not a bit; a codec is needed",
                    other.0,
                    pos + 1
                )))
            }
        }
    }
    Ok(bits)
}

/// Runs the detector for `sk`'s scheme on a token sequence. `stride` only
/// affects the substring detector.
pub fn detect_tokens(
    sk: &SecretKey,
    tokens: &[TokenId],
    codec: Option<&TokenCodec>,
    stride: usize,
) -> Result<DetectionReport> {
    match sk.scheme() {
        SchemeId::Simple => {
            let mut report = DetectionReport::empty(1);
            report.verdict = detect_simple(sk, tokens)?;
            report.candidates_scanned = 1;
            report.prf_evaluations = 1;
            Ok(report)
        }
        _ => detect_bits(sk, &bits_for_tokens(codec, tokens)?, stride),
    }
}

/// Runs the complete or substring detector on raw bits at the key's `λ`.
pub fn detect_bits(sk: &SecretKey, bits: &[bool], stride: usize) -> Result<DetectionReport> {
    match sk.scheme() {
        SchemeId::Complete => detect_complete(sk, bits, sk.lambda()),
        SchemeId::Substring => detect_substring_with(&mut KeyedPrf::new(sk), bits, sk.lambda(), stride),
        SchemeId::Simple => Err(Error::Config("the simple scheme detects token sequences, not bits".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_synthetic_model, SyntheticModelSpec};
    use crate::prf::setup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn native_bits_accept_only_bit_tokens() {
        let t = |v: &[u32]| v.iter().map(|&x| TokenId(x)).collect::<Vec<_>>();
        assert_eq!(bits_for_tokens(None, &t(&[1, 0, 2])).unwrap(), vec![true, false]);
        assert!(bits_for_tokens(None, &t(&[1, 2, 0])).is_err());
        assert!(bits_for_tokens(None, &t(&[3])).is_err());
        let codec = TokenCodec::fixed(3, TokenId(2)).unwrap();
        assert_eq!(bits_for_tokens(Some(&codec), &t(&[1, 2])).unwrap(), vec![false, true, true, false]);
        assert!(bits_for_tokens(Some(&codec), &t(&[4])).is_err());
    }

    #[test]
    fn dispatch_round_trips_each_scheme() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let m = make_synthetic_model(&SyntheticModelSpec::uniform(256)).unwrap();
        for (scheme, b) in [(SchemeId::Simple, Some(2)), (SchemeId::Complete, None), (SchemeId::Substring, None)] {
            let sk = setup(4, scheme, b, &mut rng).unwrap();
            let out = generate(&sk, &m, None, b"", &mut rng).unwrap();
            assert_eq!(out.tokens().len(), 257);
            assert!(!out.truncated());
            assert!(detect_tokens(&sk, out.tokens(), None, 1).unwrap().verdict, "{scheme}");
        }
    }

    #[test]
    fn forced_prefix_is_kept() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let m = make_synthetic_model(&SyntheticModelSpec::uniform(16)).unwrap();
        let sk = setup(4, SchemeId::Complete, None, &mut rng).unwrap();
        let prefix = [TokenId(1), TokenId(1), TokenId(0)];
        let out = generate_forced(&sk, &m, None, b"", &mut rng, &prefix).unwrap();
        assert_eq!(&out.tokens()[..3], &prefix);
        let sk = setup(4, SchemeId::Simple, Some(1), &mut rng).unwrap();
        assert!(generate_forced(&sk, &m, None, b"", &mut rng, &prefix).is_err());
    }
}
