//! Watermark removal for prefix-specifiable models.
//!
//! Each output token is the first token of a fresh watermarked response
//! whose prefix is forced to the tokens chosen so far. If the scheme is
//! undetectable, every such first token is distributed as the plain model's
//! next token, so the assembled text carries no watermark. It costs one
//! query per output token.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec::TokenCodec;
use crate::error::{Error, Result};
use crate::model::{empirical_entropy, surprisal, Response, TokenDistribution, TokenId, TokenModel};
use crate::prf::{SchemeId, SecretKey};
use crate::scheme::{generate, generate_forced};

/// A watermarked model that lets the caller fix the start of the response.
pub trait PrefixOracle {
    fn done_id(&self) -> TokenId;

    /// Cap on the full response length, prefix included.
    fn max_len(&self) -> usize;

    /// A fresh response beginning with `forced_prefix`.
    fn query(&mut self, prompt: &[u8], forced_prefix: &[TokenId]) -> Result<Response>;

    /// The token right after `forced_prefix` in a fresh response, or `None`
    /// if the prefix already ends the response.
    fn next_token(&mut self, prompt: &[u8], forced_prefix: &[TokenId]) -> Result<Option<TokenId>> {
        Ok(self.query(prompt, forced_prefix)?.tokens.get(forced_prefix.len()).copied())
    }
}

/// The plain model conditioned on a response prefix. Running a generator
/// on it is running the generator on a prompt whose responses are
/// distributed as the original ones given that prefix.
pub struct ConditionedModel<'m, M: ?Sized> {
    inner: &'m M,
    prefix: Vec<TokenId>,
    max_len: usize,
}

impl<'m, M: TokenModel + ?Sized> ConditionedModel<'m, M> {
    /// Fails with `ImpossiblePrefix` if `prefix` has probability 0, contains
    /// `done`, or leaves no room under the model's length cap.
    pub fn new(inner: &'m M, prompt: &[u8], prefix: &[TokenId]) -> Result<Self> {
        if prefix.contains(&inner.done_id()) || prefix.len() >= inner.max_len() {
            return Err(Error::ImpossiblePrefix);
        }
        match empirical_entropy(inner, prompt, prefix) {
            Err(Error::ImpossibleResponse { .. }) => return Err(Error::ImpossiblePrefix),
            other => other?,
        };
        Ok(ConditionedModel { inner, prefix: prefix.to_vec(), max_len: inner.max_len() - prefix.len() })
    }

    /// Caps the continuation at `len` tokens.
    pub fn truncate_to(mut self, len: usize) -> Self {
        self.max_len = self.max_len.min(len.max(1));
        self
    }
}

impl<M: TokenModel + ?Sized> TokenModel for ConditionedModel<'_, M> {
    fn alphabet_size(&self) -> usize {
        self.inner.alphabet_size()
    }

    fn done_id(&self) -> TokenId {
        self.inner.done_id()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn next_dist(&self, prompt: &[u8], continuation: &[TokenId]) -> TokenDistribution {
        let mut full = Vec::with_capacity(self.prefix.len() + continuation.len());
        full.extend_from_slice(&self.prefix);
        full.extend_from_slice(continuation);
        self.inner.next_dist(prompt, &full)
    }
}

/// A model with a shorter length cap.
struct Capped<'m, M: ?Sized> {
    inner: &'m M,
    max_len: usize,
}

impl<M: TokenModel + ?Sized> TokenModel for Capped<'_, M> {
    fn alphabet_size(&self) -> usize {
        self.inner.alphabet_size()
    }
    fn done_id(&self) -> TokenId {
        self.inner.done_id()
    }
    fn max_len(&self) -> usize {
        self.max_len
    }
    fn next_dist(&self, prompt: &[u8], prefix: &[TokenId]) -> TokenDistribution {
        self.inner.next_dist(prompt, prefix)
    }
}

/// How the oracle honours a forced prefix.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// The generator starts afresh on the model conditioned on the prefix,
    /// as if the prefix had been moved into the prompt.
    #[default]
    FreshPrompt,
    /// The generator is driven through the prefix with its ledger replayed,
    /// then continues. A seed fixed inside the prefix keeps embedding, so
    /// the attack does not remove the watermark under this mode.
    ReplayLedger,
}

/// A prefix oracle backed by a real key and generator.
pub struct WatermarkOracle<'a, M: ?Sized, R> {
    sk: &'a SecretKey,
    model: &'a M,
    codec: Option<&'a TokenCodec>,
    mode: OracleMode,
    rng: R,
    queries: u64,
}

impl<'a, M: TokenModel + ?Sized, R: RngCore> WatermarkOracle<'a, M, R> {
    pub fn new(sk: &'a SecretKey, model: &'a M, codec: Option<&'a TokenCodec>, mode: OracleMode, rng: R) -> Self {
        WatermarkOracle { sk, model, codec, mode, rng, queries: 0 }
    }

    /// Queries answered so far.
    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// Generated tokens after `prefix`, with at most `cap` of them. The
    /// simple scheme decides on whole responses, so it ignores the cap.
    fn continuation(&mut self, prompt: &[u8], prefix: &[TokenId], cap: usize) -> Result<Vec<TokenId>> {
        self.queries += 1;
        if prefix.last() == Some(&self.model.done_id()) {
            ConditionedModel::new(self.model, prompt, &prefix[..prefix.len() - 1])?;
            return Ok(Vec::new());
        }
        let simple = self.sk.scheme() == SchemeId::Simple;
        let cap = if simple { usize::MAX } else { cap };
        match self.mode {
            OracleMode::ReplayLedger if !simple => {
                ConditionedModel::new(self.model, prompt, prefix)?;
                let capped =
                    Capped { inner: self.model, max_len: self.model.max_len().min(prefix.len().saturating_add(cap)) };
                let out = generate_forced(self.sk, &capped, self.codec, prompt, &mut self.rng, prefix)?;
                Ok(out.tokens()[prefix.len()..].to_vec())
            }
            _ => {
                let conditioned = ConditionedModel::new(self.model, prompt, prefix)?.truncate_to(cap);
                let out = generate(self.sk, &conditioned, self.codec, prompt, &mut self.rng)?;
                Ok(out.tokens().to_vec())
            }
        }
    }
}

impl<M: TokenModel + ?Sized, R: RngCore> PrefixOracle for WatermarkOracle<'_, M, R> {
    fn done_id(&self) -> TokenId {
        self.model.done_id()
    }

    fn max_len(&self) -> usize {
        self.model.max_len()
    }

    fn query(&mut self, prompt: &[u8], forced_prefix: &[TokenId]) -> Result<Response> {
        let rest = self.continuation(prompt, forced_prefix, usize::MAX)?;
        let mut tokens = forced_prefix.to_vec();
        tokens.extend(rest);
        let done = self.model.done_id();
        let truncated = tokens.last() != Some(&done);
        let mut logprobs = Vec::with_capacity(tokens.len());
        for t in 0..tokens.len() {
            logprobs.push(surprisal(self.model.next_dist(prompt, &tokens[..t]).prob(tokens[t])));
        }
        Ok(Response { tokens, per_token_logprobs: logprobs, truncated })
    }

    fn next_token(&mut self, prompt: &[u8], forced_prefix: &[TokenId]) -> Result<Option<TokenId>> {
        Ok(self.continuation(prompt, forced_prefix, 1)?.first().copied())
    }
}

/// The first token a fresh watermarked response would emit after `prefix`.
pub fn prefix_extend<O: PrefixOracle + ?Sized>(
    oracle: &mut O,
    prompt: &[u8],
    prefix: &[TokenId],
) -> Result<Option<TokenId>> {
    oracle.next_token(prompt, prefix)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackStats {
    pub queries: u64,
    pub output_length: u64,
    /// True when `max_len` stopped the attack before `done`.
    pub truncated: bool,
}

/// Builds a response one oracle query per token until `done` or `max_len`.
pub fn resample_attack<O: PrefixOracle + ?Sized>(
    oracle: &mut O,
    prompt: &[u8],
    max_len: usize,
) -> Result<(Vec<TokenId>, AttackStats)> {
    let limit = max_len.min(oracle.max_len());
    let done = oracle.done_id();
    let mut out = Vec::new();
    let mut queries = 0u64;
    while out.len() < limit {
        queries += 1;
        let Some(t) = oracle.next_token(prompt, &out)? else {
            return Err(Error::ModelContract(format!("oracle produced no token after {} tokens", out.len())));
        };
        out.push(t);
        if t == done {
            break;
        }
    }
    let truncated = out.last() != Some(&done);
    let stats = AttackStats { queries, output_length: out.len() as u64, truncated };
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_synthetic_model, SyntheticModelSpec};
    use crate::prf::setup;
    use crate::scheme::detect_tokens;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn conditioned_model_shifts_the_prefix() {
        let m = make_synthetic_model(&SyntheticModelSpec::bernoulli(0.3, 4)).unwrap();
        let c = ConditionedModel::new(&m, b"", &[TokenId(1), TokenId(0)]).unwrap();
        assert_eq!(c.next_dist(b"", &[TokenId(1)]).probs(), &[0.7, 0.3, 0.0]);
        assert_eq!(c.next_dist(b"", &[TokenId(1), TokenId(1)]).probs(), &[0.0, 0.0, 1.0]);
        assert_eq!(c.max_len(), m.max_len() - 2);
        let det = make_synthetic_model(&SyntheticModelSpec::deterministic(vec![1, 1], 3, 2)).unwrap();
        assert!(matches!(ConditionedModel::new(&det, b"", &[TokenId(0)]), Err(Error::ImpossiblePrefix)));
        assert!(matches!(ConditionedModel::new(&det, b"", &[TokenId(2), TokenId(1)]), Err(Error::ImpossiblePrefix)));
    }

    #[test]
    fn prefix_extend_edge_cases() {
        let mut r = rng(1);
        let sk = setup(4, SchemeId::Complete, None, &mut r).unwrap();
        let m = make_synthetic_model(&SyntheticModelSpec::uniform(8)).unwrap();
        let mut oracle = WatermarkOracle::new(&sk, &m, None, OracleMode::FreshPrompt, rng(2));
        let first = prefix_extend(&mut oracle, b"", &[]).unwrap().unwrap();
        assert!(first.0 < 2);
        let full: Vec<TokenId> = [1, 0, 1, 1, 0, 0, 1, 0, 2].iter().map(|&t| TokenId(t)).collect();
        assert_eq!(prefix_extend(&mut oracle, b"", &full).unwrap(), None);
        assert_eq!(prefix_extend(&mut oracle, b"", &full[..8]).unwrap(), Some(TokenId(2)));
        assert_eq!(oracle.queries(), 3);
        let q = oracle.query(b"", &full[..3]).unwrap();
        assert_eq!(&q.tokens[..3], &full[..3]);
        assert_eq!(q.tokens.len(), 9);
        assert!(q.per_token_logprobs[..8].iter().all(|l| *l == 1.0));
    }

    #[test]
    fn queries_equal_output_length() {
        let mut r = rng(3);
        let sk = setup(8, SchemeId::Complete, None, &mut r).unwrap();
        let m = make_synthetic_model(&SyntheticModelSpec::uniform(100)).unwrap();
        let mut oracle = WatermarkOracle::new(&sk, &m, None, OracleMode::FreshPrompt, rng(4));
        let (out, stats) = resample_attack(&mut oracle, b"", 1000).unwrap();
        assert_eq!(out.len(), 101);
        assert_eq!(stats, AttackStats { queries: 101, output_length: 101, truncated: false });
        let (cut, stats) = resample_attack(&mut oracle, b"", 40).unwrap();
        assert_eq!(cut.len(), 40);
        assert!(stats.truncated);
        assert_eq!(stats.queries, 40);
    }

    #[test]
    fn fresh_prompt_removes_and_replay_keeps_the_watermark() {
        let mut r = rng(5);
        let m = make_synthetic_model(&SyntheticModelSpec::uniform(256)).unwrap();
        let mut removed = 0;
        let mut kept = 0;
        for t in 0..6 {
            let sk = setup(8, SchemeId::Complete, None, &mut r).unwrap();
            let mut fresh = WatermarkOracle::new(&sk, &m, None, OracleMode::FreshPrompt, rng(10 + t));
            let (out, _) = resample_attack(&mut fresh, b"", 1 << 20).unwrap();
            removed += usize::from(!detect_tokens(&sk, &out, None, 1).unwrap().verdict);
            let mut replay = WatermarkOracle::new(&sk, &m, None, OracleMode::ReplayLedger, rng(20 + t));
            let (out, _) = resample_attack(&mut replay, b"", 1 << 20).unwrap();
            kept += usize::from(detect_tokens(&sk, &out, None, 1).unwrap().verdict);
        }
        assert_eq!((removed, kept), (6, 6));
    }
}
