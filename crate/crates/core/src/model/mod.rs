//! The language-model abstraction, empirical entropy, and synthetic models.

mod ngram;
mod synthetic;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ngram::{train_ngram, Alphabet, NgramTable};
pub use synthetic::{make_synthetic_model, ModelKind, SyntheticModel, SyntheticModelSpec, BIT_DONE, BIT_ONE, BIT_ZERO};

/// Default hard cap on response length, in tokens.
pub const DEFAULT_MAX_LEN: usize = 1 << 16;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Index into a model's alphabet.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// Next-token probabilities over a model's alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Wraps raw probabilities. Call [`validate`](Self::validate) before trusting them.
    pub fn from_vec(probs: Vec<f64>) -> Self {
        TokenDistribution { probs }
    }

    /// All mass on `token`.
    pub fn point(alphabet_size: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; alphabet_size];
        probs[token.index()] = 1.0;
        TokenDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token.index()).copied().unwrap_or(0.0)
    }

    /// Checks length, finiteness, non-negativity and normalization.
    pub fn validate(&self, alphabet_size: usize) -> Result<()> {
        if self.probs.len() != alphabet_size {
            return Err(Error::ModelContract(format!(
                "distribution has {} entries, alphabet has {alphabet_size}",
                self.probs.len()
            )));
        }
        if let Some(bad) = self.probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::ModelContract(format!("invalid probability {bad}")));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::ModelContract(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    /// Inverse-CDF draw. Zero-probability tokens are never returned.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> TokenId {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut last_possible = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                cumulative += p;
                last_possible = i;
                if u < cumulative {
                    return TokenId(i as u32);
                }
            }
        }
        TokenId(last_possible as u32)
    }
}

/// A deterministic map from (prompt, response prefix) to the next-token distribution.
pub trait TokenModel: Send + Sync {
    fn alphabet_size(&self) -> usize;

    fn done_id(&self) -> TokenId;

    /// Hard cap on response length in tokens.
    fn max_len(&self) -> usize {
        DEFAULT_MAX_LEN
    }

    fn next_dist(&self, prompt: &[u8], prefix: &[TokenId]) -> TokenDistribution;
}

impl<M: TokenModel + ?Sized> TokenModel for &M {
    fn alphabet_size(&self) -> usize {
        (**self).alphabet_size()
    }
    fn done_id(&self) -> TokenId {
        (**self).done_id()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn next_dist(&self, prompt: &[u8], prefix: &[TokenId]) -> TokenDistribution {
        (**self).next_dist(prompt, prefix)
    }
}

impl<M: TokenModel + ?Sized> TokenModel for Box<M> {
    fn alphabet_size(&self) -> usize {
        (**self).alphabet_size()
    }
    fn done_id(&self) -> TokenId {
        (**self).done_id()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn next_dist(&self, prompt: &[u8], prefix: &[TokenId]) -> TokenDistribution {
        (**self).next_dist(prompt, prefix)
    }
}

/// `-log2 p`, with `p = 1` mapping to `+0.0`.
pub(crate) fn surprisal(p: f64) -> f64 {
    0.0 - p.log2()
}

/// A sampled response together with the surprisal of each token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<TokenId>,
    /// `-log2 p_i(x_i)` for each token, in bits.
    pub per_token_logprobs: Vec<f64>,
    /// True when `max_len` was hit before `done`.
    pub truncated: bool,
}

impl Response {
    /// Total empirical entropy recorded during sampling.
    pub fn entropy(&self) -> f64 {
        self.per_token_logprobs.iter().sum()
    }
}

/// Samples a full response token by token.
pub fn sample_response<M, R>(model: &M, prompt: &[u8], rng: &mut R) -> Result<Response>
where
    M: TokenModel + ?Sized,
    R: RngCore + ?Sized,
{
    let done = model.done_id();
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    while tokens.len() < model.max_len() {
        let dist = model.next_dist(prompt, &tokens);
        dist.validate(model.alphabet_size())?;
        let t = dist.sample(rng);
        logprobs.push(surprisal(dist.prob(t)));
        tokens.push(t);
        if t == done {
            return Ok(Response { tokens, per_token_logprobs: logprobs, truncated: false });
        }
    }
    Ok(Response { tokens, per_token_logprobs: logprobs, truncated: true })
}

/// `-log2 Pr[x | prompt]`, summed token by token.
pub fn empirical_entropy<M: TokenModel + ?Sized>(model: &M, prompt: &[u8], x: &[TokenId]) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    empirical_entropy_substring(model, prompt, x, 1, x.len())
}

/// `-log2 Pr[x_i..=x_j | x_1..x_{i-1}]` with 1-based inclusive bounds.
pub fn empirical_entropy_substring<M: TokenModel + ?Sized>(
    model: &M,
    prompt: &[u8],
    x: &[TokenId],
    i: usize,
    j: usize,
) -> Result<f64> {
    if i < 1 || i > j || j > x.len() {
        return Err(Error::InvalidSpec(format!("substring [{i}, {j}] is out of range for length {}", x.len())));
    }
    let mut total = 0.0;
    for t in i - 1..j {
        let dist = model.next_dist(prompt, &x[..t]);
        dist.validate(model.alphabet_size())?;
        let p = dist.prob(x[t]);
        if p <= 0.0 {
            return Err(Error::ImpossibleResponse { position: t + 1 });
        }
        total += surprisal(p);
    }
    Ok(total)
}
