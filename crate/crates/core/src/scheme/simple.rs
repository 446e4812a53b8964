//! Rejection-sampling watermark: resample whole responses until a keyed tag
//! of the response is all zeros.
//!
//! Only weakly sound: unrelated text carries the zero tag with probability
//! `2^-b`. The first sample decides whether embedding happens at all: if its
//! empirical entropy is at most the cutoff (`6λ` by default) it is returned
//! as is. Otherwise fresh samples are drawn until one is both high-entropy
//! and tagged, which costs `1 + 2^b` model calls in expectation.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_response, Response, TokenId, TokenModel};
use crate::prf::{prf_tag, SchemeId, SecretKey};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleParams {
    /// Entropy (bits) a response must exceed to be watermarked.
    pub entropy_cutoff: f64,
    /// Cap on model calls.
    pub max_attempts: u64,
}

impl SimpleParams {
    /// Cutoff `6λ`, budget `2^(b+7)` calls.
    pub fn for_key(sk: &SecretKey) -> Self {
        let b = sk.b().unwrap_or(1);
        SimpleParams { entropy_cutoff: 6.0 * f64::from(sk.lambda()), max_attempts: 1u64 << (b + 7).min(62) }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleRunStats {
    /// Full responses drawn from the model.
    pub model_calls: u64,
    pub watermark_branch_taken: bool,
}

/// Bytes the tag is computed over: each token id as a big-endian u32.
pub fn tag_message(tokens: &[TokenId]) -> Vec<u8> {
    tokens.iter().flat_map(|t| t.0.to_be_bytes()).collect()
}

/// True iff the key's tag of `tokens` is all zeros.
pub fn detect_simple(sk: &SecretKey, tokens: &[TokenId]) -> Result<bool> {
    sk.require_scheme(SchemeId::Simple)?;
    Ok(prf_tag(sk, &tag_message(tokens)).iter().all(|bit| !bit))
}

pub fn wat_simple<M, R>(sk: &SecretKey, model: &M, prompt: &[u8], rng: &mut R) -> Result<(Response, SimpleRunStats)>
where
    M: TokenModel + ?Sized,
    R: RngCore + ?Sized,
{
    wat_simple_with(sk, model, prompt, rng, SimpleParams::for_key(sk))
}

pub fn wat_simple_with<M, R>(
    sk: &SecretKey,
    model: &M,
    prompt: &[u8],
    rng: &mut R,
    params: SimpleParams,
) -> Result<(Response, SimpleRunStats)>
where
    M: TokenModel + ?Sized,
    R: RngCore + ?Sized,
{
    sk.require_scheme(SchemeId::Simple)?;
    if params.max_attempts == 0 {
        return Err(Error::Config("max_attempts must be at least 1".into()));
    }
    let first = sample_response(model, prompt, rng)?;
    if first.entropy() <= params.entropy_cutoff {
        let stats = SimpleRunStats { model_calls: 1, watermark_branch_taken: false };
        return Ok((first, stats));
    }
    let mut calls = 1;
    let mut last = first;
    while calls < params.max_attempts {
        last = sample_response(model, prompt, rng)?;
        calls += 1;
        if last.entropy() > params.entropy_cutoff && detect_simple(sk, &last.tokens)? {
            let stats = SimpleRunStats { model_calls: calls, watermark_branch_taken: true };
            return Ok((last, stats));
        }
    }
    Err(Error::BudgetExceeded { attempts: calls, last: Box::new(last) })
}
