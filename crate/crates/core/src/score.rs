//! Per-bit detection scores, thresholds and exponential tail bounds.
//!
//! For text produced without the key, `ln(1/v)` is an Exp(1) variable, so a
//! window of `m` bits sums to about `m`. Embedding shifts each bit's expected
//! score to `1 + ln2 · H2(p)`, which is what the threshold `m + λ√m` detects.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::prf::UnitReal;

/// `ln(1/v)` with `v = u` for a 1 bit and `v = 1 - u` for a 0 bit.
pub fn score_bit(x: bool, u: UnitReal) -> f64 {
    let v = if x { u } else { u.complement() };
    -v.value().ln()
}

/// Sum of `score_bit` over paired bits and PRF values, in order.
pub fn score_sum(bits: &[bool], units: &[UnitReal]) -> f64 {
    bits.iter().zip(units).map(|(x, u)| score_bit(*x, *u)).sum()
}

/// `m + λ√m`.
pub fn detection_threshold(m: usize, lambda: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::EmptyWindow);
    }
    Ok(threshold_unchecked(m, lambda))
}

#[inline]
pub(crate) fn threshold_unchecked(m: usize, lambda: u32) -> f64 {
    let m = m as f64;
    m + f64::from(lambda) * m.sqrt()
}

/// Bounds on the tails of a sum of `n` Exp(1) variables.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TailBounds {
    /// Bound on `Pr[sum >= n + sqrt(τ n)]`.
    pub upper: f64,
    /// Bound on `Pr[sum <= n - sqrt(τ n)]`.
    pub lower: f64,
}

/// `(4/5)^√τ` and `e^(-τ/2)`. The bounds do not depend on `n`.
pub fn exp_tail_bounds(n: usize, tau: f64) -> Result<TailBounds> {
    if n == 0 || tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tail bounds need n >= 1 and tau > 0 (got n = {n}, tau = {tau})")));
    }
    Ok(TailBounds { upper: 0.8f64.powf(tau.sqrt()), lower: (-tau / 2.0).exp() })
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Expected score of a bit embedded with `x = 1[u <= p1]`.
pub fn watermarked_score_mean(p1: f64) -> f64 {
    1.0 + LN_2 * binary_entropy(p1)
}
