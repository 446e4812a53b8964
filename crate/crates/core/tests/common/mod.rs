//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use std::collections::BTreeMap;

use entmark::codec::{binarize, BinaryModel, BitStep, CodecKind, TokenCodec};
use entmark::model::{TokenDistribution, TokenId, TokenModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A model whose next-token distribution is a fixed pseudorandom function of
/// the prefix. Some tokens get zero mass so codec branches with nothing under
/// them are exercised.
pub struct TableModel {
    pub alphabet: usize,
    pub done: TokenId,
    pub max_len: usize,
    pub salt: u64,
}

impl TokenModel for TableModel {
    fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    fn done_id(&self) -> TokenId {
        self.done
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn next_dist(&self, _prompt: &[u8], prefix: &[TokenId]) -> TokenDistribution {
        let mut h = self.salt;
        for t in prefix {
            h = h.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(u64::from(t.0) + 1);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(h);
        let mut w: Vec<f64> =
            (0..self.alphabet).map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random::<f64>() + 1e-3 }).collect();
        if w.iter().all(|&x| x == 0.0) {
            w[rng.random_range(0..self.alphabet)] = 1.0;
        }
        let total: f64 = w.iter().sum();
        TokenDistribution::from_vec(w.into_iter().map(|x| x / total).collect())
    }
}

type Masses = BTreeMap<Vec<u32>, f64>;

/// Probability of every complete response, token by token.
pub fn token_masses<M: TokenModel>(m: &M) -> Masses {
    fn walk<M: TokenModel>(m: &M, prefix: &mut Vec<TokenId>, mass: f64, out: &mut Masses) {
        let dist = m.next_dist(b"", prefix);
        for (t, &p) in dist.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            prefix.push(TokenId(t as u32));
            if TokenId(t as u32) == m.done_id() || prefix.len() >= m.max_len() {
                *out.entry(prefix.iter().map(|t| t.0).collect()).or_default() += mass * p;
            } else {
                walk(m, prefix, mass * p, out);
            }
            prefix.pop();
        }
    }
    let mut out = Masses::new();
    walk(m, &mut Vec::new(), 1.0, &mut out);
    out
}

/// Probability of every complete response when sampled one bit at a time.
pub fn bit_masses<M: TokenModel>(m: &M, codec: &TokenCodec) -> Masses {
    fn walk(b: &dyn BinaryModel, codec: &TokenCodec, bits: &mut Vec<bool>, mass: f64, out: &mut Masses) {
        match b.next_bit_prob(b"", bits).expect("reachable prefix") {
            BitStep::Bit(p1) => {
                for (bit, p) in [(false, 1.0 - p1), (true, p1)] {
                    if p > 0.0 {
                        bits.push(bit);
                        walk(b, codec, bits, mass * p, out);
                        bits.pop();
                    }
                }
            }
            BitStep::Done | BitStep::Truncated => {
                let decoded = codec.decode_bits(bits);
                assert!(decoded.remainder.is_empty(), "response ended mid-codeword");
                *out.entry(decoded.tokens.iter().map(|t| t.0).collect()).or_default() += mass;
            }
        }
    }
    let b = binarize(m, codec).expect("codec matches model");
    let mut out = Masses::new();
    walk(&b, codec, &mut Vec::new(), 1.0, &mut out);
    out
}

/// Largest per-outcome disagreement between the two sampling routes.
pub fn max_mass_error(a: &Masses, b: &Masses) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

pub struct SweepResult {
    pub models: usize,
    pub outcomes: usize,
    pub worst_error: f64,
}

/// Every alphabet size 2..=8, every length cap 1..=4, fixed-width and
/// Huffman codecs, `per_cell` random models each.
pub fn codec_sweep(per_cell: u64) -> SweepResult {
    let mut res = SweepResult { models: 0, outcomes: 0, worst_error: 0.0 };
    for alphabet in 2..=8usize {
        for max_len in 1..=4usize {
            for salt in 0..per_cell {
                let done = TokenId((salt % alphabet as u64) as u32);
                let m = TableModel { alphabet, done, max_len, salt: salt * 1000 + (alphabet * 10 + max_len) as u64 };
                let tok = token_masses(&m);
                let freqs = m.next_dist(b"", &[]).probs().iter().map(|p| p + 0.05).collect::<Vec<_>>();
                for kind in [CodecKind::FixedWidth, CodecKind::Huffman] {
                    let f = (kind == CodecKind::Huffman).then_some(freqs.as_slice());
                    let codec = TokenCodec::build(alphabet, done, kind, f).unwrap();
                    let bit = bit_masses(&m, &codec);
                    res.worst_error = res.worst_error.max(max_mass_error(&tok, &bit));
                    res.models += 1;
                    res.outcomes += tok.len();
                }
            }
        }
    }
    res
}
