//! Prefix-free token codes and the reduction of a token model to a bit model.

mod binarize;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

pub use binarize::{binarize, Binarized, BinaryModel, BitCursor, BitStep};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    FixedWidth,
    Huffman,
}

impl std::str::FromStr for CodecKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_width" | "fixed" => Ok(CodecKind::FixedWidth),
            "huffman" => Ok(CodecKind::Huffman),
            other => Err(Error::InvalidCodec(format!("unknown codec kind `{other}`"))),
        }
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug)]
struct Node {
    children: [u32; 2],
    leaf: Option<TokenId>,
}

/// A bijective, prefix-free map from tokens to bit strings.
#[derive(Clone, Debug)]
pub struct TokenCodec {
    kind: CodecKind,
    alphabet_size: usize,
    done_id: TokenId,
    codewords: Vec<Vec<bool>>,
    nodes: Vec<Node>,
}

#[derive(Serialize, Deserialize)]
struct CodecFile {
    kind: CodecKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lengths: Option<Vec<u32>>,
    done_id: u32,
    alphabet_size: usize,
}

/// `ceil(log2 n)` for `n >= 2`.
pub fn fixed_width(alphabet_size: usize) -> u32 {
    usize::BITS - (alphabet_size - 1).leading_zeros()
}

/// Output of [`TokenCodec::decode_bits`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub tokens: Vec<TokenId>,
    /// Trailing bits that do not form a complete codeword.
    pub remainder: Vec<bool>,
}

impl TokenCodec {
    /// Fixed-width codes store each id in binary; Huffman codes need `freqs`.
    pub fn build(alphabet_size: usize, done_id: TokenId, kind: CodecKind, freqs: Option<&[f64]>) -> Result<Self> {
        if alphabet_size < 2 {
            return Err(Error::InvalidCodec("alphabet_size must be at least 2".into()));
        }
        if alphabet_size > u32::MAX as usize {
            return Err(Error::InvalidCodec("alphabet too large".into()));
        }
        if done_id.index() >= alphabet_size {
            return Err(Error::InvalidCodec(format!("done_id {} is outside the alphabet", done_id.0)));
        }
        let lengths = match (kind, freqs) {
            (CodecKind::FixedWidth, None) => vec![fixed_width(alphabet_size); alphabet_size],
            (CodecKind::FixedWidth, Some(_)) => {
                return Err(Error::InvalidCodec("fixed-width codecs take no frequencies".into()))
            }
            (CodecKind::Huffman, None) => return Err(Error::InvalidCodec("Huffman codecs need frequencies".into())),
            (CodecKind::Huffman, Some(f)) => huffman_lengths(alphabet_size, f)?,
        };
        Self::from_lengths(kind, done_id, &lengths)
    }

    pub fn fixed(alphabet_size: usize, done_id: TokenId) -> Result<Self> {
        Self::build(alphabet_size, done_id, CodecKind::FixedWidth, None)
    }

    pub fn huffman(done_id: TokenId, freqs: &[f64]) -> Result<Self> {
        Self::build(freqs.len(), done_id, CodecKind::Huffman, Some(freqs))
    }

    fn from_lengths(kind: CodecKind, done_id: TokenId, lengths: &[u32]) -> Result<Self> {
        let codewords = match kind {
            CodecKind::FixedWidth => {
                let w = lengths[0] as usize;
                (0..lengths.len()).map(|id| (0..w).map(|k| (id >> (w - 1 - k)) & 1 == 1).collect()).collect()
            }
            CodecKind::Huffman => canonical_codewords(lengths)?,
        };
        let mut codec = TokenCodec {
            kind,
            alphabet_size: lengths.len(),
            done_id,
            codewords,
            nodes: vec![Node { children: [NONE; 2], leaf: None }],
        };
        codec.build_trie()?;
        Ok(codec)
    }

    fn build_trie(&mut self) -> Result<()> {
        for (id, word) in self.codewords.iter().enumerate() {
            if word.is_empty() {
                return Err(Error::InvalidCodec(format!("token {id} has an empty codeword")));
            }
            let mut node = 0usize;
            for &bit in word {
                if self.nodes[node].leaf.is_some() {
                    return Err(Error::InvalidCodec("code is not prefix-free".into()));
                }
                let child = self.nodes[node].children[bit as usize];
                node = if child == NONE {
                    self.nodes.push(Node { children: [NONE; 2], leaf: None });
                    let new = (self.nodes.len() - 1) as u32;
                    self.nodes[node].children[bit as usize] = new;
                    new as usize
                } else {
                    child as usize
                };
            }
            let n = &mut self.nodes[node];
            if n.leaf.is_some() || n.children != [NONE; 2] {
                return Err(Error::InvalidCodec("code is not prefix-free".into()));
            }
            n.leaf = Some(TokenId(id as u32));
        }
        Ok(())
    }

    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn done_id(&self) -> TokenId {
        self.done_id
    }

    pub fn codeword(&self, token: TokenId) -> &[bool] {
        &self.codewords[token.index()]
    }

    pub fn done_codeword(&self) -> &[bool] {
        self.codeword(self.done_id)
    }

    /// Width of a fixed-width codec.
    pub fn width(&self) -> Option<u32> {
        match self.kind {
            CodecKind::FixedWidth => Some(self.codewords[0].len() as u32),
            CodecKind::Huffman => None,
        }
    }

    pub fn lengths(&self) -> Vec<u32> {
        self.codewords.iter().map(|w| w.len() as u32).collect()
    }

    pub fn encode(&self, tokens: &[TokenId]) -> Vec<bool> {
        tokens.iter().flat_map(|t| self.codeword(*t).iter().copied()).collect()
    }

    /// Greedy decode. Decoding stops at the first bit string that is not the
    /// prefix of any codeword (possible only for fixed-width codes over
    /// non-power-of-two alphabets); everything from there on is the remainder.
    pub fn decode_bits(&self, bits: &[bool]) -> Decoded {
        let mut tokens = Vec::new();
        let mut node = 0usize;
        let mut word_start = 0usize;
        for (i, &bit) in bits.iter().enumerate() {
            let child = self.nodes[node].children[bit as usize];
            if child == NONE {
                return Decoded { tokens, remainder: bits[word_start..].to_vec() };
            }
            node = child as usize;
            if let Some(t) = self.nodes[node].leaf {
                tokens.push(t);
                node = 0;
                word_start = i + 1;
            }
        }
        Decoded { tokens, remainder: bits[word_start..].to_vec() }
    }

    pub(crate) fn node_children(&self, node: usize) -> [u32; 2] {
        self.nodes[node].children
    }

    pub(crate) fn node_leaf(&self, node: usize) -> Option<TokenId> {
        self.nodes[node].leaf
    }

    pub(crate) fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn to_json(&self) -> String {
        let file = CodecFile {
            kind: self.kind,
            width: self.width(),
            lengths: (self.kind == CodecKind::Huffman).then(|| self.lengths()),
            done_id: self.done_id.0,
            alphabet_size: self.alphabet_size,
        };
        serde_json::to_string_pretty(&file).expect("codec serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodecFile = serde_json::from_str(text)?;
        let done = TokenId(file.done_id);
        match file.kind {
            CodecKind::FixedWidth => {
                let codec = Self::fixed(file.alphabet_size, done)?;
                if let Some(w) = file.width {
                    if Some(w) != codec.width() {
                        return Err(Error::InvalidCodec(format!(
                            "width {w} does not match alphabet size {}",
                            file.alphabet_size
                        )));
                    }
                }
                Ok(codec)
            }
            CodecKind::Huffman => {
                let lengths = file.lengths.ok_or_else(|| Error::InvalidCodec("Huffman codec needs lengths".into()))?;
                if lengths.len() != file.alphabet_size || lengths.len() < 2 {
                    return Err(Error::InvalidCodec("lengths must cover the alphabet".into()));
                }
                if done.index() >= lengths.len() {
                    return Err(Error::InvalidCodec("done_id is outside the alphabet".into()));
                }
                Self::from_lengths(CodecKind::Huffman, done, &lengths)
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

struct Weight(f64);

impl PartialEq for Weight {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Weight {}

impl PartialOrd for Weight {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Weight {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Huffman code lengths; ties break towards the smaller token id, with
/// merged subtrees ordered after all leaves in creation order.
fn huffman_lengths(alphabet_size: usize, freqs: &[f64]) -> Result<Vec<u32>> {
    if freqs.len() != alphabet_size {
        return Err(Error::InvalidCodec(format!("{} frequencies for an alphabet of {alphabet_size}", freqs.len())));
    }
    if freqs.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidCodec("frequencies must be finite and non-negative".into()));
    }
    if freqs.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidCodec("frequencies sum to zero".into()));
    }
    let mut parent = vec![usize::MAX; 2 * alphabet_size - 1];
    let mut heap: BinaryHeap<Reverse<(Weight, usize)>> =
        freqs.iter().enumerate().map(|(i, f)| Reverse((Weight(*f), i))).collect();
    let mut next = alphabet_size;
    while heap.len() > 1 {
        let Reverse((Weight(fa), a)) = heap.pop().unwrap();
        let Reverse((Weight(fb), b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((Weight(fa + fb), next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u32; 2 * alphabet_size - 1];
    for node in (0..root).rev() {
        depth[node] = depth[parent[node]] + 1;
    }
    Ok(depth[..alphabet_size].to_vec())
}

/// Canonical code assignment: tokens sorted by (length, id) receive
/// consecutive binary values, left-shifted whenever the length grows.
fn canonical_codewords(lengths: &[u32]) -> Result<Vec<Vec<bool>>> {
    if lengths.contains(&0) {
        return Err(Error::InvalidCodec("codeword lengths must be positive".into()));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut words = vec![Vec::new(); lengths.len()];
    let mut code: Vec<bool> = Vec::new();
    for (rank, &id) in order.iter().enumerate() {
        if rank > 0 {
            // code += 1
            let mut carry = true;
            for bit in code.iter_mut().rev() {
                if !carry {
                    break;
                }
                carry = *bit;
                *bit = !*bit;
            }
            if carry {
                return Err(Error::InvalidCodec("lengths violate the Kraft inequality".into()));
            }
        }
        code.resize(lengths[id] as usize, false);
        words[id] = code.clone();
    }
    Ok(words)
}
