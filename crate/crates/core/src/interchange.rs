//! The JSON document passed between `generate`, `attack` and `detect`.
//!
//! ```json
//! {"codec_ref": "codec.json", "token_ids": [3, 1, 4], "truncated": false,
//!  "scheme": "complete", "ledger": {...}, "H_e": 412.7}
//! ```
//!
//! Only `token_ids` (or `bits`, a string of `0`/`1`) is needed for detection.
//! A bare `0`/`1` string, without any JSON around it, is read as bits too.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::TokenCodec;
use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::prf::SchemeId;
use crate::scheme::substring::Block;
use crate::scheme::Watermarked;

/// Generator bookkeeping worth keeping next to the text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerSummary {
    Simple {
        model_calls: u64,
        watermark_branch_taken: bool,
    },
    /// `seed_end_index` is absent when the response never gathered enough entropy.
    Complete {
        seed_end_index: Option<usize>,
        seed_entropy: f64,
    },
    Substring {
        blocks: Vec<Block>,
    },
    Attack {
        queries: u64,
    },
}

impl LedgerSummary {
    pub fn of(w: &Watermarked) -> Self {
        match w {
            Watermarked::Simple { stats, .. } => LedgerSummary::Simple {
                model_calls: stats.model_calls,
                watermark_branch_taken: stats.watermark_branch_taken,
            },
            Watermarked::Complete(g) => {
                LedgerSummary::Complete { seed_end_index: g.ledger.seed_end_index, seed_entropy: g.ledger.h }
            }
            Watermarked::Substring(g) => LedgerSummary::Substring { blocks: g.ledger.blocks.clone() },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TextFile {
    /// Path of the codec the token ids go through; absent for bit-native text.
    #[serde(default)]
    pub codec_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
    /// Raw bit string, used when there are no token ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<String>,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger: Option<LedgerSummary>,
    /// Empirical entropy of the response, in bits.
    #[serde(rename = "H_e", default, skip_serializing_if = "Option::is_none")]
    pub h_e: Option<f64>,
}

/// What a detector is handed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Text {
    Tokens(Vec<TokenId>),
    Bits(Vec<bool>),
}

impl TextFile {
    pub fn from_tokens(tokens: &[TokenId], codec_ref: Option<String>, truncated: bool) -> Self {
        TextFile { codec_ref, token_ids: Some(tokens.iter().map(|t| t.0).collect()), truncated, ..Default::default() }
    }

    pub fn from_watermarked(w: &Watermarked, codec_ref: Option<String>) -> Self {
        TextFile {
            scheme: Some(match w {
                Watermarked::Simple { .. } => SchemeId::Simple,
                Watermarked::Complete(_) => SchemeId::Complete,
                Watermarked::Substring(_) => SchemeId::Substring,
            }),
            ledger: Some(LedgerSummary::of(w)),
            h_e: Some(w.entropy()),
            ..Self::from_tokens(w.tokens(), codec_ref, w.truncated())
        }
    }

    /// Parses a JSON document or a bare bit string.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.starts_with('{') {
            return Ok(serde_json::from_str(trimmed)?);
        }
        if !trimmed.is_empty() && trimmed.chars().all(|c| c == '0' || c == '1' || c.is_whitespace()) {
            return Ok(TextFile { bits: Some(trimmed.split_whitespace().collect()), ..Default::default() });
        }
        Err(Error::Format("expected a JSON text document or a string of 0/1 bits".into()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("text serialization cannot fail")
    }

    /// The text to detect on. Empty texts are a format error.
    pub fn text(&self) -> Result<Text> {
        let text = match (&self.token_ids, &self.bits) {
            (Some(ids), _) => Text::Tokens(ids.iter().map(|&t| TokenId(t)).collect()),
            (None, Some(bits)) => Text::Bits(parse_bits(bits)?),
            (None, None) => return Err(Error::Format("text has neither token_ids nor bits".into())),
        };
        let empty = match &text {
            Text::Tokens(t) => t.is_empty(),
            Text::Bits(b) => b.is_empty(),
        };
        if empty {
            return Err(Error::Format("text is empty".into()));
        }
        Ok(text)
    }

    /// Loads the referenced codec, resolving a relative path against `base`.
    pub fn load_codec(&self, base: Option<&Path>) -> Result<Option<TokenCodec>> {
        let Some(r) = &self.codec_ref else { return Ok(None) };
        let mut path = PathBuf::from(r);
        if path.is_relative() {
            if let Some(dir) = base {
                path = dir.join(path);
            }
        }
        TokenCodec::load(&path).map(Some)
    }
}

fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Format(format!("bit strings hold only 0 and 1, found {other:?}"))),
        })
        .collect()
}
