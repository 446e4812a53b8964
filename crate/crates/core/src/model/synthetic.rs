use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ngram::NgramTable;
use super::{TokenDistribution, TokenId, TokenModel, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};

/// Token ids used by the bit-valued synthetic models.
pub const BIT_ZERO: TokenId = TokenId(0);
pub const BIT_ONE: TokenId = TokenId(1);
pub const BIT_DONE: TokenId = TokenId(2);

/// Serializable description of a synthetic model, e.g. `{"kind":"uniform","len":4096}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `len` fair bits, then `done`.
    Uniform { len: usize },
    /// Always emits `seq` (followed by `done` if `seq` does not end with it).
    Deterministic { seq: Vec<u32>, alphabet_size: usize, done_id: u32 },
    /// `len` independent bits with `Pr[1] = p`, then `done`.
    Bernoulli { p: f64, len: usize },
    /// `done` with probability `1 - epsilon`, otherwise `block_len` fair bits then `done`.
    Mixture { epsilon: f64, block_len: usize },
    /// Byte-level n-gram model; the table lives inline or in an `ENTM` file.
    Ngram {
        done_id: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        symbols: Option<Vec<u8>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<NgramTable>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table_file: Option<PathBuf>,
    },
}

impl SyntheticModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        SyntheticModelSpec { kind, max_len: None }
    }

    pub fn uniform(len: usize) -> Self {
        Self::new(ModelKind::Uniform { len })
    }

    pub fn bernoulli(p: f64, len: usize) -> Self {
        Self::new(ModelKind::Bernoulli { p, len })
    }

    pub fn mixture(epsilon: f64, block_len: usize) -> Self {
        Self::new(ModelKind::Mixture { epsilon, block_len })
    }

    pub fn deterministic(seq: Vec<u32>, alphabet_size: usize, done_id: u32) -> Self {
        Self::new(ModelKind::Deterministic { seq, alphabet_size, done_id })
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = Some(max_len);
        self
    }

    /// Reads a JSON spec, resolving a relative `table_file` against the spec's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: SyntheticModelSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let ModelKind::Ngram { table_file: Some(file), .. } = &mut spec.kind {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serialization cannot fail")
    }

    /// Byte rendering of each non-`done` token, when the spec defines one.
    pub fn symbols(&self) -> Option<&[u8]> {
        match &self.kind {
            ModelKind::Ngram { symbols, .. } => symbols.as_deref(),
            _ => None,
        }
    }
}

/// A model built from a [`SyntheticModelSpec`].
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    inner: Inner,
    max_len: usize,
}

#[derive(Clone, Debug)]
enum Inner {
    Uniform { len: usize },
    Deterministic { seq: Vec<TokenId>, alphabet_size: usize, done: TokenId },
    Bernoulli { p: f64, len: usize },
    Mixture { epsilon: f64, block_len: usize },
    Ngram { table: NgramTable, done: TokenId },
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 {
        Err(Error::InvalidSpec("lengths must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name} = {p} is not in [0, 1]")))
    }
}

/// Validates a spec and builds the model it describes.
pub fn make_synthetic_model(spec: &SyntheticModelSpec) -> Result<SyntheticModel> {
    let max_len = spec.max_len.unwrap_or(DEFAULT_MAX_LEN);
    if max_len == 0 {
        return Err(Error::InvalidSpec("max_len must be at least 1".into()));
    }
    let inner = match &spec.kind {
        ModelKind::Uniform { len } => {
            check_len(*len)?;
            Inner::Uniform { len: *len }
        }
        ModelKind::Bernoulli { p, len } => {
            check_len(*len)?;
            check_prob("p", *p)?;
            Inner::Bernoulli { p: *p, len: *len }
        }
        ModelKind::Mixture { epsilon, block_len } => {
            check_len(*block_len)?;
            check_prob("epsilon", *epsilon)?;
            Inner::Mixture { epsilon: *epsilon, block_len: *block_len }
        }
        ModelKind::Deterministic { seq, alphabet_size, done_id } => {
            if *alphabet_size < 2 {
                return Err(Error::InvalidSpec("alphabet_size must be at least 2".into()));
            }
            if let Some(bad) = seq.iter().chain([done_id]).find(|t| **t as usize >= *alphabet_size) {
                return Err(Error::InvalidSpec(format!("token {bad} is outside the alphabet")));
            }
            let done = TokenId(*done_id);
            let mut seq: Vec<TokenId> = seq.iter().map(|t| TokenId(*t)).collect();
            if let Some(cut) = seq.iter().position(|t| *t == done) {
                seq.truncate(cut + 1);
            } else {
                seq.push(done);
            }
            Inner::Deterministic { seq, alphabet_size: *alphabet_size, done }
        }
        ModelKind::Ngram { done_id, table, table_file, .. } => {
            let table = match (table, table_file) {
                (Some(t), None) => t.clone(),
                (None, Some(path)) => NgramTable::read_file(path)?,
                _ => return Err(Error::InvalidSpec("ngram needs exactly one of `table` or `table_file`".into())),
            };
            table.validate()?;
            if *done_id as usize >= table.alphabet_size() {
                return Err(Error::InvalidSpec(format!("done_id {done_id} is outside the alphabet")));
            }
            Inner::Ngram { table, done: TokenId(*done_id) }
        }
    };
    Ok(SyntheticModel { inner, max_len })
}

const FAIR_BIT: [f64; 3] = [0.5, 0.5, 0.0];
const ONLY_DONE: [f64; 3] = [0.0, 0.0, 1.0];

impl TokenModel for SyntheticModel {
    fn alphabet_size(&self) -> usize {
        match &self.inner {
            Inner::Deterministic { alphabet_size, .. } => *alphabet_size,
            Inner::Ngram { table, .. } => table.alphabet_size(),
            _ => 3,
        }
    }

    fn done_id(&self) -> TokenId {
        match &self.inner {
            Inner::Deterministic { done, .. } | Inner::Ngram { done, .. } => *done,
            _ => BIT_DONE,
        }
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn next_dist(&self, _prompt: &[u8], prefix: &[TokenId]) -> TokenDistribution {
        let n = prefix.len();
        let probs = match &self.inner {
            Inner::Uniform { len } => {
                if n < *len {
                    FAIR_BIT.to_vec()
                } else {
                    ONLY_DONE.to_vec()
                }
            }
            Inner::Bernoulli { p, len } => {
                if n < *len {
                    vec![1.0 - p, *p, 0.0]
                } else {
                    ONLY_DONE.to_vec()
                }
            }
            Inner::Mixture { epsilon, block_len } => {
                if n == 0 {
                    vec![epsilon / 2.0, epsilon / 2.0, 1.0 - epsilon]
                } else if n < *block_len && prefix[0] != BIT_DONE {
                    FAIR_BIT.to_vec()
                } else {
                    ONLY_DONE.to_vec()
                }
            }
            Inner::Deterministic { seq, alphabet_size, done } => {
                let next = seq.get(n).copied().unwrap_or(*done);
                return TokenDistribution::point(*alphabet_size, next);
            }
            Inner::Ngram { table, done } => table.row_for(prefix, *done).to_vec(),
        };
        TokenDistribution::from_vec(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_shape() {
        let spec = SyntheticModelSpec::uniform(8);
        assert_eq!(spec.to_json().replace([' ', '\n'], ""), r#"{"kind":"uniform","len":8}"#);
        let back: SyntheticModelSpec =
            serde_json::from_str(r#"{"kind":"mixture","epsilon":0.25,"block_len":64,"max_len":100}"#).unwrap();
        assert_eq!(back, SyntheticModelSpec::mixture(0.25, 64).with_max_len(100));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            SyntheticModelSpec::uniform(0),
            SyntheticModelSpec::bernoulli(1.5, 4),
            SyntheticModelSpec::mixture(-0.1, 4),
            SyntheticModelSpec::deterministic(vec![5], 4, 3),
            SyntheticModelSpec::uniform(4).with_max_len(0),
        ] {
            assert!(make_synthetic_model(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn mixture_first_step() {
        let m = make_synthetic_model(&SyntheticModelSpec::mixture(0.25, 64)).unwrap();
        assert_eq!(m.next_dist(b"", &[]).probs(), &[0.125, 0.125, 0.75]);
        assert_eq!(m.next_dist(b"", &[BIT_ONE]).probs(), &FAIR_BIT);
        let full = vec![BIT_ZERO; 64];
        assert_eq!(m.next_dist(b"", &full).probs(), &ONLY_DONE);
    }

    #[test]
    fn deterministic_appends_done() {
        let m = make_synthetic_model(&SyntheticModelSpec::deterministic(vec![1, 0], 3, 2)).unwrap();
        assert_eq!(m.next_dist(b"", &[]).prob(TokenId(1)), 1.0);
        assert_eq!(m.next_dist(b"", &[TokenId(1), TokenId(0)]).prob(TokenId(2)), 1.0);
    }
}
