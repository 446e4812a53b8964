use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthetic::{ModelKind, SyntheticModelSpec};
use super::TokenId;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ENTM";
const VERSION: u8 = 1;
const MAX_TABLE_ENTRIES: usize = 1 << 26;

/// Byte symbols of an n-gram model; `done` takes the id after the last symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<u8>,
}

impl Alphabet {
    pub fn new(mut symbols: Vec<u8>) -> Result<Self> {
        symbols.sort_unstable();
        symbols.dedup();
        if symbols.is_empty() {
            return Err(Error::InvalidSpec("alphabet needs at least one symbol".into()));
        }
        Ok(Alphabet { symbols })
    }

    /// Sorted distinct bytes of `corpus`.
    pub fn from_corpus(corpus: &[u8]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Alphabet::new(corpus.to_vec())
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// Symbols plus `done`.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn done_id(&self) -> TokenId {
        TokenId(self.symbols.len() as u32)
    }

    pub fn encode(&self, bytes: &[u8]) -> Result<Vec<TokenId>> {
        bytes
            .iter()
            .map(|b| self.symbols.binary_search(b).map(|i| TokenId(i as u32)).map_err(|_| Error::AlphabetMismatch(*b)))
            .collect()
    }

    /// Renders tokens as bytes, dropping `done`.
    pub fn decode(&self, tokens: &[TokenId]) -> Vec<u8> {
        tokens.iter().filter_map(|t| self.symbols.get(t.index()).copied()).collect()
    }
}

/// Conditional probability rows indexed by the previous `order` tokens.
///
/// Row index of a context `c_1 .. c_order` (oldest first) is
/// `((c_1 * A + c_2) * A + ...) + c_order`; contexts shorter than `order`
/// are left-padded with `done`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramTable {
    order: u8,
    alphabet_size: u32,
    probs: Vec<f64>,
}

impl NgramTable {
    pub fn new(order: u8, alphabet_size: u32, probs: Vec<f64>) -> Result<Self> {
        let table = NgramTable { order, alphabet_size, probs };
        table.validate()?;
        Ok(table)
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size as usize
    }

    pub fn rows(&self) -> usize {
        self.alphabet_size().pow(self.order as u32)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let a = self.alphabet_size();
        &self.probs[index * a..(index + 1) * a]
    }

    fn table_entries(order: u8, alphabet_size: u32) -> Result<usize> {
        (alphabet_size as usize)
            .checked_pow(order as u32 + 1)
            .filter(|n| *n <= MAX_TABLE_ENTRIES)
            .ok_or_else(|| Error::InvalidSpec(format!("order {order} over {alphabet_size} symbols is too large")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size < 2 {
            return Err(Error::InvalidSpec("ngram alphabet needs at least 2 tokens".into()));
        }
        let entries = Self::table_entries(self.order, self.alphabet_size)?;
        if self.probs.len() != entries {
            return Err(Error::InvalidSpec(format!(
                "ngram table has {} entries, expected {entries}",
                self.probs.len()
            )));
        }
        for r in 0..self.rows() {
            let row = self.row(r);
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSpec(format!("ngram row {r} is not a distribution")));
            }
        }
        Ok(())
    }

    pub(crate) fn context_index(&self, prefix: &[TokenId], pad: TokenId) -> usize {
        let order = self.order();
        let a = self.alphabet_size();
        let start = prefix.len().saturating_sub(order);
        let padding = order - (prefix.len() - start);
        std::iter::repeat_n(pad, padding).chain(prefix[start..].iter().copied()).fold(0, |idx, t| idx * a + t.index())
    }

    pub(crate) fn row_for(&self, prefix: &[TokenId], pad: TokenId) -> &[f64] {
        self.row(self.context_index(prefix, pad))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION, self.order])?;
        w.write_all(&self.alphabet_size.to_be_bytes())?;
        for p in &self.probs {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 10];
        r.read_exact(&mut header).map_err(|_| Error::Format("ngram file is shorter than its header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("missing ENTM magic".into()));
        }
        if header[4] != VERSION {
            return Err(Error::Format(format!("unsupported ngram file version {}", header[4])));
        }
        let order = header[5];
        let alphabet_size = u32::from_be_bytes(header[6..10].try_into().unwrap());
        let entries = Self::table_entries(order, alphabet_size)?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != entries * 8 {
            return Err(Error::Format(format!(
                "ngram file holds {} bytes of probabilities, expected {}",
                raw.len(),
                entries * 8
            )));
        }
        let probs = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        NgramTable::new(order, alphabet_size, probs)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Fits an add-one-smoothed n-gram model to `corpus`.
///
/// The corpus is treated as one response: contexts before the first byte are
/// padded with `done`, and the final context transitions to `done`.
pub fn train_ngram(corpus: &[u8], order: u8, alphabet: &Alphabet) -> Result<SyntheticModelSpec> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let a = alphabet.size();
    let entries = NgramTable::table_entries(order, a as u32)?;
    let done = alphabet.done_id();
    let tokens = alphabet.encode(corpus)?;

    let mut counts = vec![0u64; entries];
    let shape = NgramTable { order, alphabet_size: a as u32, probs: Vec::new() };
    let mut history: Vec<TokenId> = Vec::with_capacity(tokens.len() + 1);
    for t in tokens.iter().copied().chain([done]) {
        let ctx = shape.context_index(&history, done);
        counts[ctx * a + t.index()] += 1;
        history.push(t);
    }

    let mut probs = vec![0.0; entries];
    for (row_counts, row_probs) in counts.chunks_exact(a).zip(probs.chunks_exact_mut(a)) {
        let total: u64 = row_counts.iter().sum();
        let denom = (total + a as u64) as f64;
        for (c, p) in row_counts.iter().zip(row_probs.iter_mut()) {
            *p = (*c + 1) as f64 / denom;
        }
    }
    let table = NgramTable::new(order, a as u32, probs)?;
    Ok(SyntheticModelSpec::new(ModelKind::Ngram {
        done_id: done.0,
        symbols: Some(alphabet.symbols().to_vec()),
        table: Some(table),
        table_file: None,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_synthetic_model, TokenModel};

    #[test]
    fn abab_bigram() {
        let alphabet = Alphabet::new(b"ab".to_vec()).unwrap();
        let spec = train_ngram(b"abab", 1, &alphabet).unwrap();
        let m = make_synthetic_model(&spec).unwrap();
        let a = TokenId(0);
        let b = TokenId(1);
        let after_a = m.next_dist(b"", &[a]);
        assert!((after_a.prob(b) - 0.6).abs() < 1e-15);
        assert!((after_a.prob(a) - 0.2).abs() < 1e-15);
        // The start context saw exactly one `a`.
        assert!((m.next_dist(b"", &[]).prob(a) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn binary_round_trip() {
        let alphabet = Alphabet::from_corpus(b"hello world").unwrap();
        let spec = train_ngram(b"hello world", 2, &alphabet).unwrap();
        let ModelKind::Ngram { table: Some(table), .. } = spec.kind else { unreachable!() };
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ENTM");
        assert_eq!(buf[5], 2);
        assert_eq!(u32::from_be_bytes(buf[6..10].try_into().unwrap()), 9);
        assert_eq!(NgramTable::read_from(buf.as_slice()).unwrap(), table);
        assert!(NgramTable::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn rejects_empty_and_foreign_bytes() {
        let alphabet = Alphabet::new(b"ab".to_vec()).unwrap();
        assert!(matches!(train_ngram(b"", 1, &alphabet), Err(Error::EmptyCorpus)));
        assert!(matches!(train_ngram(b"abc", 1, &alphabet), Err(Error::AlphabetMismatch(b'c'))));
    }

    #[test]
    fn alphabet_codec() {
        let alphabet = Alphabet::from_corpus(b"cab").unwrap();
        let ids = alphabet.encode(b"abc").unwrap();
        assert_eq!(ids, vec![TokenId(0), TokenId(1), TokenId(2)]);
        assert_eq!(alphabet.done_id(), TokenId(3));
        assert_eq!(alphabet.decode(&[TokenId(2), TokenId(3)]), b"c");
    }
}
