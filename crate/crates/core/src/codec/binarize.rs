use crate::error::{Error, Result};
use crate::model::{TokenId, TokenModel, BIT_DONE, BIT_ONE, BIT_ZERO};

use super::{TokenCodec, NONE};

/// What the bit model does next.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum BitStep {
    /// Another bit follows; the payload is its probability of being 1.
    Bit(f64),
    /// The response ended with `done`.
    Done,
    /// The response hit the model's length cap.
    Truncated,
}

/// Per-response state of a bit model: the bits pushed so far and the
/// tokens they decode to.
pub trait BitCursor {
    fn step(&mut self) -> Result<BitStep>;

    /// Appends a bit. Fails if the bit has probability 0 or the response is over.
    fn push(&mut self, bit: bool) -> Result<()>;

    /// Complete tokens decoded so far (ending with `done` once finished).
    fn tokens(&self) -> &[TokenId];
}

/// A model over the alphabet {0, 1} with `done` signalled out of band.
pub trait BinaryModel {
    fn cursor<'a>(&'a self, prompt: &'a [u8]) -> Result<Box<dyn BitCursor + 'a>>;

    /// Probability that the bit after `prefix_bits` is 1.
    fn next_bit_prob(&self, prompt: &[u8], prefix_bits: &[bool]) -> Result<BitStep> {
        let mut cursor = self.cursor(prompt)?;
        for &bit in prefix_bits {
            match cursor.step()? {
                BitStep::Bit(_) => cursor.push(bit)?,
                _ => return Err(Error::ImpossiblePrefix),
            }
        }
        cursor.step()
    }
}

/// A token model viewed one bit at a time.
///
/// With a codec, each token is emitted as its codeword and the bit
/// probabilities are the pushforward of the token distribution. Without one
/// the model must already be bit-valued: tokens 0 and 1 are the bits and
/// token 2 is `done`, which may only occur with probability 0 or 1.
#[derive(Clone, Copy)]
pub struct Binarized<'a, M: ?Sized> {
    model: &'a M,
    codec: Option<&'a TokenCodec>,
}

/// Wraps `model` with `codec`, checking that they agree on the alphabet.
pub fn binarize<'a, M: TokenModel + ?Sized>(model: &'a M, codec: &'a TokenCodec) -> Result<Binarized<'a, M>> {
    if codec.alphabet_size() != model.alphabet_size() {
        return Err(Error::InvalidCodec(format!(
            "codec covers {} tokens, model has {}",
            codec.alphabet_size(),
            model.alphabet_size()
        )));
    }
    if codec.done_id() != model.done_id() {
        return Err(Error::InvalidCodec("codec and model disagree on the done token".into()));
    }
    Ok(Binarized { model, codec: Some(codec) })
}

impl<'a, M: TokenModel + ?Sized> Binarized<'a, M> {
    /// Uses a {0, 1, done} model directly.
    pub fn native(model: &'a M) -> Result<Self> {
        if model.alphabet_size() != 3 || model.done_id() != BIT_DONE {
            return Err(Error::InvalidCodec(
                "a codec is required unless the model's alphabet is {0, 1, done = 2}".into(),
            ));
        }
        Ok(Binarized { model, codec: None })
    }

    /// Native when the model is bit-valued, otherwise `codec` is required.
    pub fn new(model: &'a M, codec: Option<&'a TokenCodec>) -> Result<Self> {
        match codec {
            Some(c) => binarize(model, c),
            None => Self::native(model),
        }
    }

    pub fn model(&self) -> &'a M {
        self.model
    }

    pub fn codec(&self) -> Option<&'a TokenCodec> {
        self.codec
    }

    /// Bits representing `tokens`.
    pub fn encode(&self, tokens: &[TokenId]) -> Vec<bool> {
        match self.codec {
            Some(c) => c.encode(tokens),
            None => tokens.iter().take_while(|t| **t != BIT_DONE).map(|t| *t == BIT_ONE).collect(),
        }
    }
}

impl<M: TokenModel + ?Sized> BinaryModel for Binarized<'_, M> {
    fn cursor<'a>(&'a self, prompt: &'a [u8]) -> Result<Box<dyn BitCursor + 'a>> {
        Ok(match self.codec {
            Some(codec) => Box::new(CodedCursor::new(self.model, codec, prompt)?),
            None => Box::new(NativeCursor {
                model: self.model,
                prompt,
                tokens: Vec::new(),
                dist: None,
                state: State::Running,
            }),
        })
    }
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum State {
    Running,
    Done,
    Truncated,
}

impl State {
    fn step(self) -> Option<BitStep> {
        match self {
            State::Running => None,
            State::Done => Some(BitStep::Done),
            State::Truncated => Some(BitStep::Truncated),
        }
    }
}

fn finished() -> Error {
    Error::ModelContract("bit pushed after the response ended".into())
}

struct CodedCursor<'a, M: ?Sized> {
    model: &'a M,
    codec: &'a TokenCodec,
    prompt: &'a [u8],
    tokens: Vec<TokenId>,
    node: usize,
    /// Probability mass under each trie node for the current token distribution.
    mass: Vec<f64>,
    state: State,
}

impl<'a, M: TokenModel + ?Sized> CodedCursor<'a, M> {
    fn new(model: &'a M, codec: &'a TokenCodec, prompt: &'a [u8]) -> Result<Self> {
        let mut c = CodedCursor {
            model,
            codec,
            prompt,
            tokens: Vec::new(),
            node: 0,
            mass: vec![0.0; codec.node_count()],
            state: State::Running,
        };
        c.load_distribution()?;
        Ok(c)
    }

    fn load_distribution(&mut self) -> Result<()> {
        let dist = self.model.next_dist(self.prompt, &self.tokens);
        dist.validate(self.model.alphabet_size())?;
        let probs = dist.probs();
        // Children always have larger indices than their parents.
        for node in (0..self.mass.len()).rev() {
            self.mass[node] = match self.codec.node_leaf(node) {
                Some(t) => probs[t.index()],
                None => {
                    self.codec.node_children(node).iter().filter(|c| **c != NONE).map(|c| self.mass[*c as usize]).sum()
                }
            };
        }
        Ok(())
    }

    fn child_mass(&self, bit: usize) -> f64 {
        match self.codec.node_children(self.node)[bit] {
            NONE => 0.0,
            c => self.mass[c as usize],
        }
    }
}

impl<M: TokenModel + ?Sized> BitCursor for CodedCursor<'_, M> {
    fn step(&mut self) -> Result<BitStep> {
        if let Some(s) = self.state.step() {
            return Ok(s);
        }
        let (m0, m1) = (self.child_mass(0), self.child_mass(1));
        let total = m0 + m1;
        if total <= 0.0 {
            return Err(Error::CodecInvariant("partial codeword matches no possible token".into()));
        }
        Ok(BitStep::Bit(m1 / total))
    }

    fn push(&mut self, bit: bool) -> Result<()> {
        if self.state != State::Running {
            return Err(finished());
        }
        if self.child_mass(bit as usize) <= 0.0 {
            return Err(Error::ImpossiblePrefix);
        }
        self.node = self.codec.node_children(self.node)[bit as usize] as usize;
        if let Some(t) = self.codec.node_leaf(self.node) {
            self.tokens.push(t);
            self.node = 0;
            if t == self.model.done_id() {
                self.state = State::Done;
            } else if self.tokens.len() >= self.model.max_len() {
                self.state = State::Truncated;
            } else {
                self.load_distribution()?;
            }
        }
        Ok(())
    }

    fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }
}

struct NativeCursor<'a, M: ?Sized> {
    model: &'a M,
    prompt: &'a [u8],
    tokens: Vec<TokenId>,
    dist: Option<[f64; 3]>,
    state: State,
}

impl<M: TokenModel + ?Sized> NativeCursor<'_, M> {
    fn current(&mut self) -> Result<[f64; 3]> {
        if let Some(d) = self.dist {
            return Ok(d);
        }
        let dist = self.model.next_dist(self.prompt, &self.tokens);
        dist.validate(3)?;
        let p = dist.probs();
        let d = [p[0], p[1], p[2]];
        self.dist = Some(d);
        Ok(d)
    }
}

impl<M: TokenModel + ?Sized> BitCursor for NativeCursor<'_, M> {
    fn step(&mut self) -> Result<BitStep> {
        if let Some(s) = self.state.step() {
            return Ok(s);
        }
        if self.tokens.len() >= self.model.max_len() {
            self.state = State::Truncated;
            return Ok(BitStep::Truncated);
        }
        let [p0, p1, p_done] = self.current()?;
        if p_done > 0.0 {
            if p0 + p1 > 0.0 {
                return Err(Error::NotBitNative { position: self.tokens.len() + 1, p_done });
            }
            self.tokens.push(BIT_DONE);
            self.state = State::Done;
            return Ok(BitStep::Done);
        }
        Ok(BitStep::Bit(p1 / (p0 + p1)))
    }

    fn push(&mut self, bit: bool) -> Result<()> {
        if self.state != State::Running {
            return Err(finished());
        }
        let d = self.current()?;
        if d[bit as usize] <= 0.0 {
            return Err(Error::ImpossiblePrefix);
        }
        self.tokens.push(if bit { BIT_ONE } else { BIT_ZERO });
        self.dist = None;
        if self.tokens.len() >= self.model.max_len() {
            self.state = State::Truncated;
        }
        Ok(())
    }

    fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }
}
