use thiserror::Error;

use crate::model::Response;
use crate::prf::SchemeId;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model contract violated: {0}")]
    ModelContract(String),

    #[error("response is impossible under the model (token {position} has probability 0)")]
    ImpossibleResponse { position: usize },

    #[error("prefix is impossible under the model")]
    ImpossiblePrefix,

    #[error("model is not bit-native (p(done) = {p_done} at bit {position}); supply a codec")]
    NotBitNative { position: usize, p_done: f64 },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("corpus byte {0:#04x} is not in the alphabet")]
    AlphabetMismatch(u8),

    #[error("invalid codec: {0}")]
    InvalidCodec(String),

    #[error("codec invariant violated: {0}")]
    CodecInvariant(String),

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("key belongs to the {found} scheme, but the {expected} scheme was requested")]
    SchemeMismatch { expected: SchemeId, found: SchemeId },

    #[error("input too short: need at least {need} bits, got {got}")]
    InputTooShort { need: usize, got: usize },

    #[error("empty detection window")]
    EmptyWindow,

    /// The simple scheme's resampling loop hit its cap. `last` is the final
    /// sample, which carries no watermark.
    #[error("gave up after {attempts} sampling attempts")]
    BudgetExceeded { attempts: u64, last: Box<Response> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
