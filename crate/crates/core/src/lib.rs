pub mod attack;
pub mod cli;
pub mod codec;
pub mod error;
pub mod experiments;
pub mod interchange;
pub mod model;
pub mod prf;
pub mod scheme;
pub mod score;
pub mod stats;

pub use error::{Error, Result};
