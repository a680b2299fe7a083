use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum KerpleError {
    /// A kernel parameter lies outside its constraint domain.
    #[error("parameter {name} = {value} of {variant} kernel is outside its domain ({domain})")]
    Domain {
        variant: &'static str,
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    /// An operation was applied to a kernel variant that does not support it.
    #[error("{op} is not defined for the {variant} kernel")]
    Usage { op: &'static str, variant: &'static str },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shift search gave up at c = {last_constant:e} (min eigenvalue {min_eigenvalue:e}); kernel is probably not CPD on this grid")]
    ShiftSearchExhausted { last_constant: f64, min_eigenvalue: f64 },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("corpus of {len} tokens is too short; need at least {needed}")]
    CorpusTooShort { len: usize, needed: usize },
    #[error("non-finite activations in layer {layer}: {what}")]
    NonFiniteActivation { layer: usize, what: &'static str },
    #[error("stale activation cache: {0}")]
    StaleCache(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("no checkpoint for variant {variant}, seed {seed}")]
    MissingCheckpoint { variant: String, seed: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, KerpleError>;
