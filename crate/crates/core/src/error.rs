use std::io;

use thiserror::Error;

use crate::minilang::ActionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at token {index}: {message}")]
    Syntax { index: usize, message: String },

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),

    #[error("unknown symbol: {0}")]
    UnknownSymbol(String),

    #[error("illegal action {action} at step {step}")]
    IllegalAction { step: usize, action: ActionId },

    #[error("program space has {count} programs, above the bound of {bound}")]
    CapacityExceeded { count: u128, bound: usize },

    #[error("type error: {0}")]
    Type(String),

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("knowledge base line {line}: {message}")]
    KbFormat { line: usize, message: String },

    #[error("corpus line {line}: {message}")]
    CorpusFormat { line: usize, message: String },

    #[error("metrics line {line}: {message}")]
    MetricsFormat { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("domain spec: {0}")]
    Spec(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
