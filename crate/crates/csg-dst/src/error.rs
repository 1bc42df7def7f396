use thiserror::Error;

#[derive(Error, Debug)]
pub enum CsgError {
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("unknown slot '{slot}' (not in corpus schema)")]
    Schema { slot: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CsgError>;
