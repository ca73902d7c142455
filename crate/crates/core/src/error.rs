use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Parse failures for the binary embedding format. Every variant carries the
/// byte offset at which decoding stopped.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic at offset {offset}: expected \"EMB1\", found {found:?}")]
    BadMagic { offset: usize, found: Vec<u8> },
    #[error("truncated header at offset {offset}: need {needed} bytes, have {available}")]
    TruncatedHeader {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("header at offset {offset} declares an empty matrix ({rows}x{dim})")]
    EmptyShape { offset: usize, rows: u32, dim: u32 },
    #[error("truncated payload at offset {offset}: header declares {rows}x{dim} ({expected} bytes incl. flag), only {available} present")]
    TruncatedPayload {
        offset: usize,
        rows: u32,
        dim: u32,
        expected: usize,
        available: usize,
    },
    #[error("{extra} trailing bytes at offset {offset} after a {rows}x{dim} payload")]
    TrailingBytes {
        offset: usize,
        rows: u32,
        dim: u32,
        extra: usize,
    },
    #[error("non-finite value at offset {offset}")]
    NonFinite { offset: usize },
    #[error("unknown flag bits {flags:#04x} at offset {offset}")]
    UnknownFlags { offset: usize, flags: u8 },
    #[error("row {row} is flagged normalized but has norm {norm}")]
    NotNormalized { row: usize, norm: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("zero-norm row {row} in {matrix}")]
    ZeroRow { matrix: &'static str, row: usize },
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding format: {0}")]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("corpora are not aligned: missing from generated {missing_in_generated:?}, missing from reference {missing_in_reference:?}")]
    IdMismatch {
        missing_in_generated: Vec<String>,
        missing_in_reference: Vec<String>,
    },
    #[error("mask span [{start}, {end}) out of range for {len} tokens")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
