use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} out of range: {value}")]
    FieldRange { field: &'static str, value: u32 },

    #[error("unsupported mantissa precision {0} (expected one of 0, 1, 3, 7)")]
    Precision(u8),

    #[error("invalid block size {0}")]
    BlockSize(usize),

    #[error("item {index} does not fit in {width} bits")]
    PackOverflow { index: usize, width: u32 },

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("input tensor is empty")]
    EmptyTensor,

    #[error("symbol {0} has zero frequency in the table")]
    ZeroFrequency(u8),

    #[error("frequency table: {0}")]
    Table(String),

    #[error("ANS stream: {0}")]
    Stream(String),

    #[error("non-finite value at element {0}")]
    NonFinite(usize),

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    Version(u8),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated input: {0}")]
    Truncated(&'static str),

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
