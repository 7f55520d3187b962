use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("log of non-positive value {0}")]
    Domain(f64),
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },
    #[error("reduction over an empty axis set")]
    EmptyReduction,
    #[error("conv2d: kernel {kernel:?} larger than input {input:?}")]
    KernelTooLarge {
        kernel: (usize, usize),
        input: (usize, usize),
    },
    #[error("output padding {padding} must be below stride {stride}")]
    OutputPadding { padding: usize, stride: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid attention mask: {0}")]
    InvalidMask(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("grid {height}x{width} too small for the encoder chain")]
    GridTooSmall { height: usize, width: usize },
    #[error("{channel} level {level} out of range 0..={max}")]
    LevelOutOfRange { channel: &'static str, level: u8, max: u8 },
    #[error("geometry mismatch: expected {expected:?}, got {actual:?}")]
    GeometryMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("gap in {airport} series between t={before} and t={after}")]
    SeriesGap {
        airport: &'static str,
        before: usize,
        after: usize,
    },
    #[error("split boundary {boundary} outside record range {first}..={last}")]
    BoundaryOutOfRange { boundary: usize, first: usize, last: usize },
    #[error("insufficient history for anchor {anchor}: {reason}")]
    InsufficientHistory { anchor: usize, reason: &'static str },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}
