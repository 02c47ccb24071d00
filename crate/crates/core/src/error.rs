//! Library-wide error type.
//!
//! One enum covers every failure the library reports, from tensor shape
//! mismatches up to training divergence, so callers (CLI, FFI) can map the
//! whole surface onto exit codes / status codes in one place.

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every error the library can produce.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// Two tensors that must agree elementwise (or along a contracted axis) do not.
    #[error("{op}: shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A tensor constructor was given a data buffer whose length does not match the shape.
    #[error("tensor shape {shape:?} implies {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    /// The sqrt product wrapper was fed a negative value without a gate in front of it.
    #[error("{op}: negative input {value} at flat index {index}; the sqrt wrapper needs non-negative inputs (gate signed data with relu)")]
    NegativeInput {
        op: &'static str,
        index: usize,
        value: f64,
    },

    /// Convolution/pooling geometry that yields no output, or an argument outside its domain.
    #[error("{op}: invalid geometry: {msg}")]
    InvalidGeometry { op: &'static str, msg: String },

    /// A class label at or beyond the class count.
    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        sample: usize,
    },

    /// A fusion spec with no active terms.
    #[error("fusion spec selects no terms; enable at least one of sum/max/prod")]
    EmptySpec,

    /// A surface grid with no points.
    #[error("surface grid is empty: {msg}")]
    EmptyGrid { msg: String },

    /// The branch transform only applies to odd kernel sizes.
    #[error("branch transform requires an odd kernel, got {0}")]
    EvenKernel(usize),

    /// Training hit a non-finite loss and stopped.
    #[error("training diverged: non-finite loss at iteration {iter}")]
    DivergedLoss { iter: u64 },

    /// A parameter gradient went non-finite during an update.
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    /// The scalar loss under gradient check evaluated to NaN/Inf.
    #[error("non-finite loss during gradient check ({context})")]
    NonFiniteLoss { context: String },

    /// An evaluation split with zero samples.
    #[error("evaluation split is empty")]
    EmptySplit,

    /// A channel whose standard deviation is too small to standardize by.
    #[error("channel {channel} has near-zero standard deviation ({std:e}); cannot standardize")]
    ZeroVariance { channel: usize, std: f64 },

    /// A dataset file whose size is not a whole number of records.
    #[error("{path}: truncated or corrupt file: {len} bytes is not a positive multiple of the {record}-byte record")]
    TruncatedFile {
        path: String,
        len: u64,
        record: usize,
    },

    /// An argument outside its documented domain (non-positive eps, bad flag value, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A config file or config text that does not parse.
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
