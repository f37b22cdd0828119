use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // WAV
    #[error("malformed WAV header: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: format tag {format_tag}, {bits} bits per sample")]
    UnsupportedEncoding { format_tag: u16, bits: u16 },
    #[error("unsupported channel count {0} (mono required)")]
    UnsupportedChannels(u16),
    #[error("unsupported sample rate {0} Hz (16000 required)")]
    UnsupportedSampleRate(u32),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("empty span")]
    EmptySpan,
    #[error("span {start}..{end} out of bounds for {len} samples")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },

    // manifests and text formats
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    // augmentation
    #[error("zero-power signal: {0}")]
    ZeroPower(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample rate mismatch: {0} vs {1}")]
    RateMismatch(u32, u32),
    #[error("missing noise source for tag {0:?}")]
    MissingNoiseTag(String),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    // features
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("dimension overflow in header")]
    DimensionOverflow,
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty frame sequence")]
    EmptyFrames,
    #[error("layer index {index} out of range (0..={max})")]
    LayerOutOfRange { index: usize, max: usize },

    // substrate
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a backward pass")]
    TapeReused,

    // quantizer
    #[error("need at least K={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("fewer than K={k} distinct points")]
    DegenerateData { k: usize },
    #[error("dimension mismatch: features have D={got}, codebook has D={expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("features from layer {got} cannot be assigned with a codebook trained on layer {expected}")]
    LayerMismatch { expected: usize, got: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    // denoiser
    #[error("target of length {target_len} needs at least {required} frames, got {frames}")]
    TargetTooLong { target_len: usize, required: usize, frames: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("model has no decoder")]
    MissingDecoder,
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("missing target for utterance {0:?}")]
    MissingTarget(String),
    #[error("numerical failure: {0}")]
    Numerical(String),

    // metrics
    #[error("empty reference")]
    EmptyReference,
    #[error("unknown condition label: {0}")]
    UnknownCondition(String),
    #[error("binomial error bar needs n >= 1")]
    ZeroCount,

    // pipeline
    #[error("config error at {field}: {msg}")]
    Config { field: String, msg: String },
    #[error("stage {stage}: missing upstream artifact {path}")]
    MissingArtifact { stage: String, path: PathBuf },
    #[error("stage {stage}: stale input {path} (upstream changed, rerun {producer})")]
    StaleInput {
        stage: String,
        path: PathBuf,
        producer: String,
    },
    #[error("work directory is locked by another invocation ({0})")]
    Locked(PathBuf),
    #[error("unknown ablation variant {0:?}")]
    UnknownVariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
