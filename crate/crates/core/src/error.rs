use thiserror::Error;

/// Errors raised by the compression engine and its stream tooling.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("data length {actual} does not match h*w*c = {expected}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("frame has a zero extent (h={h}, w={w}, c={c})")]
    ZeroExtent { h: usize, w: usize, c: usize },

    #[error("pooling window {window} does not divide {axis} extent {extent}")]
    PoolingDivisibility {
        axis: &'static str,
        extent: usize,
        window: usize,
    },

    #[error("predicted IoU {0} outside [0, 1]")]
    IouOutOfRange(f32),

    #[error("frames disagree on shape: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("no motion frames to score")]
    EmptyMotionSet,

    #[error("strategy requires a GT frame but the bank has none")]
    MissingGtFrame,

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("a prompted frame was already admitted (frame {existing})")]
    GtAlreadySet { existing: usize },

    #[error("prompted frame {0} arrived after motion frames")]
    PromptNotFirst(usize),

    #[error("frame {got} is not newer than the latest banked frame {latest}")]
    FrameOrder { latest: usize, got: usize },

    #[error("frame dims {actual:?} differ from the pinned stream dims {expected:?}")]
    DimsMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("position encoding needs an even channel count >= 6, got {0}")]
    ChannelsTooSmall(usize),

    #[error("cross-attention over an empty memory")]
    EmptyMemory,

    #[error("query has {query} channels but memory has {memory}")]
    ChannelMismatch { query: usize, memory: usize },

    #[error("blob of radius {radius} does not fit a {rows}x{cols} cell grid")]
    BlobTooLarge {
        radius: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed stream: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
