use std::io;

use thiserror::Error;

/// Every failure the library reports. The short tag in each message is stable
/// and used by the CLI and tests to classify errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-mask: no voxel is set in the mask")]
    EmptyMask,
    #[error("odd-dims: dims {0:?} must be even in every axis")]
    OddDims([usize; 3]),
    #[error("shape-mismatch: {0}")]
    Shape(String),
    #[error("index-out-of-range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),
    #[error("bad-header: {0}")]
    BadHeader(String),
    #[error("bad-magic: {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported-datatype: NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("dims-overflow: dims {0:?} do not fit in a signed 16-bit header field")]
    DimsOverflow([usize; 3]),
    #[error("checkpoint-truncated: {0}")]
    CheckpointTruncated(String),
    #[error("checkpoint-version: found version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint-mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("missing-grad: parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("degenerate-range: data range of the ground truth is zero")]
    DegenerateRange,
    #[error("diverged: non-finite loss at step {0}")]
    Diverged(u64),
    #[error("solver-diverged: non-finite state after step {0}")]
    SolverDiverged(usize),
    #[error("phantom: {0}")]
    Phantom(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
