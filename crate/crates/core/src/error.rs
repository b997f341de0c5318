//! Structured errors for tensor and graph operations.

use alloc::string::String;
use core::fmt;

pub type CoreResult<T> = Result<T, CoreError>;

/// The four axes of a rank-4 tensor, used to name the offending axis in
/// dimension errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Batch => write!(f, "batch"),
            Axis::Channel => write!(f, "channel"),
            Axis::Height => write!(f, "height"),
            Axis::Width => write!(f, "width"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two tensors disagree on one axis.
    DimMismatch {
        op: &'static str,
        axis: Axis,
        expected: usize,
        got: usize,
    },
    /// Data length does not match the product of the extents.
    ElementCount { expected: usize, got: usize },
    /// An operation required a non-empty spatial extent.
    EmptySpatial { op: &'static str },
    /// FFT extent outside the supported set (every extent >= 1 is supported).
    UnsupportedFftSize { axis: Axis, size: usize },
    /// Stored half-spectrum width is inconsistent with the claimed source width.
    InconsistentSourceWidth { source_width: usize, stored: usize },
    /// backward() was called on a non-scalar node.
    NonScalarLoss { shape: [usize; 4] },
    /// Only the [N,C,1,1] x [N,C,H,W] broadcast is supported.
    BroadcastUnsupported {
        lhs: [usize; 4],
        rhs: [usize; 4],
    },
    /// A named parameter was registered twice on one tape.
    DuplicateParam { name: String },
    /// Invalid argument to an operation.
    InvalidArg { op: &'static str, what: String },
    /// Training aborted: the loss became non-finite.
    NonFiniteLoss { step: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DimMismatch {
                op,
                axis,
                expected,
                got,
            } => write!(f, "{op}: {axis} axis mismatch (expected {expected}, got {got})"),
            CoreError::ElementCount { expected, got } => {
                write!(f, "data length {got} does not match shape ({expected} elements)")
            }
            CoreError::EmptySpatial { op } => write!(f, "{op}: empty spatial extent"),
            CoreError::UnsupportedFftSize { axis, size } => write!(
                f,
                "fft: unsupported {axis} extent {size}; supported sizes are all extents >= 1"
            ),
            CoreError::InconsistentSourceWidth { source_width, stored } => write!(
                f,
                "irfft2: source_width {source_width} inconsistent with stored half-width {stored}"
            ),
            CoreError::NonScalarLoss { shape } => write!(
                f,
                "backward: loss must be scalar, got shape [{}, {}, {}, {}]",
                shape[0], shape[1], shape[2], shape[3]
            ),
            CoreError::BroadcastUnsupported { lhs, rhs } => write!(
                f,
                "mul: unsupported broadcast {lhs:?} x {rhs:?}; only [N,C,1,1] against [N,C,H,W] is allowed"
            ),
            CoreError::DuplicateParam { name } => {
                write!(f, "parameter name registered twice on one tape: {name}")
            }
            CoreError::InvalidArg { op, what } => write!(f, "{op}: {what}"),
            CoreError::NonFiniteLoss { step } => {
                write!(f, "training aborted: non-finite loss at step {step}")
            }
        }
    }
}

impl core::error::Error for CoreError {}
