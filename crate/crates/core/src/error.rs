//! Unified error type for the engine.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Non-integer token or otherwise malformed interaction line.
    Parse { line: usize, message: String },
    /// Interaction file contained no usable sequences.
    EmptyDataset,
    /// A sequence was shorter than the leave-one-out protocol allows.
    SequenceTooShort { user: String, len: usize },
    /// Operand shapes incompatible with the requested tensor operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Vector norm at or below the norm guard where a direction is required.
    DegenerateVector { op: &'static str },
    /// `backward` called on a non-scalar node.
    NonScalarLoss { shape: Vec<usize> },
    /// Prefix contained no non-padding positions.
    AllPaddingPrefix,
    /// Future-item window was empty.
    EmptyWindow,
    /// A hyperparameter was outside its admissible range.
    Config { name: &'static str, message: String },
    /// Soft label or target referenced an item outside [1, N].
    ItemOutOfCatalog { item: u32, catalog: usize },
    /// Contrastive batches need at least two samples.
    BatchTooSmall { size: usize },
    /// Uniformity needs at least two vectors.
    TooFewVectors { got: usize },
    /// A loss evaluated to NaN or infinity; carries the offending location.
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    /// Checkpoint or state blob did not match the expected tensor layout.
    BadCheckpoint { message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { line, message } => write!(f, "parse error on line {line}: {message}"),
            Error::EmptyDataset => write!(f, "no usable interaction sequences in input"),
            Error::SequenceTooShort { user, len } => {
                write!(f, "sequence for user {user} has length {len}, need >= 3")
            }
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::DegenerateVector { op } => {
                write!(f, "{op}: vector norm below 1e-12, no direction defined")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::AllPaddingPrefix => write!(f, "prefix contains only padding"),
            Error::EmptyWindow => write!(f, "future-item window is empty"),
            Error::Config { name, message } => write!(f, "config error for `{name}`: {message}"),
            Error::ItemOutOfCatalog { item, catalog } => {
                write!(f, "item id {item} outside catalog of size {catalog}")
            }
            Error::BatchTooSmall { size } => {
                write!(f, "contrastive batch needs >= 2 samples, got {size}")
            }
            Error::TooFewVectors { got } => {
                write!(f, "uniformity needs >= 2 vectors, got {got}")
            }
            Error::NonFiniteLoss {
                epoch,
                batch,
                detail,
            } => write!(
                f,
                "non-finite loss at epoch {epoch}, batch {batch}: {detail}"
            ),
            Error::BadCheckpoint { message } => write!(f, "bad checkpoint: {message}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
