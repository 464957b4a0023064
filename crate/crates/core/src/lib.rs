//! Aligning a from-scratch text encoder to a frozen vision encoder, with
//! two-sided data curation and open-vocabulary inference.
// Index loops mirror the maths in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod alignment;
pub mod clustering;
pub mod curation;
pub mod encoder;
pub mod error;
pub mod fixture;
pub mod formats;
pub mod highres;
pub mod inference;
pub mod analysis;
pub mod records;
pub mod segmap;
pub mod tensor;
pub mod verify;

pub use error::{Error, ErrorClass, FormatError, Result};
pub use records::{FeatureGrid, PairRecord, PairSource, TextEmbedding};
pub use segmap::SegmentationMap;
pub use tensor::{cosine, l2_normalize, Matrix, Normalized, Vector};
