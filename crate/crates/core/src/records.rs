//! Dataset records and encoder outputs.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// Image-side payload of a pair: a global embedding for curation, or a
/// pointer to a stored feature grid for training.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSource {
    Embedding(Vector),
    FeatureRef(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub caption: String,
    pub source: PairSource,
}

impl PairRecord {
    pub fn new(id: impl Into<String>, caption: impl Into<String>, source: PairSource) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("pair id must be non-empty"));
        }
        Ok(Self { id, caption: caption.into(), source })
    }

    pub fn embedding(&self) -> Option<&Vector> {
        match &self.source {
            PairSource::Embedding(v) => Some(v),
            PairSource::FeatureRef(_) => None,
        }
    }
}

/// Checks id uniqueness across a dataset.
pub fn ensure_unique_ids(records: &[PairRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::invalid(format!("duplicate pair id {:?}", r.id)));
        }
    }
    Ok(())
}

/// `[CLS]` vector plus the patch-token grid of one image. Register tokens are
/// never represented.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    cls: Vector,
    patches: Matrix,
    grid_h: usize,
    grid_w: usize,
}

impl FeatureGrid {
    pub fn new(cls: Vector, patches: Matrix, grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::invalid("grid shape must be positive"));
        }
        if patches.rows() != grid_h * grid_w {
            return Err(Error::DimMismatch { expected: grid_h * grid_w, got: patches.rows() });
        }
        if patches.cols() != cls.dim() {
            return Err(Error::DimMismatch { expected: cls.dim(), got: patches.cols() });
        }
        Ok(Self { cls, patches, grid_h, grid_w })
    }

    pub fn cls(&self) -> &Vector {
        &self.cls
    }

    pub fn patches(&self) -> &Matrix {
        &self.patches
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.cls.dim()
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f32] {
        self.patches.row(row * self.grid_w + col)
    }
}

/// Text-side embedding of width 2D: the first half is aligned with the
/// `[CLS]` descriptor, the second with the pooled patches.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    full: Vector,
}

impl TextEmbedding {
    pub fn new(full: Vector) -> Result<Self> {
        if !full.dim().is_multiple_of(2) {
            return Err(Error::invalid("text embedding width must be even"));
        }
        Ok(Self { full })
    }

    pub fn full(&self) -> &Vector {
        &self.full
    }

    pub fn half_dim(&self) -> usize {
        self.full.dim() / 2
    }

    pub fn cls_part(&self) -> &[f32] {
        &self.full.as_slice()[..self.half_dim()]
    }

    pub fn patch_part(&self) -> &[f32] {
        &self.full.as_slice()[self.half_dim()..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_is_validated() {
        let cls = Vector::new(vec![1.0, 0.0]).unwrap();
        let patches = Matrix::zeros(6, 2);
        assert!(FeatureGrid::new(cls.clone(), patches.clone(), 2, 3).is_ok());
        assert!(FeatureGrid::new(cls.clone(), patches, 3, 3).is_err());
        assert!(FeatureGrid::new(cls, Matrix::zeros(6, 3), 2, 3).is_err());
    }

    #[test]
    fn text_embedding_views() {
        let t = TextEmbedding::new(Vector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(t.cls_part(), &[1.0, 2.0]);
        assert_eq!(t.patch_part(), &[3.0, 4.0]);
        assert!(TextEmbedding::new(Vector::new(vec![1.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let v = || PairSource::Embedding(Vector::new(vec![1.0]).unwrap());
        let a = PairRecord::new("a", "x", v()).unwrap();
        let b = PairRecord::new("a", "y", v()).unwrap();
        assert!(ensure_unique_ids(&[a, b]).is_err());
        assert!(PairRecord::new("", "x", v()).is_err());
    }
}
