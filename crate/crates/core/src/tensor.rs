//! Dense f32 containers shared by every stage of the pipeline.

use crate::error::{Error, Result};

/// Norm below which a vector is considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// A finite f32 vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f32>,
}

impl Vector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("vector must have positive dimension"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("vector contains non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f32>) -> Self {
        debug_assert!(!data.is_empty());
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![0.0; dim.max(1)] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }
}

/// Row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::invalid("matrix must have at least one column"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch { expected: rows * cols, got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("matrix contains non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// Result of [`l2_normalize`]; `degenerate` is set when the input norm was
/// below [`DEGENERATE_NORM`] and the vector was returned unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub vector: Vector,
    pub degenerate: bool,
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Normalize to unit length; near-zero vectors are flagged, not rejected.
pub fn l2_normalize(v: &Vector) -> Normalized {
    let n = v.norm();
    if n < DEGENERATE_NORM {
        return Normalized { vector: v.clone(), degenerate: true };
    }
    let data = v.as_slice().iter().map(|&x| (x as f64 / n) as f32).collect();
    Normalized { vector: Vector::from_vec_unchecked(data), degenerate: false }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Err(Error::Degenerate);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f32]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = l2_normalize(&v(&[3.0, 4.0]));
        assert!(!n.degenerate);
        assert!((n.vector.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((n.vector.as_slice()[1] - 0.8).abs() < 1e-7);

        let z = l2_normalize(&v(&[0.0, 0.0]));
        assert!(z.degenerate);
        assert_eq!(z.vector.as_slice(), &[0.0, 0.0]);

        let h = l2_normalize(&v(&[1.0; 4]));
        assert_eq!(h.vector.as_slice(), &[0.5; 4]);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), -1.0);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(Error::Degenerate)));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f32::NAN]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f32::INFINITY]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn normalized_has_unit_norm(data in prop::collection::vec(-1e3f32..1e3, 1..32)) {
            let x = Vector::new(data).unwrap();
            prop_assume!(x.norm() >= 1e-12);
            let n = l2_normalize(&x);
            prop_assert!(!n.degenerate);
            prop_assert!((n.vector.norm() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            pair in (1usize..16).prop_flat_map(|d| (
                prop::collection::vec(-10f32..10.0, d),
                prop::collection::vec(-10f32..10.0, d),
            )),
            alpha in 0.01f32..100.0,
        ) {
            let (a, b) = (Vector::new(pair.0).unwrap(), Vector::new(pair.1).unwrap());
            prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            let scaled = Vector::new(a.as_slice().iter().map(|x| x * alpha).collect()).unwrap();
            prop_assert!((cosine(&scaled, &b).unwrap() - ab).abs() < 1e-5);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
