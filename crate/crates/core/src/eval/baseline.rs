//! One-vector-per-image baseline representation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::EmbeddingVector;

/// Mean of the normalized tile vectors of one strided row.
///
/// Inputs are normalized before averaging so tile norms do not weight the
/// mean. The result is not normalized; see [`baseline_storage_vector`].
pub fn baseline_image_vector<T: Scalar>(tiles: &[EmbeddingVector<T>]) -> Result<EmbeddingVector<T>> {
    let first = tiles.first().ok_or_else(|| Error::InvalidConfig("baseline vector needs at least one tile".into()))?;
    let dim = first.dim();
    let mut sum = vec![0f64; dim];
    for t in tiles {
        t.check_dim(dim)?;
        let n = t.normalize()?;
        sum.iter_mut().zip(n.as_slice()).for_each(|(s, v)| *s += v.widen());
    }
    let count = tiles.len() as f64;
    Ok(EmbeddingVector::new(sum.into_iter().map(|s| T::from_f64_lossy(s / count)).collect()))
}

/// The unit-norm vector stored for an image.
pub fn baseline_storage_vector<T: Scalar>(tiles: &[EmbeddingVector<T>]) -> Result<EmbeddingVector<T>> {
    baseline_image_vector(tiles)?.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::from_f64(xs)
    }

    #[test]
    fn single_tile_is_its_normalized_vector() {
        let out = baseline_image_vector(&[v(&[3.0, 4.0])]).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((out.as_slice()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn identical_tiles() {
        let a = v(&[0.6, 0.8]);
        let out = baseline_image_vector(&[a.clone(), a.clone()]).unwrap();
        assert!(out.as_slice().iter().zip(a.as_slice()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_tiles_average_to_diagonal() {
        let out = baseline_image_vector(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.5]);
        let stored = baseline_storage_vector(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(stored.as_slice().iter().all(|x| (x - h).abs() < 1e-12));
    }

    #[test]
    fn normalizes_before_averaging() {
        // a long vector must not dominate
        let out = baseline_image_vector(&[v(&[10.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(baseline_image_vector::<f64>(&[]).is_err());
    }
}
