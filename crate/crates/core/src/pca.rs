//! Two-component PCA projection for quick looks at a head's activations.

use alloc::vec::Vec;

use crate::linalg::{symmetric_eigen, Matrix};
use crate::{Error, Result};

/// Loadings smaller than this count as zero for the sign convention.
const SIGN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    /// `n × 2` projected coordinates.
    pub projected: Matrix,
    /// Component loadings, one per column of the input.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

/// Projects the mean-centered rows of `x` onto the two leading principal
/// components. Each component is flipped so that its first nonzero loading
/// is positive; with fewer than two input columns the missing component is
/// all zeros.
pub fn pca_2d(x: &Matrix) -> Result<Pca2> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::Empty("pca needs at least two rows"));
    }
    if d == 0 {
        return Err(Error::Empty("feature dimension"));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("pca input"));
    }
    let means = x.column_means();
    let mut centered = x.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let mut cov = centered.gram();
    let scale = 1.0 / (n - 1) as f64;
    cov.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    let (values, vectors) = symmetric_eigen(&cov)?;

    let mut components: [Vec<f64>; 2] = [alloc::vec![0.0; d], alloc::vec![0.0; d]];
    let mut explained = [0.0; 2];
    for (c, comp) in components.iter_mut().enumerate().take(d.min(2)) {
        for (k, slot) in comp.iter_mut().enumerate() {
            *slot = vectors.get(k, c);
        }
        if let Some(first) = comp.iter().find(|v| v.abs() > SIGN_TOL) {
            if *first < 0.0 {
                comp.iter_mut().for_each(|v| *v = -*v);
            }
        }
        explained[c] = values[c].max(0.0);
    }

    let mut projected = Matrix::zeros(n, 2);
    for i in 0..n {
        let r = centered.row(i);
        for (c, comp) in components.iter().enumerate() {
            projected.set(i, c, crate::linalg::dot(r, comp));
        }
    }
    Ok(Pca2 {
        projected,
        components,
        explained_variance: explained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_project_to_origin() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]; 4]).unwrap();
        let p = pca_2d(&x).unwrap();
        assert!(p.projected.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rank_one_has_flat_second_axis() {
        let x = Matrix::from_rows(&[[1.0, 2.0, -1.0], [2.0, 4.0, -2.0], [-3.0, -6.0, 3.0], [0.5, 1.0, -0.5]])
            .unwrap();
        let p = pca_2d(&x).unwrap();
        for i in 0..4 {
            assert!(p.projected.get(i, 1).abs() < 1e-9);
        }
        assert!(p.components[0][0] > 0.0);
    }

    #[test]
    fn needs_two_rows() {
        assert!(pca_2d(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).is_err());
    }

    #[test]
    fn one_column_input() {
        let x = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let p = pca_2d(&x).unwrap();
        assert_eq!(p.projected.get(0, 0), -1.0);
        assert_eq!(p.projected.get(1, 1), 0.0);
    }
}
