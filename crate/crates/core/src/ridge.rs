//! Closed-form ridge regression probe.

use alloc::vec::Vec;

use crate::linalg::{cholesky, cholesky_solve, dot, Matrix};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RidgeProbe {
    /// One weight per input column, plus a trailing intercept when
    /// `used_bias` is set.
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub used_bias: bool,
}

impl RidgeProbe {
    /// Input width the probe expects.
    pub fn input_dim(&self) -> usize {
        self.weights.len() - usize::from(self.used_bias)
    }

    /// Unclipped linear response for one row.
    pub fn raw_response(&self, x: &[f64]) -> Result<f64> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let mut v = dot(&self.weights[..d], x);
        if self.used_bias {
            v += self.weights[d];
        }
        Ok(v)
    }

    /// `clip(Xw, 0, 1)` per row.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        x.row_iter()
            .map(|r| self.raw_response(r).map(clip_unit))
            .collect()
    }
}

#[inline]
pub(crate) fn clip_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Solves `(XᵀX + λI) w = Xᵀy` by Cholesky factorization.
///
/// With `add_bias` a constant-one column is appended to `X` first; the
/// intercept is penalized like every other weight.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64, add_bias: bool) -> Result<RidgeProbe> {
    if x.cols() == 0 {
        return Err(Error::Empty("feature dimension"));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("training rows"));
    }
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(alloc::format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("activations"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    let biased;
    let design = if add_bias {
        biased = x.with_ones_column();
        &biased
    } else {
        x
    };
    let mut a = design.gram();
    a.add_diagonal(lambda);
    let b = design.t_mul_vec(y)?;
    let l = cholesky(&a)?;
    let weights = cholesky_solve(&l, &b)?;
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(Error::NonFinite("ridge weights"));
    }
    Ok(RidgeProbe {
        weights,
        lambda,
        used_bias: add_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_design_shrinks_targets() {
        let x = Matrix::identity(3);
        let y = [1.0, 0.0, 0.5];
        let p = fit_ridge(&x, &y, 0.01, false).unwrap();
        for (w, t) in p.weights.iter().zip(y) {
            assert!((w - t / 1.01).abs() < 1e-12);
        }
        assert!((p.weights[0] - 0.990099).abs() < 1e-6);
        assert!((p.weights[2] - 0.495050).abs() < 1e-6);
        let pred = p.predict(&x).unwrap();
        for (a, t) in pred.iter().zip(y) {
            assert!((a - t / 1.01).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_design_gives_zero_weights() {
        let x = Matrix::zeros(4, 3);
        let p = fit_ridge(&x, &[0.1, 0.2, 0.3, 0.4], 0.01, false).unwrap();
        assert!(p.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn predictions_are_clipped() {
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let hi = RidgeProbe {
            weights: vec![2.0],
            lambda: 0.01,
            used_bias: false,
        };
        assert_eq!(hi.predict(&x).unwrap(), vec![1.0]);
        let lo = RidgeProbe {
            weights: vec![-1.0],
            ..hi.clone()
        };
        assert_eq!(lo.predict(&x).unwrap(), vec![0.0]);
        assert!(hi.predict(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn bias_column_fits_intercept() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let y = [0.2, 0.3, 0.4, 0.5];
        let p = fit_ridge(&x, &y, 1e-9, true).unwrap();
        assert_eq!(p.input_dim(), 1);
        assert!((p.weights[0] - 0.1).abs() < 1e-6);
        assert!((p.weights[1] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_ridge(&Matrix::zeros(3, 0), &[0.0; 3], 0.01, false).is_err());
        let mut x = Matrix::zeros(2, 2);
        x.set(0, 0, f64::NAN);
        assert_eq!(
            fit_ridge(&x, &[0.0; 2], 0.01, false),
            Err(Error::NonFinite("activations"))
        );
        assert!(fit_ridge(&Matrix::zeros(2, 2), &[0.0; 2], 0.0, false).is_err());
    }
}
