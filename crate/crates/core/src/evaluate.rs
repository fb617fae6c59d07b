//! Fit one probe on training activations and score it on a test prompt.

use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::probe::{FitParams, Probe};
use crate::qwk::qwk;
use crate::scale::TraitRange;
use crate::{Error, Result};

/// Fits on `(train_x, train_y)` with normalized targets, predicts the test
/// rows, maps predictions back onto `range` and returns the QWK against the
/// raw test labels.
pub fn evaluate_head(
    train_x: &Matrix,
    train_y: &[f64],
    test_x: &Matrix,
    test_labels: &[i64],
    range: &TraitRange,
    params: &FitParams,
) -> Result<(Probe, f64)> {
    if test_x.rows() != test_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: test_x.rows(),
            got: test_labels.len(),
        });
    }
    if let Some(&bad) = train_y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::PredictionOutOfUnit(bad));
    }
    let probe = Probe::fit(train_x, train_y, params)?;
    let score = score_probe(&probe, test_x, test_labels, range)?;
    Ok((probe, score))
}

/// QWK of an already fitted probe.
pub fn score_probe(probe: &Probe, x: &Matrix, labels: &[i64], range: &TraitRange) -> Result<f64> {
    let predicted = probe
        .predict(x)?
        .into_iter()
        .map(|p| range.denormalize_and_round(p))
        .collect::<Result<Vec<_>>>()?;
    qwk(labels, &predicted, range)
}
