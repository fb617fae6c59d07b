//! Quadratic weighted kappa.

use alloc::vec;

use crate::scale::TraitRange;
use crate::{Error, Result};

/// Agreement between two integer ratings on the scale of `range`.
///
/// `κ = 1 − Σ wᵢⱼ Oᵢⱼ / Σ wᵢⱼ Eᵢⱼ` with `wᵢⱼ = (i − j)² / (R − 1)²`, `O` the
/// joint count matrix and `E` the outer product of the two marginal
/// histograms divided by `n`. When `Σ wE = 0` both raters used one and the
/// same score for every item, which is perfect agreement.
pub fn qwk(human: &[i64], predicted: &[i64], range: &TraitRange) -> Result<f64> {
    if human.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: human.len(),
            got: predicted.len(),
        });
    }
    if human.is_empty() {
        return Err(Error::Empty("ratings"));
    }
    range.validate()?;
    let r = range.levels();
    let idx = |s: i64| -> Result<usize> {
        range.check(s)?;
        Ok((s - range.min_score) as usize)
    };
    let mut observed = vec![0.0f64; r * r];
    let mut hist_h = vec![0.0f64; r];
    let mut hist_p = vec![0.0f64; r];
    for (&h, &p) in human.iter().zip(predicted) {
        let (i, j) = (idx(h)?, idx(p)?);
        observed[i * r + j] += 1.0;
        hist_h[i] += 1.0;
        hist_p[j] += 1.0;
    }
    let n = human.len() as f64;
    let denom_w = ((r - 1) * (r - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..r {
        for j in 0..r {
            let d = i as f64 - j as f64;
            let w = d * d / denom_w;
            num += w * observed[i * r + j];
            den += w * hist_h[i] * hist_p[j] / n;
        }
    }
    if den == 0.0 {
        return if num == 0.0 {
            Ok(1.0)
        } else {
            Err(Error::UndefinedKappa)
        };
    }
    Ok(1.0 - num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(lo: i64, hi: i64) -> TraitRange {
        TraitRange::new(1, "t", lo, hi).unwrap()
    }

    #[test]
    fn perfect_agreement() {
        let x = [2, 5, 7, 12, 3];
        assert_eq!(qwk(&x, &x, &range(2, 12)).unwrap(), 1.0);
    }

    #[test]
    fn complete_reversal_is_minus_one() {
        let r = qwk(&[0, 0, 1, 1], &[1, 1, 0, 0], &range(0, 1)).unwrap();
        assert_eq!(r, -1.0);
    }

    #[test]
    fn one_disagreement_is_zero() {
        assert_eq!(qwk(&[0, 1], &[0, 0], &range(0, 1)).unwrap(), 0.0);
    }

    #[test]
    fn constant_identical_is_one() {
        assert_eq!(qwk(&[3, 3, 3], &[3, 3, 3], &range(0, 4)).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert!(qwk(&[0, 1], &[0], &range(0, 1)).is_err());
        assert!(qwk(&[0, 2], &[0, 1], &range(0, 1)).is_err());
        assert!(qwk(&[], &[], &range(0, 1)).is_err());
        let degenerate = TraitRange {
            prompt_id: 1,
            trait_name: "t".into(),
            min_score: 1,
            max_score: 1,
        };
        assert_eq!(
            qwk(&[1], &[1], &degenerate),
            Err(Error::DegenerateRange { min: 1, max: 1 })
        );
    }
}
