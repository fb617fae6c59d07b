//! Concept directions from group mean differences, and cosine similarity
//! between them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, norm2, Matrix};
use crate::scale::TraitRange;
use crate::{Error, Result};

const DEGENERATE_NORM: f64 = 1e-12;

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm2(&v);
    // Negated so a NaN norm also counts as degenerate.
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateDirection);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Unit vector along `mean(pos) − mean(neg)`.
pub fn binary_direction(pos: &Matrix, neg: &Matrix) -> Result<Vec<f64>> {
    if pos.rows() == 0 || neg.rows() == 0 {
        return Err(Error::Empty("direction group"));
    }
    if pos.cols() != neg.cols() {
        return Err(Error::DimensionMismatch {
            expected: pos.cols(),
            got: neg.cols(),
        });
    }
    let diff = pos
        .column_means()
        .into_iter()
        .zip(neg.column_means())
        .map(|(a, b)| a - b)
        .collect();
    normalized(diff)
}

/// Direction of a graded concept and the scores it was built from.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradedDirection {
    pub v: Vec<f64>,
    /// Scores that had at least one example.
    pub used_scores: Vec<i64>,
    /// Scores inside the range with no examples.
    pub skipped_scores: Vec<i64>,
}

/// Unnormalized sum of `mean(group j) − mean(group i)` over every pair of
/// non-empty score groups `i < j`.
pub fn graded_direction_raw(
    groups: &BTreeMap<i64, Matrix>,
    range: &TraitRange,
) -> Result<(Vec<f64>, Vec<i64>, Vec<i64>)> {
    let mut means: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut dim = None;
    for (&score, rows) in groups {
        range.check(score)?;
        if rows.rows() == 0 {
            continue;
        }
        match dim {
            None => dim = Some(rows.cols()),
            Some(d) if d != rows.cols() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: rows.cols(),
                })
            }
            _ => {}
        }
        means.push((score, rows.column_means()));
    }
    if means.len() < 2 {
        return Err(Error::TooFewGroups(means.len()));
    }
    let d = dim.unwrap_or(0);
    let mut acc = vec![0.0; d];
    for (a, (_, lo)) in means.iter().enumerate() {
        for (_, hi) in &means[a + 1..] {
            for ((s, h), l) in acc.iter_mut().zip(hi).zip(lo) {
                *s += h - l;
            }
        }
    }
    let used: Vec<i64> = means.iter().map(|(s, _)| *s).collect();
    let skipped = (range.min_score..=range.max_score)
        .filter(|s| !used.contains(s))
        .collect();
    Ok((acc, used, skipped))
}

/// Graded-concept direction: the normalized pairwise mean-difference sum.
/// Empty score groups are skipped and reported.
pub fn graded_direction(groups: &BTreeMap<i64, Matrix>, range: &TraitRange) -> Result<GradedDirection> {
    let (raw, used_scores, skipped_scores) = graded_direction_raw(groups, range)?;
    Ok(GradedDirection {
        v: normalized(raw)?,
        used_scores,
        skipped_scores,
    })
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm2(u), norm2(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    /// Row-major `k × k`.
    pub values: Vec<f64>,
    /// Mean of the off-diagonal entries; `None` for a single label.
    pub mean_offdiag: Option<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks(self.size().max(1))
    }
}

/// Pairwise cosine matrix of labelled vectors.
pub fn similarity_matrix(labels: Vec<String>, vectors: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    let k = labels.len();
    if k != vectors.len() {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: vectors.len(),
        });
    }
    if k == 0 {
        return Err(Error::Empty("similarity labels"));
    }
    let mut values = vec![0.0; k * k];
    let mut off = 0.0;
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in i + 1..k {
            let c = cosine(&vectors[i], &vectors[j])?;
            values[i * k + j] = c;
            values[j * k + i] = c;
            off += 2.0 * c;
        }
    }
    let mean_offdiag = (k > 1).then(|| off / (k * (k - 1)) as f64);
    Ok(SimilarityMatrix {
        labels,
        values,
        mean_offdiag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn range(lo: i64, hi: i64) -> TraitRange {
        TraitRange::new(1, "t", lo, hi).unwrap()
    }

    #[test]
    fn binary_simple() {
        let pos = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let neg = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert_eq!(binary_direction(&pos, &neg).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn binary_identical_means_is_degenerate() {
        let pos = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let neg = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        assert_eq!(binary_direction(&pos, &neg), Err(Error::DegenerateDirection));
    }

    #[test]
    fn two_groups_collapse_to_binary() {
        let lo = Matrix::from_rows(&[[0.0, 1.0, 2.0], [1.0, 1.0, 0.0]]).unwrap();
        let hi = Matrix::from_rows(&[[3.0, -1.0, 2.0]]).unwrap();
        let groups = BTreeMap::from([(1, lo.clone()), (3, hi.clone())]);
        let g = graded_direction(&groups, &range(0, 3)).unwrap();
        assert_eq!(g.v, binary_direction(&hi, &lo).unwrap());
        assert_eq!(g.used_scores, vec![1, 3]);
        assert_eq!(g.skipped_scores, vec![0, 2]);
    }

    #[test]
    fn three_groups_cancel_middle() {
        let m0 = [0.5, -1.0];
        let m1 = [7.0, 3.0];
        let m2 = [2.0, 2.5];
        let groups = BTreeMap::from([
            (0, Matrix::from_rows(&[m0]).unwrap()),
            (1, Matrix::from_rows(&[m1]).unwrap()),
            (2, Matrix::from_rows(&[m2]).unwrap()),
        ]);
        let (raw, _, _) = graded_direction_raw(&groups, &range(0, 2)).unwrap();
        for k in 0..2 {
            assert!((raw[k] - 2.0 * (m2[k] - m0[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn graded_errors() {
        let one = BTreeMap::from([(1, Matrix::from_rows(&[[1.0]]).unwrap())]);
        assert_eq!(graded_direction(&one, &range(0, 3)), Err(Error::TooFewGroups(1)));
        let with_empty = BTreeMap::from([
            (1, Matrix::from_rows(&[[1.0]]).unwrap()),
            (2, Matrix::zeros(0, 1)),
        ]);
        assert_eq!(
            graded_direction(&with_empty, &range(0, 3)),
            Err(Error::TooFewGroups(1))
        );
        let outside = BTreeMap::from([
            (1, Matrix::from_rows(&[[1.0]]).unwrap()),
            (9, Matrix::from_rows(&[[2.0]]).unwrap()),
        ]);
        assert!(graded_direction(&outside, &range(0, 3)).is_err());
    }

    #[test]
    fn cosine_cases() {
        let u = [0.3, -2.0, 1.5];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn similarity_single_and_pair() {
        let s = similarity_matrix(vec!["a".to_string()], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(s.values, vec![1.0]);
        assert_eq!(s.mean_offdiag, None);
        let s = similarity_matrix(
            vec!["a".to_string(), "b".to_string()],
            &[vec![1.0, 2.0], vec![2.0, 4.0]],
        )
        .unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert!((s.mean_offdiag.unwrap() - 1.0).abs() < 1e-15);
    }
}
