#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use std::collections::BTreeMap;

use common::*;
use headprobe_core::directions::{binary_direction, cosine, graded_direction, graded_direction_raw};
use headprobe_core::{Matrix, TraitRange};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Groups whose means sit at `s · w + noise`.
fn planted_groups(seed: u64, scores: std::ops::RangeInclusive<i64>, w: &[f64], sigma: f64, per: usize) -> BTreeMap<i64, Matrix> {
    let mut r = rng(seed);
    scores
        .map(|s| {
            let data = (0..per)
                .flat_map(|_| w.iter().map(|wi| s as f64 * wi).collect::<Vec<_>>())
                .map(|v| v + sigma * r.sample::<f64, _>(StandardNormal))
                .collect();
            (s, Matrix::from_vec(per, w.len(), data).unwrap())
        })
        .collect()
}

#[test]
fn binary_matches_recomputation() {
    let mut r = rng(4);
    let pos = gaussian_matrix(&mut r, 13, 9);
    let neg = gaussian_matrix(&mut r, 7, 9);
    let got = binary_direction(&pos, &neg).unwrap();
    let mean = |m: &Matrix, j: usize| (0..m.rows()).map(|i| m.get(i, j)).sum::<f64>() / m.rows() as f64;
    let want = unit(&(0..9).map(|j| mean(&pos, j) - mean(&neg, j)).collect::<Vec<_>>());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn planted_direction_recovered() {
    let mut r = rng(5);
    let w = unit(&gaussian_vec(&mut r, 32));
    let range = TraitRange::new(1, "t", 0, 4).unwrap();
    let groups = planted_groups(6, 0..=4, &w, 0.01, 20);
    let g = graded_direction(&groups, &range).unwrap();
    assert!(cosine(&g.v, &w).unwrap() >= 0.99);
    assert!(g.skipped_scores.is_empty());
}

#[test]
fn cosine_matches_dot_oracle() {
    let mut r = rng(8);
    for _ in 0..20 {
        let u = gaussian_vec(&mut r, 17);
        let v = gaussian_vec(&mut r, 17);
        let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((cosine(&u, &v).unwrap() - d / (nu * nv)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn three_score_identity(seed in any::<u64>(), d in 1usize..12) {
        let mut r = rng(seed);
        let groups: BTreeMap<i64, Matrix> = (0..3)
            .map(|s| {
                let n = r.random_range(1..6);
                (s, gaussian_matrix(&mut r, n, d))
            })
            .collect();
        let range = TraitRange::new(1, "t", 0, 2).unwrap();
        let (raw, _, _) = graded_direction_raw(&groups, &range).unwrap();
        let m0 = groups[&0].column_means();
        let m2 = groups[&2].column_means();
        for k in 0..d {
            prop_assert!((raw[k] - 2.0 * (m2[k] - m0[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_norm_order_and_scale_invariant(seed in any::<u64>(), d in 2usize..10, c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let range = TraitRange::new(1, "t", 1, 5).unwrap();
        let mut groups = BTreeMap::new();
        for s in 1..=5 {
            if r.random_bool(0.8) {
                let n = r.random_range(1..6);
                groups.insert(s, gaussian_matrix(&mut r, n, d));
            }
        }
        prop_assume!(groups.len() >= 2);
        let base = graded_direction(&groups, &range).unwrap();
        let norm: f64 = base.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-6);

        let shuffled: BTreeMap<i64, Matrix> = groups
            .iter()
            .map(|(&s, m)| {
                let mut idx: Vec<usize> = (0..m.rows()).collect();
                idx.shuffle(&mut r);
                (s, m.select_rows(&idx).unwrap())
            })
            .collect();
        let scaled: BTreeMap<i64, Matrix> = groups
            .iter()
            .map(|(&s, m)| {
                let data = m.as_slice().iter().map(|v| v * c).collect();
                (s, Matrix::from_vec(m.rows(), m.cols(), data).unwrap())
            })
            .collect();
        for other in [shuffled, scaled] {
            let v = graded_direction(&other, &range).unwrap().v;
            for (a, b) in v.iter().zip(&base.v) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
