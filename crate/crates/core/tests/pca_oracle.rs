#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use common::*;
use headprobe_core::pca::pca_2d;
use headprobe_core::Matrix;

/// Leading eigenvectors of a symmetric PSD matrix by power iteration with
/// deflation.
fn power_eigvecs(a: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let d = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut out = Vec::new();
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i * 7 + c * 3) as f64 % 5.0).collect();
        let mut lambda = 0.0;
        for _ in 0..20000 {
            let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| m[i][j] * v[j]).sum()).collect();
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let next: Vec<f64> = w.iter().map(|x| x / n).collect();
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            lambda = n;
            if delta < 1e-15 {
                break;
            }
        }
        for i in 0..d {
            for j in 0..d {
                m[i][j] -= lambda * v[i] * v[j];
            }
        }
        out.push(v);
    }
    out
}

#[test]
fn matches_power_iteration_oracle() {
    let mut r = rng(12);
    // Anisotropic data so the two leading eigenvalues are well separated.
    let base = gaussian_matrix(&mut r, 60, 6);
    let scales = [5.0, 3.0, 1.0, 0.5, 0.3, 0.1];
    let data: Vec<f64> = (0..60)
        .flat_map(|i| (0..6).map(move |j| (i, j)))
        .map(|(i, j)| base.get(i, j) * scales[j] + 0.2 * base.get(i, (j + 1) % 6))
        .collect();
    let x = Matrix::from_vec(60, 6, data).unwrap();

    let means = x.column_means();
    let centered: Vec<Vec<f64>> = (0..60)
        .map(|i| (0..6).map(|j| x.get(i, j) - means[j]).collect())
        .collect();
    let cov: Vec<Vec<f64>> = (0..6)
        .map(|a| {
            (0..6)
                .map(|b| centered.iter().map(|r| r[a] * r[b]).sum::<f64>() / 59.0)
                .collect()
        })
        .collect();
    let mut vecs = power_eigvecs(&cov, 2);
    for v in vecs.iter_mut() {
        let first = *v.iter().find(|x| x.abs() > 1e-12).unwrap();
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let p = pca_2d(&x).unwrap();
    for (i, row) in centered.iter().enumerate() {
        for c in 0..2 {
            let want: f64 = row.iter().zip(&vecs[c]).map(|(a, b)| a * b).sum();
            assert!((p.projected.get(i, c) - want).abs() < 1e-6, "row {i} comp {c}");
        }
    }
    assert!(p.explained_variance[0] >= p.explained_variance[1]);
}
