use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::AttrError;
use crate::ndmath::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × d`, unit rows, each with its largest-magnitude entry positive.
    pub components: Tensor2,
    /// `n × k` projections of the centered input.
    pub scores: Tensor2,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Flips `v` so that its largest-magnitude coordinate (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Projects mean-centered rows onto the top-`k` covariance eigenvectors.
/// Wide inputs (`n < d`) are decomposed through the `n × n` Gram matrix.
pub fn pca_reduce(x: &Tensor2, k: usize) -> Result<Pca, AttrError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(AttrError::TooFewRows(n));
    }
    if k == 0 || k > n.min(d) {
        return Err(AttrError::ComponentsOutOfRange { k, max: n.min(d) });
    }
    let mean = x.col_means();
    let centered = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let denom = (n - 1) as f64;

    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if n < d {
        let eig = SymmetricEigen::new(&centered * centered.transpose() / denom);
        let order = descending(eig.eigenvalues.as_slice());
        let mut vecs = Vec::with_capacity(k);
        for &c in order.iter().take(k) {
            let u = eig.eigenvectors.column(c);
            let mut v = centered.transpose() * u;
            let norm = v.norm();
            if norm > 0.0 {
                v /= norm;
            }
            vecs.push(v.as_slice().to_vec());
        }
        (order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect(), vecs)
    } else {
        let eig = SymmetricEigen::new(centered.transpose() * &centered / denom);
        let order = descending(eig.eigenvalues.as_slice());
        let vecs = order.iter().take(k).map(|&c| eig.eigenvectors.column(c).iter().copied().collect()).collect();
        (order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect(), vecs)
    };

    let total: f64 = values.iter().sum();
    let mut comps = Vec::with_capacity(k * d);
    for mut v in vectors {
        fix_sign(&mut v);
        comps.extend(v);
    }
    let components = Tensor2::new(k, d, comps)?;
    let centered_t = Tensor2::new(n, d, centered.transpose().as_slice().to_vec())?;
    let scores = centered_t.matmul_nt(&components)?;
    let explained_variance: Vec<f64> = values[..k].to_vec();
    let explained_variance_ratio =
        explained_variance.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    Ok(Pca { mean, components, scores, explained_variance, explained_variance_ratio })
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}
