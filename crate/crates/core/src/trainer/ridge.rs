use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::TrainData;
use super::metrics::{mae, mean_std, r2};
use super::TrainError;
use crate::ndmath::Tensor2;
use crate::pipeline::{make_split, Standardizer, N_FOLDS};

fn to_dmatrix(x: &Tensor2) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.data())
}

/// `w = (XᵀX + λI)⁻¹ Xᵀ y` by Cholesky. When `X` is wide and `λ > 0` the
/// equivalent dual system `w = Xᵀ (XXᵀ + λI)⁻¹ y` is solved instead.
pub fn ridge_fit(x: &Tensor2, y: &[f64], lambda: f64) -> Result<Vec<f64>, TrainError> {
    if y.len() != x.rows() {
        return Err(TrainError::ShapeMismatch(format!("{} targets for {} rows", y.len(), x.rows())));
    }
    if !(lambda >= 0.0) {
        return Err(TrainError::Config(format!("ridge lambda {lambda} must be non-negative")));
    }
    let xm = to_dmatrix(x);
    let yv = DVector::from_column_slice(y);
    let (n, p) = x.shape();
    let w = if n < p && lambda > 0.0 {
        let gram = &xm * xm.transpose() + DMatrix::identity(n, n) * lambda;
        xm.transpose() * spd_solve(gram, &yv)?
    } else {
        let gram = xm.transpose() * &xm + DMatrix::identity(p, p) * lambda;
        spd_solve(gram, &(xm.transpose() * yv))?
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Singular);
    }
    Ok(w.as_slice().to_vec())
}

fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, TrainError> {
    let chol = a.cholesky().ok_or(TrainError::Singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    // Pivot ratio below ~sqrt(machine eps) means a numerically singular Gram matrix.
    if !(lo > 1e-7 * hi) {
        return Err(TrainError::Singular);
    }
    Ok(chol.solve(b))
}

pub fn ridge_predict(x: &Tensor2, w: &[f64]) -> Vec<f64> {
    (0..x.rows()).map(|i| crate::ndmath::dot(x.row(i), w)).collect()
}

pub const DEFAULT_LAMBDAS: [f64; 9] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFold {
    pub fold: usize,
    pub lambda: f64,
    pub val_mse: f64,
    pub test_r2: f64,
    pub test_mae: f64,
    pub test_mae_original: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeReport {
    pub property: String,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub folds: Vec<RidgeFold>,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mae_original_mean: f64,
    pub mae_original_std: f64,
}

/// Ridge on the concatenated pooled embeddings over the same split and folds
/// as [`super::train_cv`]; λ is chosen per fold by validation MSE.
pub fn ridge_cv(data: &TrainData, seed: u64, lambdas: &[f64]) -> Result<RidgeReport, TrainError> {
    if lambdas.is_empty() {
        return Err(TrainError::Config("empty lambda list".into()));
    }
    let plan = make_split(&data.ids, seed)?;
    let features = data.llm.hcat(&data.uni)?;
    let test_idx = data.indices(&plan.test_ids);
    let mut folds = Vec::with_capacity(N_FOLDS);
    for k in 0..N_FOLDS {
        let train_idx = data.indices(&plan.fold_train(k));
        let val_idx = data.indices(plan.fold_val(k));
        let x_train = features.select_rows(&train_idx);
        let col_mean = x_train.col_means();
        let center = |idx: &[usize]| {
            let mut x = features.select_rows(idx);
            let neg: Vec<f64> = col_mean.iter().map(|m| -m).collect();
            x.add_row_vector(&neg).expect("matching widths");
            x
        };
        let (xt, xv, xs) = (center(&train_idx), center(&val_idx), center(&test_idx));
        let scaler = Standardizer::fit(&data.select_targets(&train_idx))?;
        let yt = scaler.apply_all(&data.select_targets(&train_idx));
        let yv = scaler.apply_all(&data.select_targets(&val_idx));

        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for &lambda in lambdas {
            let w = match ridge_fit(&xt, &yt, lambda) {
                Ok(w) => w,
                Err(TrainError::Singular) => continue,
                Err(e) => return Err(e),
            };
            let pv = ridge_predict(&xv, &w);
            let mse = pv.iter().zip(&yv).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / yv.len() as f64;
            if best.as_ref().is_none_or(|(m, _, _)| mse < *m) {
                best = Some((mse, lambda, w));
            }
        }
        let (val_mse, lambda, w) = best.ok_or(TrainError::Singular)?;
        let pred = scaler.invert_all(&ridge_predict(&xs, &w));
        let truth = data.select_targets(&test_idx);
        folds.push(RidgeFold {
            fold: k,
            lambda,
            val_mse,
            test_r2: r2(&truth, &pred)?,
            test_mae: mae(&truth, &pred)?,
            test_mae_original: mae(&data.to_original(&truth), &data.to_original(&pred))?,
        });
    }
    let (r2_mean, r2_std) = mean_std(&folds.iter().map(|f| f.test_r2).collect::<Vec<_>>());
    let (mae_mean, mae_std) = mean_std(&folds.iter().map(|f| f.test_mae).collect::<Vec<_>>());
    let (mae_original_mean, mae_original_std) =
        mean_std(&folds.iter().map(|f| f.test_mae_original).collect::<Vec<_>>());
    Ok(RidgeReport {
        property: data.property.clone(),
        seed,
        lambdas: lambdas.to_vec(),
        folds,
        r2_mean,
        r2_std,
        mae_mean,
        mae_std,
        mae_original_mean,
        mae_original_std,
    })
}
