use serde::{Deserialize, Serialize};

use super::data::TrainData;
use super::metrics::{mae, r2};
use super::TrainError;
use crate::model::Checkpoint;
use crate::ndmath::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    /// Original units.
    pub prediction: f64,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub property: String,
    pub n: usize,
    /// Training-space R²; absent when fewer than two rows or constant targets.
    pub r2: Option<f64>,
    pub mae: Option<f64>,
    pub mae_original: Option<f64>,
    pub predictions: Vec<PredictionRow>,
}

fn check_dims(ck: &Checkpoint, llm: &Tensor2, uni: &Tensor2) -> Result<(), TrainError> {
    let cfg = &ck.params.config;
    if llm.cols() != cfg.llm_dim || uni.cols() != cfg.uni_dim {
        return Err(TrainError::CheckpointMismatch(format!(
            "checkpoint expects dims {}/{}, embeddings have {}/{}",
            cfg.llm_dim,
            cfg.uni_dim,
            llm.cols(),
            uni.cols()
        )));
    }
    Ok(())
}

/// Training-space predictions: de-standardized but still log-scaled.
pub fn predict_training_space(ck: &Checkpoint, llm: &Tensor2, uni: &Tensor2) -> Result<Vec<f64>, TrainError> {
    check_dims(ck, llm, uni)?;
    let z = ck.params.predict(llm, uni)?;
    Ok(z.iter().map(|v| v * ck.meta.target_std + ck.meta.target_mean).collect())
}

/// Predictions in original units.
pub fn predict_original(ck: &Checkpoint, llm: &Tensor2, uni: &Tensor2) -> Result<Vec<f64>, TrainError> {
    let t = predict_training_space(ck, llm, uni)?;
    Ok(if ck.meta.log_scale { t.iter().map(|v| 10f64.powf(*v)).collect() } else { t })
}

/// Scores a checkpoint on every row of `data`.
pub fn evaluate_checkpoint(ck: &Checkpoint, data: &TrainData) -> Result<EvalReport, TrainError> {
    if !ck.meta.property.is_empty() && ck.meta.property != data.property {
        return Err(TrainError::CheckpointMismatch(format!(
            "checkpoint was trained on {}, data is {}",
            ck.meta.property, data.property
        )));
    }
    let pred = predict_training_space(ck, &data.llm, &data.uni)?;
    let pred_orig = data.to_original(&pred);
    let truth_orig = data.to_original(&data.targets);
    let predictions = data
        .ids
        .iter()
        .zip(&pred_orig)
        .zip(&truth_orig)
        .map(|((id, &p), &t)| PredictionRow { id: id.clone(), prediction: p, target: Some(t) })
        .collect();
    Ok(EvalReport {
        property: data.property.clone(),
        n: data.len(),
        r2: r2(&data.targets, &pred).ok(),
        mae: mae(&data.targets, &pred).ok(),
        mae_original: mae(&truth_orig, &pred_orig).ok(),
        predictions,
    })
}
