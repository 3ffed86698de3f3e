use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{run_in_pool, train_cv_in_pool, CvOptions, RunReport, TrainConfig};
use super::data::TrainData;
use super::TrainError;

/// Hyperparameter axes; the search covers their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub batch_size: Vec<usize>,
    pub hidden: Vec<usize>,
    pub rank: Vec<usize>,
    pub alpha: Vec<f64>,
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub dropout: Vec<f64>,
    /// Optional subset of product indices to evaluate.
    pub select: Option<Vec<usize>>,
}

impl Default for GridSpec {
    /// The published finetuning grid.
    fn default() -> Self {
        Self {
            batch_size: vec![8, 64],
            hidden: vec![512, 4096],
            rank: vec![4, 32],
            alpha: vec![4.0, 128.0],
            lr: vec![5e-5, 1e-4],
            weight_decay: vec![1e-3, 1e-5],
            dropout: vec![0.0, 0.5],
            select: None,
        }
    }
}

impl GridSpec {
    /// A grid holding exactly the values of `base`.
    pub fn single(base: &TrainConfig) -> Self {
        Self {
            batch_size: vec![base.batch_size],
            hidden: vec![base.hidden],
            rank: vec![base.rank],
            alpha: vec![base.alpha],
            lr: vec![base.lr],
            weight_decay: vec![base.weight_decay],
            dropout: vec![base.dropout],
            select: None,
        }
    }

    /// Product configurations, batch size varying slowest and dropout fastest.
    pub fn configs(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>, TrainError> {
        let mut all = Vec::new();
        for &batch_size in &self.batch_size {
            for &hidden in &self.hidden {
                for &rank in &self.rank {
                    for &alpha in &self.alpha {
                        for &lr in &self.lr {
                            for &weight_decay in &self.weight_decay {
                                for &dropout in &self.dropout {
                                    all.push(TrainConfig {
                                        batch_size,
                                        hidden,
                                        rank,
                                        alpha,
                                        lr,
                                        weight_decay,
                                        dropout,
                                        ..base.clone()
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        let picked = match &self.select {
            None => all,
            Some(idx) => idx
                .iter()
                .map(|&i| all.get(i).cloned().ok_or_else(|| TrainError::Config(format!("grid index {i} out of range"))))
                .collect::<Result<_, _>>()?,
        };
        if picked.is_empty() {
            return Err(TrainError::EmptyGrid);
        }
        Ok(picked)
    }
}

/// Total order over the tuned fields, used to break ties.
pub fn config_cmp(a: &TrainConfig, b: &TrainConfig) -> Ordering {
    a.batch_size
        .cmp(&b.batch_size)
        .then(a.hidden.cmp(&b.hidden))
        .then(a.rank.cmp(&b.rank))
        .then(a.alpha.total_cmp(&b.alpha))
        .then(a.lr.total_cmp(&b.lr))
        .then(a.weight_decay.total_cmp(&b.weight_decay))
        .then(a.dropout.total_cmp(&b.dropout))
}

/// Index of the lowest mean validation loss; ties go to the smaller config.
pub fn select_best(cells: &[(TrainConfig, f64)]) -> Option<usize> {
    (0..cells.len()).min_by(|&i, &j| {
        let (ci, li) = &cells[i];
        let (cj, lj) = &cells[j];
        li.total_cmp(lj).then_with(|| config_cmp(ci, cj))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub mean_val_loss: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub property: String,
    pub best_index: usize,
    pub best_config: TrainConfig,
    pub cells: Vec<GridCell>,
}

/// Cross-validates every grid configuration; cells and folds share one pool.
pub fn grid_search(
    data: &TrainData,
    grid: &GridSpec,
    base: &TrainConfig,
    options: &CvOptions,
) -> Result<GridReport, TrainError> {
    let configs = grid.configs(base)?;
    let reports = run_in_pool(options.threads, || {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let opts = CvOptions { job: i as u64, ..options.clone() };
                train_cv_in_pool(data, cfg, &opts)
            })
            .collect::<Vec<_>>()
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let keyed: Vec<_> = reports.iter().map(|r| (r.config.clone(), r.mean_val_loss)).collect();
    let best_index = select_best(&keyed).ok_or(TrainError::EmptyGrid)?;
    let cells = reports
        .into_iter()
        .enumerate()
        .map(|(index, report)| GridCell { index, mean_val_loss: report.mean_val_loss, report })
        .collect();
    Ok(GridReport { property: data.property.clone(), best_index, best_config: configs[best_index].clone(), cells })
}
