use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::TrainData;
use super::metrics::{mae, mean_std, r2};
use super::optim::{adamw_step_model, AdamHyper, AdamState};
use super::schedule::{EarlyStopper, PlateauScheduler, StopDecision};
use super::TrainError;
use crate::model::{loss_and_grads, save_checkpoint, CheckpointMeta, LossKind, ModelConfig, ModelError, ModelParams};
use crate::ndmath::{Mode, Tensor2};
use crate::pipeline::{make_split, SplitPlan, Standardizer, N_FOLDS};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub hidden: usize,
    pub rank: usize,
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub lora: bool,
    pub loss: LossKind,
    pub max_epochs: usize,
    pub patience_early: usize,
    pub patience_lr: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            hidden: 512,
            rank: 8,
            alpha: 16.0,
            lr: 1e-4,
            weight_decay: 1e-5,
            dropout: 0.1,
            lora: true,
            loss: LossKind::Mse,
            max_epochs: 500,
            patience_early: 20,
            patience_lr: 10,
            lr_factor: 0.5,
            min_lr: 1e-6,
            min_delta: 1e-5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.lr > 0.0) || !(self.min_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if self.max_epochs == 0 || self.patience_early == 0 || self.patience_lr == 0 {
            return bad("max_epochs and patience values must be positive");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        if let LossKind::Huber { delta } = self.loss {
            if !(delta > 0.0) {
                return bad("Huber delta must be positive");
            }
        }
        Ok(())
    }

    pub fn model_config(&self, llm_dim: usize, uni_dim: usize) -> ModelConfig {
        ModelConfig {
            llm_dim,
            uni_dim,
            hidden: self.hidden,
            rank: self.rank,
            alpha: self.alpha,
            dropout: self.dropout,
            lora: self.lora,
        }
    }
}

/// Where and how to run cross-validation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CvOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Worker threads; 0 or 1 runs folds one after another.
    pub threads: usize,
    /// Job index mixed into every fold seed (the grid cell for grid search).
    pub job: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_history: Vec<f64>,
    pub test_r2: f64,
    pub test_mae: f64,
    pub test_mae_original: f64,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub property: String,
    pub config: TrainConfig,
    pub n_records: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub log_scale: bool,
    pub folds: Vec<FoldReport>,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mae_original_mean: f64,
    pub mae_original_std: f64,
    pub mean_val_loss: f64,
}

impl RunReport {
    /// Builds a report whose aggregates are derived from `folds`.
    pub fn from_folds(data: &TrainData, plan: &SplitPlan, config: &TrainConfig, folds: Vec<FoldReport>) -> Self {
        let col = |f: fn(&FoldReport) -> f64| folds.iter().map(f).collect::<Vec<_>>();
        let (r2_mean, r2_std) = mean_std(&col(|f| f.test_r2));
        let (mae_mean, mae_std) = mean_std(&col(|f| f.test_mae));
        let (mae_original_mean, mae_original_std) = mean_std(&col(|f| f.test_mae_original));
        let (mean_val_loss, _) = mean_std(&col(|f| f.best_val_loss));
        Self {
            property: data.property.clone(),
            config: config.clone(),
            n_records: data.len(),
            n_train: plan.train_ids.len(),
            n_test: plan.test_ids.len(),
            log_scale: data.log_scale,
            folds,
            r2_mean,
            r2_std,
            mae_mean,
            mae_std,
            mae_original_mean,
            mae_original_std,
            mean_val_loss,
        }
    }
}

/// Index ranges of minibatches; a trailing batch of one row joins the
/// previous batch because batch norm needs two rows.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(batch_size.max(1)).map(|s| s..(s + batch_size).min(n)).collect();
    if out.len() >= 2 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

pub(crate) fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, TrainError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Five-fold cross-validated training on the 85% split, with each fold's
/// best checkpoint evaluated on the shared 15% test set.
pub fn train_cv(data: &TrainData, config: &TrainConfig, options: &CvOptions) -> Result<RunReport, TrainError> {
    run_in_pool(options.threads, || train_cv_in_pool(data, config, options))?
}

pub(crate) fn train_cv_in_pool(
    data: &TrainData,
    config: &TrainConfig,
    options: &CvOptions,
) -> Result<RunReport, TrainError> {
    config.validate()?;
    config.model_config(data.llm.cols(), data.uni.cols()).validate()?;
    let plan = make_split(&data.ids, config.seed)?;
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.clone(), source })?;
    }
    let folds = (0..N_FOLDS)
        .into_par_iter()
        .map(|k| train_fold(data, &plan, k, config, options).map(|(report, _, _)| report))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunReport::from_folds(data, &plan, config, folds))
}

struct Rows {
    llm: Tensor2,
    uni: Tensor2,
    targets: Vec<f64>,
}

fn rows(data: &TrainData, idx: &[usize], scaler: &Standardizer) -> Rows {
    Rows {
        llm: data.llm.select_rows(idx),
        uni: data.uni.select_rows(idx),
        targets: scaler.apply_all(&data.select_targets(idx)),
    }
}

fn numerical(fold: usize, epoch: usize) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::NonFinite { layer } => {
            TrainError::Numerical { fold, epoch, detail: format!("non-finite values after {layer}") }
        }
        other => TrainError::Model(other),
    }
}

/// Trains one fold; returns its report, the selected parameters and the
/// target scaler fitted on the fold's training rows.
pub fn train_fold(
    data: &TrainData,
    plan: &SplitPlan,
    k: usize,
    config: &TrainConfig,
    options: &CvOptions,
) -> Result<(FoldReport, ModelParams, Standardizer), TrainError> {
    let train_idx = data.indices(&plan.fold_train(k));
    let val_idx = data.indices(plan.fold_val(k));
    let test_idx = data.indices(&plan.test_ids);
    if train_idx.len() < 2 || val_idx.is_empty() {
        return Err(TrainError::DegenerateFold { fold: k, n_train: train_idx.len(), n_val: val_idx.len() });
    }
    let scaler = Standardizer::fit(&data.select_targets(&train_idx))?;
    let train = rows(data, &train_idx, &scaler);
    let val = rows(data, &val_idx, &scaler);

    let job_seed = derive_seed(config.seed, &format!("job{}", options.job), k as u64);
    let mut params =
        ModelParams::init(&config.model_config(data.llm.cols(), data.uni.cols()), derive_seed(job_seed, "init", 0))?;
    let mut shuffle_rng = SplitMix64::new(derive_seed(job_seed, "shuffle", 0));
    let mut dropout_rng = SplitMix64::new(derive_seed(job_seed, "dropout", 0));
    let mut adam = AdamState::for_model(&params);
    let mut scheduler =
        PlateauScheduler::new(config.lr, config.lr_factor, config.patience_lr, config.min_lr, config.min_delta);
    let mut stopper = EarlyStopper::new(config.patience_early, config.min_delta);

    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let batches = batch_ranges(order.len(), config.batch_size);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut lr = config.lr;
    for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut order);
        for range in &batches {
            let idx = &order[range.clone()];
            let llm = train.llm.select_rows(idx);
            let uni = train.uni.select_rows(idx);
            let y: Vec<f64> = idx.iter().map(|&i| train.targets[i]).collect();
            let out = loss_and_grads(&params, &llm, &uni, &y, config.loss, Mode::Train, &mut dropout_rng)
                .map_err(numerical(k, epoch))?;
            params.commit_batch_stats(&out.pass);
            adamw_step_model(&mut params, &out.grads, &mut adam, lr, config.weight_decay, AdamHyper::default())?;
        }
        let pred = params.predict(&val.llm, &val.uni).map_err(numerical(k, epoch))?;
        let val_loss = config.loss.value(&pred, &val.targets);
        if !val_loss.is_finite() {
            return Err(TrainError::Numerical { fold: k, epoch, detail: "validation loss is not finite".into() });
        }
        history.push(val_loss);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.clone()));
        }
        lr = scheduler.step(val_loss);
        if let StopDecision::Stop { .. } = stopper.observe(val_loss) {
            break;
        }
    }
    let (best_val_loss, best_epoch, best_params) = best.expect("at least one epoch");

    let test_llm = data.llm.select_rows(&test_idx);
    let test_uni = data.uni.select_rows(&test_idx);
    let pred = scaler.invert_all(&best_params.predict(&test_llm, &test_uni).map_err(numerical(k, best_epoch))?);
    let truth = data.select_targets(&test_idx);

    let checkpoint = match &options.checkpoint_dir {
        Some(dir) => {
            let name = if options.job == 0 {
                format!("{}_fold{k}.plym", data.property)
            } else {
                format!("{}_job{}_fold{k}.plym", data.property, options.job)
            };
            let path = dir.join(name);
            let meta = CheckpointMeta {
                property: data.property.clone(),
                epoch: best_epoch,
                val_loss: best_val_loss,
                seed: config.seed,
                fold: Some(k),
                target_mean: scaler.mean,
                target_std: scaler.std,
                log_scale: data.log_scale,
            };
            save_checkpoint(&best_params, &meta, &path)?;
            Some(path.to_string_lossy().into_owned())
        }
        None => None,
    };

    let report = FoldReport {
        fold: k,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        best_val_loss,
        best_epoch,
        epochs_run: history.len(),
        val_history: history,
        test_r2: r2(&truth, &pred)?,
        test_mae: mae(&truth, &pred)?,
        test_mae_original: mae(&data.to_original(&truth), &data.to_original(&pred))?,
        checkpoint,
    };
    log::info!(
        "{} job {} fold {k}: {} epochs, best epoch {best_epoch}, val loss {best_val_loss:.6}, test R2 {:.4}",
        data.property,
        options.job,
        report.epochs_run,
        report.test_r2
    );
    Ok((report, best_params, scaler))
}
