//! Five-fold cross-validation on a planted-signal task, compared with the
//! closed-form ridge baseline on the same folds.

use anyhow::Result;
use polyllmem::trainer::{planted_task, ridge_cv, train_cv, CvOptions, PlantedOptions, TrainConfig, DEFAULT_LAMBDAS};

fn main() -> Result<()> {
    let task = planted_task(&PlantedOptions::default())?;
    let data = task.train_data("Tg")?;
    let config = TrainConfig {
        batch_size: 32,
        hidden: 32,
        rank: 4,
        alpha: 8.0,
        lr: 1e-3,
        dropout: 0.0,
        weight_decay: 2.0,
        patience_early: 50,
        patience_lr: 15,
        ..TrainConfig::default()
    };
    let report = train_cv(&data, &config, &CvOptions::default())?;
    for f in &report.folds {
        println!(
            "fold {}: best epoch {:>3} of {:>3}  val loss {:.4}  test R2 {:.4}",
            f.fold, f.best_epoch, f.epochs_run, f.best_val_loss, f.test_r2
        );
    }
    let ridge = ridge_cv(&data, config.seed, &DEFAULT_LAMBDAS)?;
    println!("network R2 {:.4} ± {:.4}", report.r2_mean, report.r2_std);
    println!("ridge   R2 {:.4} ± {:.4}", ridge.r2_mean, ridge.r2_std);
    Ok(())
}
