//! Cross-validates a small hyperparameter grid and picks the configuration
//! with the lowest mean validation loss.

use anyhow::Result;
use polyllmem::trainer::{grid_search, planted_task, CvOptions, GridSpec, PlantedOptions, TrainConfig};

fn main() -> Result<()> {
    let task = planted_task(&PlantedOptions { n: 200, llm_dim: 32, uni_dim: 16, ..PlantedOptions::default() })?;
    let data = task.train_data("Tg")?;
    let grid = GridSpec {
        batch_size: vec![32],
        hidden: vec![16, 32],
        rank: vec![2, 4],
        alpha: vec![8.0],
        lr: vec![1e-3],
        weight_decay: vec![0.1, 2.0],
        dropout: vec![0.0],
        select: None,
    };
    let base = TrainConfig { max_epochs: 100, ..TrainConfig::default() };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = grid_search(&data, &grid, &base, &CvOptions { threads, ..CvOptions::default() })?;
    for cell in &report.cells {
        let c = &cell.report.config;
        println!(
            "cell {}: hidden {:>2} rank {} wd {:<4}  val loss {:.4}  test R2 {:.4}",
            cell.index, c.hidden, c.rank, c.weight_decay, cell.mean_val_loss, cell.report.r2_mean
        );
    }
    let best = &report.best_config;
    println!(
        "best cell {}: hidden {} rank {} weight decay {}",
        report.best_index, best.hidden, best.rank, best.weight_decay
    );
    Ok(())
}
