//! Principal components of pooled embeddings, the reduction applied before
//! plotting embedding spaces.

use anyhow::Result;
use polyllmem::attribution::pca_reduce;
use polyllmem::ndmath::Tensor2;
use polyllmem::trainer::{planted_task, PlantedOptions};

fn main() -> Result<()> {
    let task = planted_task(&PlantedOptions { n: 300, llm_dim: 64, uni_dim: 8, ..PlantedOptions::default() })?;
    let n = task.llm.records.len();
    let data: Vec<f64> = task.llm.records.iter().flat_map(|r| r.vector.iter().map(|&v| f64::from(v))).collect();
    let x = Tensor2::new(n, task.llm.dim(), data)?;

    let pca = pca_reduce(&x, 10)?;
    let mut cumulative = 0.0;
    for (i, r) in pca.explained_variance_ratio.iter().enumerate() {
        cumulative += r;
        println!("PC{:<2} variance {:8.3}  ratio {r:.3}  cumulative {cumulative:.3}", i + 1, pca.explained_variance[i]);
    }
    let first = pca.scores.row(0);
    println!("{} projected onto the first three components: {:.3?}", task.ids[0], &first[..3]);
    Ok(())
}
