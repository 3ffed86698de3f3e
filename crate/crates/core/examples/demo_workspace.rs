//! Writes a planted-signal dataset and matching embedding files for trying
//! the command line:
//!
//! ```text
//! cargo run --example demo_workspace -- demo
//! polyllmem train --dataset demo/polymers.csv --property Tg --llm demo/llm.plye --uni demo/uni.plye
//! ```

use std::path::PathBuf;

use anyhow::Result;
use polyllmem::embed_store::{synth_token_embeddings, write_matrix, write_tokens, EmbeddingMeta, Modality, PlantSpec};
use polyllmem::trainer::{planted_task, PlantedOptions};

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    std::fs::create_dir_all(&dir)?;

    let task = planted_task(&PlantedOptions { n: 200, ..PlantedOptions::default() })?;
    std::fs::write(dir.join("polymers.csv"), task.to_csv("Tg", 150.0, 25.0))?;
    write_matrix(&task.llm, dir.join("llm.plye"))?;
    write_matrix(&task.uni, dir.join("uni.plye"))?;

    let meta = EmbeddingMeta::new(Modality::TextLlm, task.llm.meta.dim, "synthetic-planted-tokens");
    let tokens = synth_token_embeddings(&task.ids, &task.psmiles, &meta, 42, Some(&PlantSpec::standard()))?;
    write_tokens(&tokens, dir.join("tokens.plyt"))?;

    println!("wrote {} polymers to {}", task.ids.len(), dir.display());
    Ok(())
}
