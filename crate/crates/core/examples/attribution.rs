//! Integrated-gradients token attribution through a trained model, normalized
//! by the connection-point token, plus the token similarity graph.

use anyhow::{Context, Result};
use polyllmem::attribution::{attribute, cosine_matrix, normalize_by_star, ModelScorer};
use polyllmem::embed_store::{synth_token_embeddings, EmbeddingMeta, Modality, PlantSpec};
use polyllmem::model::load_checkpoint;
use polyllmem::ndmath::Tensor2;
use polyllmem::trainer::{planted_task, train_cv, CvOptions, PlantedOptions, TrainConfig};

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let task = planted_task(&PlantedOptions { n: 200, llm_dim: 24, uni_dim: 8, ..PlantedOptions::default() })?;
    let config = TrainConfig {
        hidden: 16,
        rank: 2,
        alpha: 4.0,
        lr: 1e-3,
        dropout: 0.0,
        weight_decay: 1.0,
        max_epochs: 80,
        ..TrainConfig::default()
    };
    let options = CvOptions { checkpoint_dir: Some(dir.path().to_path_buf()), ..CvOptions::default() };
    let report = train_cv(&task.train_data("Tg")?, &config, &options)?;
    println!("trained: test R2 {:.3}", report.r2_mean);
    let ck = load_checkpoint(dir.path().join("Tg_fold0.plym"))?;

    let meta = EmbeddingMeta::new(Modality::TextLlm, 24, "tokens");
    let tokens = synth_token_embeddings(&task.ids, &task.psmiles, &meta, 42, Some(&PlantSpec::standard()))?;
    let rec = &tokens.records[0];
    let uni: Vec<f64> = task.uni.get(&rec.id).context("structure embedding")?.iter().map(|&v| f64::from(v)).collect();
    let vectors = Tensor2::new(rec.n_tokens(), 24, rec.vectors.iter().map(|&v| f64::from(v)).collect())?;

    let scorer = ModelScorer::for_checkpoint(&ck, uni)?;
    let raw = attribute(&scorer, &rec.id, &rec.tokens, &vectors, 256, None)?;
    let a = normalize_by_star(&raw)?;
    println!("{} = {}", rec.id, task.psmiles[0]);
    println!("F(x) {:.4}  F(0) {:.4}  completeness gap {:.2e}", a.f_input, a.f_baseline, a.completeness_gap);
    let normalized = a.normalized_scores.as_deref().unwrap_or_default();
    for ((tok, s), n) in a.tokens.iter().zip(&a.scores).zip(normalized) {
        println!("  {tok:<5} {s:+.5}  relative to [*] {n:+.3}");
    }

    let sim = cosine_matrix(&rec.tokens, &vectors, 0.5);
    println!("{} token pairs with cosine >= 0.5", sim.edges.len());
    for e in sim.edges.iter().take(5) {
        println!("  {} - {}  {:.3}", rec.tokens[e.i], rec.tokens[e.j], e.value);
    }
    Ok(())
}
