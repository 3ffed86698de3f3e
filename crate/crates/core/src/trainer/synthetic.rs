use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::TrainData;
use super::TrainError;
use crate::embed_store::{synth_embeddings, EmbeddingMatrix, EmbeddingMeta, Modality, PlantSpec, StoreError};
use crate::ndmath::Tensor2;
use crate::pipeline::PolymerRecord;
use crate::psmiles::{generate_corpus, Psmiles};
use crate::rng::{derive_seed, SplitMix64};

/// Settings for a synthetic regression task over generated polymers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOptions {
    pub n: usize,
    pub llm_dim: u32,
    pub uni_dim: u32,
    /// Ratio of signal to noise standard deviation.
    pub snr: f64,
    /// Replace the target with pure noise.
    pub null: bool,
    pub seed: u64,
}

impl Default for PlantedOptions {
    fn default() -> Self {
        Self { n: 500, llm_dim: 64, uni_dim: 32, snr: 10.0, null: false, seed: 42 }
    }
}

/// Embeddings with structural features planted in the leading text
/// dimensions and a target linear in those features.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTask {
    pub ids: Vec<String>,
    pub psmiles: Vec<String>,
    pub llm: EmbeddingMatrix,
    pub uni: EmbeddingMatrix,
    pub weights: Vec<f64>,
    /// Training-space target.
    pub targets: Vec<f64>,
}

pub fn planted_task(opts: &PlantedOptions) -> Result<PlantedTask, StoreError> {
    let psmiles = generate_corpus(opts.n, derive_seed(opts.seed, "corpus", 0));
    let ids: Vec<String> = (0..opts.n).map(|i| format!("P{i:05}")).collect();
    let plant = PlantSpec::standard();
    let llm_meta = EmbeddingMeta::new(Modality::TextLlm, opts.llm_dim, "synthetic-planted");
    let uni_meta = EmbeddingMeta::new(Modality::Structure3d, opts.uni_dim, "synthetic");
    let llm = synth_embeddings(&ids, &psmiles, &llm_meta, opts.seed, Some(&plant))?;
    let uni = synth_embeddings(&ids, &psmiles, &uni_meta, opts.seed, None)?;

    let k = plant.features.len();
    let mut rng = SplitMix64::new(derive_seed(opts.seed, "weights", 0));
    let weights: Vec<f64> = (0..k).map(|_| rng.next_gaussian()).collect();
    let signal: Vec<f64> =
        llm.records.iter().map(|r| r.vector[..k].iter().zip(&weights).map(|(&x, w)| f64::from(x) * w).sum()).collect();
    let mean = signal.iter().sum::<f64>() / signal.len().max(1) as f64;
    let sd = (signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / signal.len().max(1) as f64).sqrt();
    let mut noise_rng = SplitMix64::new(derive_seed(opts.seed, "noise", 0));
    let targets = if opts.null {
        (0..opts.n).map(|_| noise_rng.next_gaussian()).collect()
    } else {
        let noise_sd = sd / opts.snr;
        signal.iter().map(|s| s + noise_sd * noise_rng.next_gaussian()).collect()
    };
    Ok(PlantedTask { ids, psmiles, llm, uni, weights, targets })
}

impl PlantedTask {
    pub fn train_data(&self, property: &str) -> Result<TrainData, TrainError> {
        let id_refs: Vec<&str> = self.ids.iter().map(String::as_str).collect();
        let n = self.ids.len();
        TrainData::from_parts(
            property.to_string(),
            self.ids.clone(),
            Tensor2::new(n, self.llm.dim(), self.llm.gather(&id_refs)?)?,
            Tensor2::new(n, self.uni.dim(), self.uni.gather(&id_refs)?)?,
            self.targets.clone(),
            false,
        )
    }

    /// Dataset records carrying the target under `property` as `offset + scale·y`.
    pub fn records(&self, property: &str, offset: f64, scale: f64) -> Vec<PolymerRecord> {
        self.ids
            .iter()
            .zip(&self.psmiles)
            .zip(&self.targets)
            .map(|((id, s), y)| PolymerRecord {
                id: id.clone(),
                psmiles: Psmiles::parse(s).expect("generated PSMILES are valid"),
                values: BTreeMap::from([(property.to_string(), offset + scale * y)]),
            })
            .collect()
    }

    /// The same records as CSV text with `id`, `psmiles` and one property column.
    pub fn to_csv(&self, property: &str, offset: f64, scale: f64) -> String {
        let mut out = format!("id,psmiles,{property}\n");
        for r in self.records(property, offset, scale) {
            out.push_str(&format!("{},{},{}\n", r.id, r.psmiles, r.values[property]));
        }
        out
    }
}
