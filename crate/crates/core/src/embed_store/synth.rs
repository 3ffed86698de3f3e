//! Synthetic embeddings for runs without the pretrained extractors.
//!
//! Each polymer gets its own Gaussian stream keyed by
//! `hash64(id, modality code, seed)`. Pooled vectors take `dim` draws from it;
//! token sets take `n_tokens * dim` draws, row by row.
//!
//! A [`PlantSpec`] overwrites the leading dims with character-count features
//! of the PSMILES, z-scored across the supplied polymers, so that a target
//! linear in those features is recoverable. At token level every token carries
//! its share of the count (times `n_tokens`) so the token mean reproduces the
//! pooled planted value.

use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, EmbeddingMeta, EmbeddingRecord, StoreError, TokenEmbeddingSet, TokenRecord};
use crate::psmiles::{tokenize, Token, TokenKind};
use crate::rng::{hash64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantFeature {
    /// Occurrences of one character.
    Count(char),
    /// Ring-bond label tokens.
    RingDigits,
    /// Maximum branch nesting depth.
    BranchDepth,
}

impl PlantFeature {
    /// C, c, F, N, n, O, =, #, ring digits, branch depth.
    pub fn standard_set() -> Vec<PlantFeature> {
        let mut v: Vec<PlantFeature> = "CcFNnO=#".chars().map(PlantFeature::Count).collect();
        v.push(PlantFeature::RingDigits);
        v.push(PlantFeature::BranchDepth);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub features: Vec<PlantFeature>,
}

impl PlantSpec {
    pub fn standard() -> Self {
        Self { features: PlantFeature::standard_set() }
    }

    pub fn first(k: usize) -> Self {
        Self { features: PlantFeature::standard_set().into_iter().take(k).collect() }
    }
}

/// Per-token raw feature contributions; columns sum to [`raw_plant_features`].
pub fn plant_contributions(tokens: &[Token], features: &[PlantFeature]) -> Vec<Vec<f64>> {
    let mut depth = 0usize;
    let mut max_depth = 0usize;
    tokens
        .iter()
        .map(|tok| {
            let mut new_max = false;
            if tok.kind == TokenKind::Branch {
                if tok.text == "(" {
                    depth += 1;
                    if depth > max_depth {
                        max_depth = depth;
                        new_max = true;
                    }
                } else {
                    depth = depth.saturating_sub(1);
                }
            }
            features
                .iter()
                .map(|f| match *f {
                    PlantFeature::Count(ch) => tok.text.chars().filter(|&c| c == ch).count() as f64,
                    PlantFeature::RingDigits => f64::from(u8::from(tok.kind == TokenKind::RingDigit)),
                    PlantFeature::BranchDepth => f64::from(u8::from(new_max)),
                })
                .collect()
        })
        .collect()
}

/// Unscaled feature values for one string.
pub fn raw_plant_features(psmiles: &str, features: &[PlantFeature]) -> Result<Vec<f64>, crate::psmiles::LexError> {
    let tokens = tokenize(psmiles)?;
    let mut out = vec![0.0; features.len()];
    for row in plant_contributions(&tokens, features) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Ok(out)
}

struct Scaler {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Scaler {
    fn fit(rows: &[Vec<f64>], k: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; k];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; k];
        for r in rows {
            for j in 0..k {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let inv_std = var.iter().map(|v| if *v > 0.0 { 1.0 / (v / n).sqrt() } else { 0.0 }).collect();
        Self { mean, inv_std }
    }

    fn apply(&self, j: usize, x: f64) -> f64 {
        (x - self.mean[j]) * self.inv_std[j]
    }
}

fn check_ids(
    ids: &[String],
    psmiles: &[String],
    meta: &EmbeddingMeta,
    plant: Option<&PlantSpec>,
) -> Result<(), StoreError> {
    if ids.len() != psmiles.len() {
        return Err(StoreError::Misaligned { count: ids.len(), psmiles: psmiles.len() });
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(StoreError::DuplicateId(dup.clone()));
    }
    if meta.dim == 0 {
        return Err(StoreError::ZeroDim);
    }
    if let Some(p) = plant {
        if p.features.len() > meta.dim as usize {
            return Err(StoreError::PlantTooWide { needed: p.features.len(), dim: meta.dim as usize });
        }
    }
    Ok(())
}

fn tokenize_all(ids: &[String], psmiles: &[String]) -> Result<Vec<Vec<Token>>, StoreError> {
    ids.iter()
        .zip(psmiles)
        .map(|(id, s)| tokenize(s).map_err(|source| StoreError::Tokenize { id: id.clone(), source }))
        .collect()
}

/// Pooled synthetic embeddings. `psmiles[i]` belongs to `ids[i]`; it is only
/// read when `plant` is given.
pub fn synth_embeddings(
    ids: &[String],
    psmiles: &[String],
    meta: &EmbeddingMeta,
    seed: u64,
    plant: Option<&PlantSpec>,
) -> Result<EmbeddingMatrix, StoreError> {
    check_ids(ids, psmiles, meta, plant)?;
    let dim = meta.dim as usize;
    let planted = match plant {
        Some(p) => {
            let raw: Vec<Vec<f64>> = tokenize_all(ids, psmiles)?
                .iter()
                .map(|toks| {
                    let mut acc = vec![0.0; p.features.len()];
                    for row in plant_contributions(toks, &p.features) {
                        acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
                    }
                    acc
                })
                .collect();
            let scaler = Scaler::fit(&raw, p.features.len());
            Some(
                raw.into_iter()
                    .map(|r| r.iter().enumerate().map(|(j, &x)| scaler.apply(j, x)).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };

    let records = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut rng = SplitMix64::new(hash64(id, u64::from(meta.modality.code()), seed));
            let mut vector: Vec<f32> = (0..dim).map(|_| rng.next_gaussian() as f32).collect();
            if let Some(p) = &planted {
                for (v, &x) in vector.iter_mut().zip(&p[i]) {
                    *v = x as f32;
                }
            }
            EmbeddingRecord { id: id.clone(), vector }
        })
        .collect();
    EmbeddingMatrix::new(meta.clone(), records)
}

/// Token-level synthetic embeddings over the chemical tokenization.
pub fn synth_token_embeddings(
    ids: &[String],
    psmiles: &[String],
    meta: &EmbeddingMeta,
    seed: u64,
    plant: Option<&PlantSpec>,
) -> Result<TokenEmbeddingSet, StoreError> {
    check_ids(ids, psmiles, meta, plant)?;
    let dim = meta.dim as usize;
    let tokenized = tokenize_all(ids, psmiles)?;
    if let Some((i, _)) = tokenized.iter().enumerate().find(|(_, t)| t.is_empty()) {
        return Err(StoreError::EmptyTokens { id: ids[i].clone() });
    }
    let contributions: Option<Vec<Vec<Vec<f64>>>> =
        plant.map(|p| tokenized.iter().map(|toks| plant_contributions(toks, &p.features)).collect());
    let scaler = match (&contributions, plant) {
        (Some(c), Some(p)) => {
            let totals: Vec<Vec<f64>> = c
                .iter()
                .map(|rows| {
                    let mut acc = vec![0.0; p.features.len()];
                    for row in rows {
                        acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
                    }
                    acc
                })
                .collect();
            Some(Scaler::fit(&totals, p.features.len()))
        }
        _ => None,
    };

    let records = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let toks = &tokenized[i];
            let n = toks.len();
            let mut rng = SplitMix64::new(hash64(id, u64::from(meta.modality.code()), seed));
            let mut vectors: Vec<f32> = (0..n * dim).map(|_| rng.next_gaussian() as f32).collect();
            if let (Some(c), Some(s)) = (&contributions, &scaler) {
                for (t, row) in c[i].iter().enumerate() {
                    for (j, &x) in row.iter().enumerate() {
                        vectors[t * dim + j] = s.apply(j, n as f64 * x) as f32;
                    }
                }
            }
            TokenRecord { id: id.clone(), tokens: toks.iter().map(|t| t.text.clone()).collect(), vectors }
        })
        .collect();
    TokenEmbeddingSet::new(meta.clone(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_store::{mean_pool, Modality};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:04}")).collect()
    }

    #[test]
    fn deterministic_per_id_and_seed() {
        let meta = EmbeddingMeta::new(Modality::TextLlm, 16, "synth");
        let ids = ids(5);
        let blank = vec![String::new(); 5];
        let a = synth_embeddings(&ids, &blank, &meta, 7, None).unwrap();
        let b = synth_embeddings(&ids, &blank, &meta, 7, None).unwrap();
        assert_eq!(a, b);
        // A vector depends on its own id only, not on its neighbours.
        let solo = synth_embeddings(&ids[2..3], &blank[..1], &meta, 7, None).unwrap();
        assert_eq!(solo.records[0], a.records[2]);
    }

    #[test]
    fn seeds_change_nearly_every_coordinate() {
        let meta = EmbeddingMeta::new(Modality::Structure3d, 1000, "");
        let ids = vec!["x".to_string()];
        let blank = vec![String::new()];
        let a = synth_embeddings(&ids, &blank, &meta, 1, None).unwrap();
        let b = synth_embeddings(&ids, &blank, &meta, 2, None).unwrap();
        let same = a.records[0].vector.iter().zip(&b.records[0].vector).filter(|(x, y)| x == y).count();
        assert!(same <= 10, "{same} identical coordinates");
    }

    #[test]
    fn modality_changes_stream() {
        let ids = vec!["x".to_string()];
        let blank = vec![String::new()];
        let a = synth_embeddings(&ids, &blank, &EmbeddingMeta::new(Modality::TextLlm, 8, ""), 1, None).unwrap();
        let b = synth_embeddings(&ids, &blank, &EmbeddingMeta::new(Modality::Structure3d, 8, ""), 1, None).unwrap();
        assert_ne!(a.records[0].vector, b.records[0].vector);
    }

    #[test]
    fn fluorine_count() {
        let raw = raw_plant_features("[*]CC([*])(F)C(=O)OCC(F)(F)C(F)(F)F", &[PlantFeature::Count('F')]).unwrap();
        assert_eq!(raw, vec![6.0]);
    }

    #[test]
    fn standard_features_by_hand() {
        // C c F N n O = # rings depth
        let raw = raw_plant_features("[*]CC([*])c1ccncc1", &PlantFeature::standard_set()).unwrap();
        assert_eq!(raw, vec![2.0, 5.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 1.0]);
        let raw = raw_plant_features("[*]C(C(C#N))[*]", &PlantFeature::standard_set()).unwrap();
        assert_eq!(raw, vec![3.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn planted_dims_are_standardized() {
        let smiles: Vec<String> = crate::psmiles::generate_corpus(200, 3);
        let ids = ids(200);
        let meta = EmbeddingMeta::new(Modality::TextLlm, 16, "");
        let plant = PlantSpec::standard();
        let m = synth_embeddings(&ids, &smiles, &meta, 9, Some(&plant)).unwrap();
        for j in 0..plant.features.len() {
            let col: Vec<f64> = m.records.iter().map(|r| f64::from(r.vector[j])).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-5, "feature {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4 || var == 0.0, "feature {j} var {var}");
        }
        // F count is linear in dim 2 after scaling.
        let f_raw: Vec<f64> =
            smiles.iter().map(|s| raw_plant_features(s, &[PlantFeature::Count('F')]).unwrap()[0]).collect();
        let (i, k) = (0..200).flat_map(|i| (0..200).map(move |k| (i, k))).find(|&(i, k)| f_raw[i] != f_raw[k]).unwrap();
        let slope = f64::from(m.records[i].vector[2] - m.records[k].vector[2]) / (f_raw[i] - f_raw[k]);
        for r in 0..200 {
            let pred = f64::from(m.records[i].vector[2]) + slope * (f_raw[r] - f_raw[i]);
            assert!((pred - f64::from(m.records[r].vector[2])).abs() < 1e-4);
        }
    }

    #[test]
    fn token_plant_pools_to_pooled_plant() {
        let smiles: Vec<String> = crate::psmiles::generate_corpus(50, 4);
        let ids = ids(50);
        let meta = EmbeddingMeta::new(Modality::TextLlm, 12, "");
        let plant = PlantSpec::standard();
        let pooled = synth_embeddings(&ids, &smiles, &meta, 1, Some(&plant)).unwrap();
        let toks = synth_token_embeddings(&ids, &smiles, &meta, 1, Some(&plant)).unwrap();
        for (p, t) in pooled.records.iter().zip(&toks.records) {
            let mp = mean_pool(t, 12).unwrap();
            for j in 0..plant.features.len() {
                assert!((mp[j] - f64::from(p.vector[j])).abs() < 1e-5, "{} dim {j}", t.id);
            }
        }
    }

    #[test]
    fn errors() {
        let meta = EmbeddingMeta::new(Modality::TextLlm, 4, "");
        let dup = vec!["a".to_string(), "a".to_string()];
        let blank = vec![String::new(); 2];
        assert_eq!(synth_embeddings(&dup, &blank, &meta, 0, None).unwrap_err().code(), "DuplicateId");
        let one = vec!["a".to_string()];
        let s = vec!["[*]C[*]".to_string()];
        assert_eq!(
            synth_embeddings(&one, &s, &meta, 0, Some(&PlantSpec::standard())).unwrap_err().code(),
            "PlantTooWide"
        );
        assert_eq!(synth_embeddings(&one, &blank, &meta, 0, None).unwrap_err().code(), "Misaligned");
    }
}
