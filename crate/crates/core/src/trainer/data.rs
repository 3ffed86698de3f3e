use std::collections::HashMap;

use super::TrainError;
use crate::embed_store::EmbeddingMatrix;
use crate::ndmath::Tensor2;
use crate::pipeline::{transform_target, PropertyCatalog, Sample};

/// Aligned inputs and training-space targets for one property.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub property: String,
    pub ids: Vec<String>,
    pub llm: Tensor2,
    pub uni: Tensor2,
    /// Targets after the catalog transform (`log10` where applicable).
    pub targets: Vec<f64>,
    pub log_scale: bool,
    index: HashMap<String, usize>,
}

impl TrainData {
    /// Gathers both embedding rows for every sample and transforms targets.
    pub fn assemble(
        samples: &[Sample],
        property: &str,
        catalog: &PropertyCatalog,
        llm: &EmbeddingMatrix,
        uni: &EmbeddingMatrix,
    ) -> Result<Self, TrainError> {
        let spec =
            catalog.get(property).ok_or_else(|| crate::pipeline::PipelineError::UnknownProperty(property.into()))?;
        let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        let llm = Tensor2::new(ids.len(), llm.dim(), llm.gather(&ids)?)?;
        let uni = Tensor2::new(ids.len(), uni.dim(), uni.gather(&ids)?)?;
        let targets =
            samples.iter().map(|s| transform_target(s.value, property, catalog)).collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(
            property.to_string(),
            samples.iter().map(|s| s.id.clone()).collect(),
            llm,
            uni,
            targets,
            spec.log_scale,
        )
    }

    /// Builds a dataset directly from aligned matrices; targets are already
    /// in training space.
    pub fn from_parts(
        property: String,
        ids: Vec<String>,
        llm: Tensor2,
        uni: Tensor2,
        targets: Vec<f64>,
        log_scale: bool,
    ) -> Result<Self, TrainError> {
        let n = ids.len();
        if llm.rows() != n || uni.rows() != n || targets.len() != n {
            return Err(TrainError::ShapeMismatch(format!(
                "{n} ids, {} llm rows, {} uni rows, {} targets",
                llm.rows(),
                uni.rows(),
                targets.len()
            )));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(crate::pipeline::PipelineError::DuplicateId { id: id.clone(), line: 0 }.into());
            }
        }
        Ok(Self { property, ids, llm, uni, targets, log_scale, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Row indices of `ids`; every id must belong to this dataset.
    pub fn indices(&self, ids: &[String]) -> Vec<usize> {
        ids.iter().map(|id| self.index[id]).collect()
    }

    pub fn select_targets(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.targets[i]).collect()
    }

    /// Maps training-space values back to original units.
    pub fn to_original(&self, values: &[f64]) -> Vec<f64> {
        if self.log_scale {
            values.iter().map(|v| 10f64.powf(*v)).collect()
        } else {
            values.to_vec()
        }
    }
}
