use serde::{Deserialize, Serialize};

use super::{PipelineError, PropertyCatalog, PropertySpec};

fn lookup<'a>(property: &str, catalog: &'a PropertyCatalog) -> Result<&'a PropertySpec, PipelineError> {
    catalog.get(property).ok_or_else(|| PipelineError::UnknownProperty(property.to_string()))
}

/// Original units to training space: `log10` for log-scale properties.
pub fn transform_target(value: f64, property: &str, catalog: &PropertyCatalog) -> Result<f64, PipelineError> {
    let spec = lookup(property, catalog)?;
    if spec.log_scale {
        if !(value > 0.0) {
            return Err(PipelineError::NonpositiveLogInput { property: property.to_string(), value });
        }
        Ok(value.log10())
    } else {
        Ok(value)
    }
}

pub fn inverse_target(value: f64, property: &str, catalog: &PropertyCatalog) -> Result<f64, PipelineError> {
    let spec = lookup(property, catalog)?;
    Ok(if spec.log_scale { 10f64.powf(value) } else { value })
}

/// Z-scoring fitted on training values; `std` is the population deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Result<Self, PipelineError> {
        if values.len() < 2 {
            return Err(PipelineError::TooFewValues { n: values.len() });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) || std <= 1e-12 * mean.abs() {
            return Err(PipelineError::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn invert_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&z| self.invert(z)).collect()
    }
}
