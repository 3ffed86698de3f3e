use serde::{Deserialize, Serialize};

use super::AttrError;
use crate::model::{Checkpoint, ModelParams};
use crate::ndmath::{dot, Tensor2};
use crate::psmiles::{merge_scores, MergeMap, CONNECTION_POINT};

/// A differentiable scalar function of a pooled text embedding.
pub trait Scorer {
    fn dim(&self) -> usize;

    /// Values and input gradients for each row of `pooled`.
    fn score_and_grad(&self, pooled: &Tensor2) -> Result<(Vec<f64>, Tensor2), AttrError>;

    fn score(&self, pooled: &Tensor2) -> Result<Vec<f64>, AttrError> {
        self.score_and_grad(pooled).map(|(v, _)| v)
    }
}

/// `F(p) = w·p + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Scorer for LinearProbe {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score_and_grad(&self, pooled: &Tensor2) -> Result<(Vec<f64>, Tensor2), AttrError> {
        check_width(pooled, self.dim())?;
        let values = (0..pooled.rows()).map(|i| dot(pooled.row(i), &self.weights) + self.bias).collect();
        let grads = Tensor2::from_fn(pooled.rows(), self.dim(), |_, j| self.weights[j]);
        Ok((values, grads))
    }
}

/// The trained network in Eval mode with the structural embedding held fixed,
/// followed by `y ↦ scale·y + offset`.
pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
    pub uni: Vec<f64>,
    pub scale: f64,
    pub offset: f64,
}

impl<'a> ModelScorer<'a> {
    /// Scores in the network's standardized output units.
    pub fn new(params: &'a ModelParams, uni: Vec<f64>) -> Result<Self, AttrError> {
        if uni.len() != params.config.uni_dim {
            return Err(AttrError::DimMismatch { expected: params.config.uni_dim, actual: uni.len() });
        }
        Ok(Self { params, uni, scale: 1.0, offset: 0.0 })
    }

    /// Scores in training-space target units (de-standardized, still log-scaled).
    pub fn for_checkpoint(ck: &'a Checkpoint, uni: Vec<f64>) -> Result<Self, AttrError> {
        let mut s = Self::new(&ck.params, uni)?;
        s.scale = ck.meta.target_std;
        s.offset = ck.meta.target_mean;
        Ok(s)
    }
}

impl Scorer for ModelScorer<'_> {
    fn dim(&self) -> usize {
        self.params.config.llm_dim
    }

    fn score_and_grad(&self, pooled: &Tensor2) -> Result<(Vec<f64>, Tensor2), AttrError> {
        check_width(pooled, self.dim())?;
        let n = pooled.rows();
        let uni = Tensor2::from_fn(n, self.uni.len(), |_, j| self.uni[j]);
        let mut rng = crate::rng::SplitMix64::new(0);
        let pass = self.params.forward(pooled, &uni, crate::ndmath::Mode::Eval, &mut rng)?;
        let back = self.params.backward(&pass, &vec![self.scale; n])?;
        let values = pass.predictions.iter().map(|y| self.scale * y + self.offset).collect();
        Ok((values, back.d_llm))
    }
}

fn check_width(t: &Tensor2, dim: usize) -> Result<(), AttrError> {
    if t.cols() != dim {
        return Err(AttrError::DimMismatch { expected: dim, actual: t.cols() });
    }
    Ok(())
}

/// Per-token integrated gradients from the all-zero baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgResult {
    pub scores: Vec<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
    /// `|Σ scores − (F(x) − F(0))|`.
    pub completeness_gap: f64,
}

impl IgResult {
    /// Gap relative to `|F(x) − F(0)|`.
    pub fn relative_gap(&self) -> f64 {
        self.completeness_gap / (self.f_input - self.f_baseline).abs()
    }
}

/// Midpoint-rule integrated gradients through `F(T) = scorer(mean_pool(T))`.
///
/// Along the path `α T` the pooled input is `α p̄` and
/// `∂F/∂T[k,d] = ∂F/∂p[d] / n_tok`, so all `steps` gradient evaluations run
/// as one batch and token `k` receives `Σ_d T[k,d] ḡ[d] / n_tok`, where `ḡ`
/// averages the gradients at `α_s = (s − ½)/m`.
pub fn integrated_gradients(scorer: &dyn Scorer, tokens: &Tensor2, steps: usize) -> Result<IgResult, AttrError> {
    if steps == 0 {
        return Err(AttrError::Steps);
    }
    if tokens.rows() == 0 {
        return Err(AttrError::EmptyTokens);
    }
    check_width(tokens, scorer.dim())?;
    let n_tok = tokens.rows() as f64;
    let pooled = tokens.col_means();
    let m = steps as f64;
    let path = Tensor2::from_fn(steps, pooled.len(), |s, d| (s as f64 + 0.5) / m * pooled[d]);
    let (_, grads) = scorer.score_and_grad(&path)?;
    let mean_grad = grads.col_means();
    let scores: Vec<f64> = (0..tokens.rows()).map(|k| dot(tokens.row(k), &mean_grad) / n_tok).collect();

    let ends = Tensor2::from_fn(2, pooled.len(), |i, d| if i == 0 { pooled[d] } else { 0.0 });
    let f = scorer.score(&ends)?;
    let total: f64 = scores.iter().sum();
    Ok(IgResult { completeness_gap: (total - (f[0] - f[1])).abs(), scores, f_input: f[0], f_baseline: f[1] })
}

/// Token-level attribution for one polymer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub polymer_id: String,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub normalized_scores: Option<Vec<f64>>,
    pub f_input: f64,
    pub f_baseline: f64,
    pub completeness_gap: f64,
    pub steps: usize,
}

/// Runs [`integrated_gradients`] and, when a merge map is given, sums raw
/// token scores into refined tokens.
pub fn attribute(
    scorer: &dyn Scorer,
    polymer_id: &str,
    tokens: &[String],
    vectors: &Tensor2,
    steps: usize,
    merge: Option<&MergeMap>,
) -> Result<Attribution, AttrError> {
    if tokens.len() != vectors.rows() {
        return Err(AttrError::LengthMismatch { tokens: tokens.len(), vectors: vectors.rows() });
    }
    let ig = integrated_gradients(scorer, vectors, steps)?;
    let (tokens, scores) = match merge {
        Some(map) => (map.refined_tokens(), merge_scores(&ig.scores, map)?),
        None => (tokens.to_vec(), ig.scores),
    };
    Ok(Attribution {
        polymer_id: polymer_id.to_string(),
        tokens,
        scores,
        normalized_scores: None,
        f_input: ig.f_input,
        f_baseline: ig.f_baseline,
        completeness_gap: ig.completeness_gap,
        steps,
    })
}

/// Divides every score by the first `[*]` token's score.
pub fn normalize_by_star(a: &Attribution) -> Result<Attribution, AttrError> {
    let idx = a.tokens.iter().position(|t| t == CONNECTION_POINT).ok_or(AttrError::NoReference)?;
    let reference = a.scores[idx];
    if reference == 0.0 {
        return Err(AttrError::ZeroReference);
    }
    let mut out = a.clone();
    out.normalized_scores = Some(a.scores.iter().map(|s| s / reference).collect());
    Ok(out)
}
