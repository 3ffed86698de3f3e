//! The fused text/structure regressor.
//!
//! ```text
//! llm ─ Linear(+LoRA) ─ GELU ─ BatchNorm ─┐
//!                                          ├─ gate ─ fused ─┬───────────────────────────────────────┬─(+)─ Linear ─ GELU ─ Linear ─ y
//! uni ─ Linear(+LoRA) ─ GELU ─ BatchNorm ─┘                └─ Linear ─ GELU ─ BatchNorm ─ Dropout ─┘
//! ```
//!
//! The refinement block is a residual one-layer MLP and the head halves the
//! width once before the scalar output.

mod checkpoint;


use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndmath::{
    dropout, gelu, gelu_backward, lora_backward, lora_forward, BatchNorm, BatchNormCache, DropoutMask, GateCache,
    GateUnit, Linear, LoraAdapter, LoraCache, Mode, NdError, Tensor2,
};
use crate::rng::SplitMix64;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] NdError),
    #[error("non-finite values after layer {layer}")]
    NonFinite { layer: &'static str },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{targets} targets for {rows} rows")]
    TargetLength { rows: usize, targets: usize },
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
}

impl ModelError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, ModelError::NonFinite { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub llm_dim: usize,
    pub uni_dim: usize,
    pub hidden: usize,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    /// Whether the projections carry LoRA adapters.
    #[serde(default = "default_true")]
    pub lora: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { llm_dim: 4096, uni_dim: 1536, hidden: 512, rank: 8, alpha: 16.0, dropout: 0.1, lora: true }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.llm_dim == 0 || self.uni_dim == 0 {
            return bad("input dims must be positive".into());
        }
        if self.hidden < 2 {
            return bad(format!("hidden size {} must be at least 2", self.hidden));
        }
        if self.lora {
            let max_rank = self.hidden.min(self.llm_dim).min(self.uni_dim);
            if self.rank == 0 || self.rank > max_rank {
                return bad(format!("rank {} outside 1..={max_rank}", self.rank));
            }
            if !(self.alpha > 0.0) {
                return bad(format!("alpha {} must be positive", self.alpha));
            }
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 0.5]", self.dropout));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        (self.hidden / 2).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
    Huber {
        delta: f64,
    },
}

impl LossKind {
    /// Batch-mean loss and its gradient with respect to each prediction.
    pub fn evaluate(&self, pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        let n = pred.len() as f64;
        let mut loss = 0.0;
        let grad = pred
            .iter()
            .zip(target)
            .map(|(p, t)| {
                let r = p - t;
                let (l, g) = match *self {
                    LossKind::Mse => (r * r, 2.0 * r),
                    LossKind::Mae => (
                        r.abs(),
                        if r > 0.0 {
                            1.0
                        } else if r < 0.0 {
                            -1.0
                        } else {
                            0.0
                        },
                    ),
                    LossKind::Huber { delta } => {
                        if r.abs() <= delta {
                            (0.5 * r * r, r)
                        } else {
                            (delta * (r.abs() - 0.5 * delta), delta * r.signum())
                        }
                    }
                };
                loss += l;
                g / n
            })
            .collect();
        (loss / n, grad)
    }

    pub fn value(&self, pred: &[f64], target: &[f64]) -> f64 {
        self.evaluate(pred, target).0
    }
}

/// Every tensor of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub proj_llm: Linear,
    pub lora_llm: Option<LoraAdapter>,
    pub bn_llm: BatchNorm,
    pub proj_uni: Linear,
    pub lora_uni: Option<LoraAdapter>,
    pub bn_uni: BatchNorm,
    pub gate: GateUnit,
    pub refine: Linear,
    pub bn_refine: BatchNorm,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

/// A named view of one parameter tensor.
pub struct Slot<'a> {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
    pub trainable: bool,
}

fn tensor_slot<'a>(name: &'static str, t: &'a mut Tensor2, trainable: bool) -> Slot<'a> {
    let dims = vec![t.rows(), t.cols()];
    Slot { name, dims, data: t.data_mut(), trainable }
}

fn vec_slot<'a>(name: &'static str, v: &'a mut [f64], trainable: bool) -> Slot<'a> {
    Slot { name, dims: vec![v.len()], data: v, trainable }
}

impl ModelParams {
    /// Seeded initialization: `U(±1/sqrt(in))` linears, unit/zero batch norm,
    /// Gaussian LoRA `A` with zero `B`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let h = config.hidden;
        let lora = |in_dim: usize, rng: &mut SplitMix64| -> Result<Option<LoraAdapter>, ModelError> {
            if config.lora {
                Ok(Some(LoraAdapter::init(in_dim, h, config.rank, config.alpha, rng)?))
            } else {
                Ok(None)
            }
        };
        let proj_llm = Linear::uniform_init(config.llm_dim, h, &mut rng);
        let lora_llm = lora(config.llm_dim, &mut rng)?;
        let proj_uni = Linear::uniform_init(config.uni_dim, h, &mut rng);
        let lora_uni = lora(config.uni_dim, &mut rng)?;
        let gate = GateUnit::init(h, &mut rng);
        let refine = Linear::uniform_init(h, h, &mut rng);
        let head_hidden = Linear::uniform_init(h, config.head_width(), &mut rng);
        let head_out = Linear::uniform_init(config.head_width(), 1, &mut rng);
        Ok(Self {
            config: config.clone(),
            proj_llm,
            lora_llm,
            bn_llm: BatchNorm::new(h),
            proj_uni,
            lora_uni,
            bn_uni: BatchNorm::new(h),
            gate,
            refine,
            bn_refine: BatchNorm::new(h),
            head_hidden,
            head_out,
        })
    }

    /// All-zero weights with identity batch norm, in the shapes of `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        let mut p = Self::init(config, 0)?;
        for slot in p.slots_mut() {
            if slot.trainable {
                slot.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        for bn in [&mut p.bn_llm, &mut p.bn_uni, &mut p.bn_refine] {
            *bn = BatchNorm::new(config.hidden);
        }
        Ok(p)
    }

    /// The same network with the adapters removed.
    pub fn without_lora(&self) -> Self {
        let mut p = self.clone();
        p.lora_llm = None;
        p.lora_uni = None;
        p.config.lora = false;
        p
    }

    /// Every tensor, trainable parameters and batch-norm buffers, in a fixed order.
    pub fn slots_mut(&mut self) -> Vec<Slot<'_>> {
        let mut s = Vec::with_capacity(28);
        s.push(tensor_slot("proj_llm.weight", &mut self.proj_llm.weight, true));
        s.push(vec_slot("proj_llm.bias", &mut self.proj_llm.bias, true));
        if let Some(l) = self.lora_llm.as_mut() {
            s.push(tensor_slot("lora_llm.a", &mut l.a, true));
            s.push(tensor_slot("lora_llm.b", &mut l.b, true));
        }
        s.push(vec_slot("bn_llm.gamma", &mut self.bn_llm.gamma, true));
        s.push(vec_slot("bn_llm.beta", &mut self.bn_llm.beta, true));
        s.push(vec_slot("bn_llm.running_mean", &mut self.bn_llm.running_mean, false));
        s.push(vec_slot("bn_llm.running_var", &mut self.bn_llm.running_var, false));
        s.push(tensor_slot("proj_uni.weight", &mut self.proj_uni.weight, true));
        s.push(vec_slot("proj_uni.bias", &mut self.proj_uni.bias, true));
        if let Some(l) = self.lora_uni.as_mut() {
            s.push(tensor_slot("lora_uni.a", &mut l.a, true));
            s.push(tensor_slot("lora_uni.b", &mut l.b, true));
        }
        s.push(vec_slot("bn_uni.gamma", &mut self.bn_uni.gamma, true));
        s.push(vec_slot("bn_uni.beta", &mut self.bn_uni.beta, true));
        s.push(vec_slot("bn_uni.running_mean", &mut self.bn_uni.running_mean, false));
        s.push(vec_slot("bn_uni.running_var", &mut self.bn_uni.running_var, false));
        s.push(tensor_slot("gate.weight", &mut self.gate.weight, true));
        s.push(vec_slot("gate.bias", &mut self.gate.bias, true));
        s.push(tensor_slot("refine.weight", &mut self.refine.weight, true));
        s.push(vec_slot("refine.bias", &mut self.refine.bias, true));
        s.push(vec_slot("bn_refine.gamma", &mut self.bn_refine.gamma, true));
        s.push(vec_slot("bn_refine.beta", &mut self.bn_refine.beta, true));
        s.push(vec_slot("bn_refine.running_mean", &mut self.bn_refine.running_mean, false));
        s.push(vec_slot("bn_refine.running_var", &mut self.bn_refine.running_var, false));
        s.push(tensor_slot("head_hidden.weight", &mut self.head_hidden.weight, true));
        s.push(vec_slot("head_hidden.bias", &mut self.head_hidden.bias, true));
        s.push(tensor_slot("head_out.weight", &mut self.head_out.weight, true));
        s.push(vec_slot("head_out.bias", &mut self.head_out.bias, true));
        s
    }

    pub fn trainable_names(&self) -> Vec<&'static str> {
        self.clone().slots_mut().into_iter().filter(|s| s.trainable).map(|s| s.name).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.clone().slots_mut().iter().filter(|s| s.trainable).map(|s| s.data.len()).sum()
    }

    /// Trainable values concatenated in slot order.
    pub fn flat_trainable(&self) -> Vec<f64> {
        let mut c = self.clone();
        c.slots_mut().into_iter().filter(|s| s.trainable).flat_map(|s| s.data.to_vec()).collect()
    }

    pub fn set_flat_trainable(&mut self, values: &[f64]) {
        let mut offset = 0;
        for slot in self.slots_mut().into_iter().filter(|s| s.trainable) {
            let n = slot.data.len();
            slot.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    pub fn forward(
        &self,
        llm: &Tensor2,
        uni: &Tensor2,
        mode: Mode,
        rng: &mut SplitMix64,
    ) -> Result<ForwardPass, ModelError> {
        forward_pass(self, llm, uni, mode, rng)
    }

    /// Eval-mode predictions, one per row.
    pub fn predict(&self, llm: &Tensor2, uni: &Tensor2) -> Result<Vec<f64>, ModelError> {
        let mut rng = SplitMix64::new(0);
        Ok(self.forward(llm, uni, Mode::Eval, &mut rng)?.predictions)
    }

    /// Folds Train-mode batch statistics into the running estimates.
    pub fn commit_batch_stats(&mut self, pass: &ForwardPass) {
        self.bn_llm.commit(&pass.llm.bn);
        self.bn_uni.commit(&pass.uni.bn);
        self.bn_refine.commit(&pass.bn_refine);
    }
}

struct BranchPass {
    input: Tensor2,
    lora: Option<LoraCache>,
    pre_act: Tensor2,
    bn: BatchNormCache,
    out: Tensor2,
}

/// Intermediates of one forward evaluation, needed for backward.
pub struct ForwardPass {
    pub predictions: Vec<f64>,
    llm: BranchPass,
    uni: BranchPass,
    gate: GateCache,
    fused: Tensor2,
    refine_pre: Tensor2,
    bn_refine: BatchNormCache,
    drop: DropoutMask,
    refined: Tensor2,
    head_pre: Tensor2,
    head_act: Tensor2,
}

impl ForwardPass {
    pub fn gate_values(&self) -> &Tensor2 {
        self.gate.gate()
    }
}

fn finite(t: Tensor2, layer: &'static str) -> Result<Tensor2, ModelError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(ModelError::NonFinite { layer })
    }
}

fn branch_forward(
    x: &Tensor2,
    proj: &Linear,
    lora: Option<&LoraAdapter>,
    bn: &BatchNorm,
    mode: Mode,
    names: [&'static str; 3],
) -> Result<BranchPass, ModelError> {
    let (pre_act, lora_cache) = match lora {
        Some(l) => {
            let (y, c) = lora_forward(x, proj, l)?;
            (y, Some(c))
        }
        None => (proj.forward(x)?, None),
    };
    let pre_act = finite(pre_act, names[0])?;
    let act = finite(gelu(&pre_act), names[1])?;
    let (out, bn_cache) = bn.forward(&act, mode)?;
    let out = finite(out, names[2])?;
    Ok(BranchPass { input: x.clone(), lora: lora_cache, pre_act, bn: bn_cache, out })
}

fn forward_pass(
    p: &ModelParams,
    llm: &Tensor2,
    uni: &Tensor2,
    mode: Mode,
    rng: &mut SplitMix64,
) -> Result<ForwardPass, ModelError> {
    let cfg = &p.config;
    if llm.rows() == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if llm.cols() != cfg.llm_dim || uni.cols() != cfg.uni_dim || llm.rows() != uni.rows() {
        return Err(NdError::Shape { op: "model input", left: llm.shape(), right: uni.shape() }.into());
    }
    let llm_pass =
        branch_forward(llm, &p.proj_llm, p.lora_llm.as_ref(), &p.bn_llm, mode, ["proj_llm", "gelu_llm", "bn_llm"])?;
    let uni_pass =
        branch_forward(uni, &p.proj_uni, p.lora_uni.as_ref(), &p.bn_uni, mode, ["proj_uni", "gelu_uni", "bn_uni"])?;
    let (fused, gate) = p.gate.forward(&llm_pass.out, &uni_pass.out)?;
    let fused = finite(fused, "gate")?;

    let refine_pre = finite(p.refine.forward(&fused)?, "refine")?;
    let refine_act = gelu(&refine_pre);
    let (refine_bn, bn_refine) = p.bn_refine.forward(&refine_act, mode)?;
    let refine_bn = finite(refine_bn, "bn_refine")?;
    let (dropped, drop) = dropout(&refine_bn, cfg.dropout, mode, rng)?;
    let mut refined = fused.clone();
    refined.add_assign(&dropped)?;

    let head_pre = finite(p.head_hidden.forward(&refined)?, "head_hidden")?;
    let head_act = gelu(&head_pre);
    let out = finite(p.head_out.forward(&head_act)?, "head_out")?;
    Ok(ForwardPass {
        predictions: out.into_data(),
        llm: llm_pass,
        uni: uni_pass,
        gate,
        fused,
        refine_pre,
        bn_refine,
        drop,
        refined,
        head_pre,
        head_act,
    })
}

/// Gradients aligned with the trainable slots of [`ModelParams::slots_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<(&'static str, Vec<f64>)>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|(n, _)| *n == name).map(|(_, g)| g.as_slice())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flat_map(|(_, g)| g.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Parameter gradients plus gradients with respect to both inputs.
pub struct Backward {
    pub params: Gradients,
    pub d_llm: Tensor2,
    pub d_uni: Tensor2,
}

struct BranchGrads {
    proj_w: Tensor2,
    proj_b: Vec<f64>,
    lora: Option<(Tensor2, Tensor2)>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    dx: Tensor2,
}

fn branch_backward(
    pass: &BranchPass,
    proj: &Linear,
    lora: Option<&LoraAdapter>,
    bn: &BatchNorm,
    dout: &Tensor2,
) -> Result<BranchGrads, ModelError> {
    let (dact, bn_grads) = bn.backward(&pass.bn, dout)?;
    let dpre = gelu_backward(&pass.pre_act, &dact)?;
    let (dx, lin, lora_grads) = match (lora, &pass.lora) {
        (Some(l), Some(cache)) => {
            let (dx, lin, lg) = lora_backward(&pass.input, proj, l, cache, &dpre)?;
            (dx, lin, Some((lg.a, lg.b)))
        }
        _ => {
            let (dx, lin) = proj.backward(&pass.input, &dpre)?;
            (dx, lin, None)
        }
    };
    Ok(BranchGrads {
        proj_w: lin.weight,
        proj_b: lin.bias,
        lora: lora_grads,
        gamma: bn_grads.gamma,
        beta: bn_grads.beta,
        dx,
    })
}

impl ModelParams {
    /// Backpropagates `d_pred` (one value per row) through a recorded pass.
    pub fn backward(&self, pass: &ForwardPass, d_pred: &[f64]) -> Result<Backward, ModelError> {
        let n = pass.predictions.len();
        if d_pred.len() != n {
            return Err(ModelError::TargetLength { rows: n, targets: d_pred.len() });
        }
        let dy = Tensor2::new(n, 1, d_pred.to_vec())?;
        let (dhead_act, head_out) = self.head_out.backward(&pass.head_act, &dy)?;
        let dhead_pre = gelu_backward(&pass.head_pre, &dhead_act)?;
        let (drefined, head_hidden) = self.head_hidden.backward(&pass.refined, &dhead_pre)?;

        // refined = fused + dropout(bn(gelu(refine(fused))))
        let dbn_out = pass.drop.backward(&drefined);
        let (drefine_act, bn_refine) = self.bn_refine.backward(&pass.bn_refine, &dbn_out)?;
        let drefine_pre = gelu_backward(&pass.refine_pre, &drefine_act)?;
        let (mut dfused, refine) = self.refine.backward(&pass.fused, &drefine_pre)?;
        dfused.add_assign(&drefined)?;

        let (du, dv, gate) = self.gate.backward(&pass.llm.out, &pass.uni.out, &pass.gate, &dfused)?;
        let gl = branch_backward(&pass.llm, &self.proj_llm, self.lora_llm.as_ref(), &self.bn_llm, &du)?;
        let gu = branch_backward(&pass.uni, &self.proj_uni, self.lora_uni.as_ref(), &self.bn_uni, &dv)?;

        let mut t: Vec<(&'static str, Vec<f64>)> = Vec::with_capacity(22);
        t.push(("proj_llm.weight", gl.proj_w.into_data()));
        t.push(("proj_llm.bias", gl.proj_b));
        if let Some((a, b)) = gl.lora {
            t.push(("lora_llm.a", a.into_data()));
            t.push(("lora_llm.b", b.into_data()));
        }
        t.push(("bn_llm.gamma", gl.gamma));
        t.push(("bn_llm.beta", gl.beta));
        t.push(("proj_uni.weight", gu.proj_w.into_data()));
        t.push(("proj_uni.bias", gu.proj_b));
        if let Some((a, b)) = gu.lora {
            t.push(("lora_uni.a", a.into_data()));
            t.push(("lora_uni.b", b.into_data()));
        }
        t.push(("bn_uni.gamma", gu.gamma));
        t.push(("bn_uni.beta", gu.beta));
        t.push(("gate.weight", gate.weight.into_data()));
        t.push(("gate.bias", gate.bias));
        t.push(("refine.weight", refine.weight.into_data()));
        t.push(("refine.bias", refine.bias));
        t.push(("bn_refine.gamma", bn_refine.gamma));
        t.push(("bn_refine.beta", bn_refine.beta));
        t.push(("head_hidden.weight", head_hidden.weight.into_data()));
        t.push(("head_hidden.bias", head_hidden.bias));
        t.push(("head_out.weight", head_out.weight.into_data()));
        t.push(("head_out.bias", head_out.bias));
        Ok(Backward { params: Gradients { tensors: t }, d_llm: gl.dx, d_uni: gu.dx })
    }
}

/// Result of [`loss_and_grads`]; `pass` carries batch statistics to commit.
pub struct LossOutput {
    pub loss: f64,
    pub grads: Gradients,
    pub pass: ForwardPass,
}

/// Batch-mean loss and exact gradients for every trainable tensor.
pub fn loss_and_grads(
    params: &ModelParams,
    llm: &Tensor2,
    uni: &Tensor2,
    targets: &[f64],
    loss: LossKind,
    mode: Mode,
    rng: &mut SplitMix64,
) -> Result<LossOutput, ModelError> {
    if targets.is_empty() || llm.rows() == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if targets.len() != llm.rows() {
        return Err(ModelError::TargetLength { rows: llm.rows(), targets: targets.len() });
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(ModelError::NonFiniteTarget(i));
    }
    let pass = params.forward(llm, uni, mode, rng)?;
    let (value, d_pred) = loss.evaluate(&pass.predictions, targets);
    let back = params.backward(&pass, &d_pred)?;
    Ok(LossOutput { loss: value, grads: back.params, pass })
}
