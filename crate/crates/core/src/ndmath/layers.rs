//! Layers with explicit forward and backward passes.
//!
//! Forward passes are pure and hand back a cache; backward passes consume that
//! cache together with the upstream gradient. Batch-norm running statistics
//! change only through [`BatchNorm::commit`].

use serde::{Deserialize, Serialize};

use super::{NdError, Tensor2};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------- linear

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: Tensor2, bias: Vec<f64>) -> Result<Self, NdError> {
        if bias.len() != weight.rows() {
            return Err(NdError::Shape { op: "linear bias", left: weight.shape(), right: (1, bias.len()) });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weight: Tensor2::zeros(out_dim, in_dim), bias: vec![0.0; out_dim] }
    }

    /// Weights and bias drawn from `U(±1/sqrt(in_dim))`.
    pub fn uniform_init(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Tensor2::from_fn(out_dim, in_dim, |_, _| (2.0 * rng.next_f64() - 1.0) * bound);
        let bias = (0..out_dim).map(|_| (2.0 * rng.next_f64() - 1.0) * bound).collect();
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `y = x Wᵀ + b`
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2, NdError> {
        let mut y = x.matmul_nt(&self.weight)?;
        y.add_row_vector(&self.bias)?;
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor2, dy: &Tensor2) -> Result<(Tensor2, LinearGrads), NdError> {
        let dx = dy.matmul(&self.weight)?;
        let weight = dy.matmul_tn(x)?;
        Ok((dx, LinearGrads { weight, bias: dy.col_sums() }))
    }
}

// ---------------------------------------------------------------- gelu

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF via `erf`.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Exact-erf GELU, `x Φ(x)`.
pub fn gelu(x: &Tensor2) -> Tensor2 {
    x.map(gelu_scalar)
}

pub fn gelu_backward(x: &Tensor2, dy: &Tensor2) -> Result<Tensor2, NdError> {
    x.zip_with(dy, "gelu_backward", |x, g| g * gelu_grad_scalar(x))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------- batch norm

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    xhat: Tensor2,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Train mode normalizes with batch statistics (biased variance); Eval uses
    /// the running statistics.
    pub fn forward(&self, x: &Tensor2, mode: Mode) -> Result<(Tensor2, BatchNormCache), NdError> {
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(NdError::Shape { op: "batchnorm", left: x.shape(), right: (1, self.dim()) });
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NdError::BatchTooSmall { n });
                }
                let mean = x.col_means();
                let mut var = vec![0.0; d];
                for i in 0..n {
                    for (j, v) in var.iter_mut().enumerate() {
                        *v += (x.get(i, j) - mean[j]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let xhat = Tensor2::from_fn(n, d, |i, j| (x.get(i, j) - mean[j]) * inv_std[j]);
        let y = Tensor2::from_fn(n, d, |i, j| self.gamma[j] * xhat.get(i, j) + self.beta[j]);
        Ok((y, BatchNormCache { mode, xhat, inv_std, batch_mean: mean, batch_var: var }))
    }

    /// Folds a Train-mode batch into the running statistics.
    pub fn commit(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for j in 0..self.dim() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * cache.batch_mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * cache.batch_var[j];
        }
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor2) -> Result<(Tensor2, BatchNormGrads), NdError> {
        let (n, d) = cache.xhat.shape();
        if dy.shape() != (n, d) {
            return Err(NdError::Shape { op: "batchnorm_backward", left: (n, d), right: dy.shape() });
        }
        let mut dgamma = vec![0.0; d];
        let dbeta = dy.col_sums();
        for i in 0..n {
            for (j, g) in dgamma.iter_mut().enumerate() {
                *g += dy.get(i, j) * cache.xhat.get(i, j);
            }
        }
        let dx = match cache.mode {
            Mode::Eval => Tensor2::from_fn(n, d, |i, j| dy.get(i, j) * self.gamma[j] * cache.inv_std[j]),
            Mode::Train => {
                // dxhat = dy γ; dx = inv_std/n (n dxhat - Σ dxhat - xhat Σ dxhat·xhat)
                let nf = n as f64;
                let sum_dxhat: Vec<f64> = dbeta.iter().zip(&self.gamma).map(|(b, g)| b * g).collect();
                let sum_dxhat_xhat: Vec<f64> = dgamma.iter().zip(&self.gamma).map(|(a, g)| a * g).collect();
                Tensor2::from_fn(n, d, |i, j| {
                    let dxhat = dy.get(i, j) * self.gamma[j];
                    cache.inv_std[j] / nf * (nf * dxhat - sum_dxhat[j] - cache.xhat.get(i, j) * sum_dxhat_xhat[j])
                })
            }
        };
        Ok((dx, BatchNormGrads { gamma: dgamma, beta: dbeta }))
    }
}

// ---------------------------------------------------------------- dropout

/// Keep-mask scaled by `1/(1-p)`; `None` means the layer was the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn backward(&self, dy: &Tensor2) -> Tensor2 {
        match &self.0 {
            None => dy.clone(),
            Some(mask) => {
                let data = dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor2::new(dy.rows(), dy.cols(), data).expect("mask matches forward shape")
            }
        }
    }
}

/// Inverted dropout. Draws from `rng` only in Train mode with `p > 0`.
pub fn dropout(x: &Tensor2, p: f64, mode: Mode, rng: &mut SplitMix64) -> Result<(Tensor2, DropoutMask), NdError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NdError::InvalidProbability(p));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), DropoutMask(None)));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.data().len()).map(|_| if rng.next_f64() >= p { keep } else { 0.0 }).collect();
    let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((Tensor2::new(x.rows(), x.cols(), data)?, DropoutMask(Some(mask))))
}

// ---------------------------------------------------------------- LoRA

/// Low-rank additive update `(alpha/r) · B A` to a linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `r × in`
    pub a: Tensor2,
    /// `out × r`
    pub b: Tensor2,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct LoraCache {
    /// `x Aᵀ`, `n × r`
    h: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub a: Tensor2,
    pub b: Tensor2,
}

impl LoraAdapter {
    pub fn new(a: Tensor2, b: Tensor2, alpha: f64) -> Result<Self, NdError> {
        let rank = a.rows();
        if b.cols() != rank {
            return Err(NdError::Shape { op: "lora", left: a.shape(), right: b.shape() });
        }
        if rank == 0 || rank > a.cols().min(b.rows()) {
            return Err(NdError::InvalidRank { rank, in_dim: a.cols(), out_dim: b.rows() });
        }
        if !(alpha > 0.0) {
            return Err(NdError::InvalidAlpha(alpha));
        }
        Ok(Self { a, b, alpha })
    }

    /// `A ~ N(0, 1/in)`, `B = 0`: the adapter starts as an exact no-op.
    pub fn init(in_dim: usize, out_dim: usize, rank: usize, alpha: f64, rng: &mut SplitMix64) -> Result<Self, NdError> {
        let std = 1.0 / (in_dim as f64).sqrt();
        let a = Tensor2::from_fn(rank, in_dim, |_, _| rng.next_gaussian() * std);
        Self::new(a, Tensor2::zeros(out_dim, rank), alpha)
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn delta(&self, x: &Tensor2) -> Result<(Tensor2, LoraCache), NdError> {
        let h = x.matmul_nt(&self.a)?;
        let delta = h.matmul_nt(&self.b)?.scale(self.scale());
        Ok((delta, LoraCache { h }))
    }

    pub fn delta_backward(
        &self,
        x: &Tensor2,
        cache: &LoraCache,
        dy: &Tensor2,
    ) -> Result<(Tensor2, LoraGrads), NdError> {
        let s = self.scale();
        let b = dy.matmul_tn(&cache.h)?.scale(s);
        let dh = dy.matmul(&self.b)?.scale(s);
        let a = dh.matmul_tn(x)?;
        let dx = dh.matmul(&self.a)?;
        Ok((dx, LoraGrads { a, b }))
    }
}

/// `y = base(x) + (alpha/r) (x Aᵀ) Bᵀ`
pub fn lora_forward(x: &Tensor2, base: &Linear, lora: &LoraAdapter) -> Result<(Tensor2, LoraCache), NdError> {
    if lora.a.cols() != base.in_dim() || lora.b.rows() != base.out_dim() {
        return Err(NdError::Shape {
            op: "lora_forward",
            left: base.weight.shape(),
            right: (lora.b.rows(), lora.a.cols()),
        });
    }
    let mut y = base.forward(x)?;
    let (delta, cache) = lora.delta(x)?;
    y.add_assign(&delta)?;
    Ok((y, cache))
}

pub fn lora_backward(
    x: &Tensor2,
    base: &Linear,
    lora: &LoraAdapter,
    cache: &LoraCache,
    dy: &Tensor2,
) -> Result<(Tensor2, LinearGrads, LoraGrads), NdError> {
    let (mut dx, base_grads) = base.backward(x, dy)?;
    let (dx_lora, lora_grads) = lora.delta_backward(x, cache, dy)?;
    dx.add_assign(&dx_lora)?;
    Ok((dx, base_grads, lora_grads))
}

// ---------------------------------------------------------------- gated fusion

/// Per-dimension sigmoid gate over the concatenation of two branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateUnit {
    /// `h × 2h`
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GateCache {
    g: Tensor2,
}

impl GateCache {
    pub fn gate(&self) -> &Tensor2 {
        &self.g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateGrads {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl GateUnit {
    pub fn new(weight: Tensor2, bias: Vec<f64>) -> Result<Self, NdError> {
        let h = weight.rows();
        if weight.cols() != 2 * h || bias.len() != h {
            return Err(NdError::Shape { op: "gate", left: weight.shape(), right: (1, bias.len()) });
        }
        Ok(Self { weight, bias })
    }

    pub fn init(hidden: usize, rng: &mut SplitMix64) -> Self {
        let lin = Linear::uniform_init(2 * hidden, hidden, rng);
        Self { weight: lin.weight, bias: lin.bias }
    }

    pub fn hidden(&self) -> usize {
        self.weight.rows()
    }

    /// `g = σ([u v] Wgᵀ + bg)`, `out = g ⊙ u + (1 − g) ⊙ v`.
    pub fn forward(&self, u: &Tensor2, v: &Tensor2) -> Result<(Tensor2, GateCache), NdError> {
        if u.shape() != v.shape() || u.cols() != self.hidden() {
            return Err(NdError::Shape { op: "gated_fuse", left: u.shape(), right: v.shape() });
        }
        let mut z = u.hcat(v)?.matmul_nt(&self.weight)?;
        z.add_row_vector(&self.bias)?;
        let g = z.map(sigmoid);
        let out = Tensor2::from_fn(u.rows(), u.cols(), |i, j| {
            let gij = g.get(i, j);
            gij * u.get(i, j) + (1.0 - gij) * v.get(i, j)
        });
        Ok((out, GateCache { g }))
    }

    pub fn backward(
        &self,
        u: &Tensor2,
        v: &Tensor2,
        cache: &GateCache,
        dy: &Tensor2,
    ) -> Result<(Tensor2, Tensor2, GateGrads), NdError> {
        let h = self.hidden();
        let g = &cache.g;
        let dz = Tensor2::from_fn(u.rows(), h, |i, j| {
            let gij = g.get(i, j);
            dy.get(i, j) * (u.get(i, j) - v.get(i, j)) * gij * (1.0 - gij)
        });
        let dcat = dz.matmul(&self.weight)?;
        let du = Tensor2::from_fn(u.rows(), h, |i, j| dy.get(i, j) * g.get(i, j) + dcat.get(i, j));
        let dv = Tensor2::from_fn(u.rows(), h, |i, j| dy.get(i, j) * (1.0 - g.get(i, j)) + dcat.get(i, h + j));
        let weight = dz.matmul_tn(&u.hcat(v)?)?;
        Ok((du, dv, GateGrads { weight, bias: dz.col_sums() }))
    }
}

/// Pointwise gated fusion; see [`GateUnit::forward`].
pub fn gated_fuse(u: &Tensor2, v: &Tensor2, gate: &GateUnit) -> Result<Tensor2, NdError> {
    gate.forward(u, v).map(|(out, _)| out)
}

// ---------------------------------------------------------------- pooling

/// Mean over rows, `n × d → 1 × d`.
pub fn mean_pool_rows(x: &Tensor2) -> Tensor2 {
    Tensor2::new(1, x.cols(), x.col_means()).expect("row vector")
}

pub fn mean_pool_rows_backward(dy: &Tensor2, n: usize) -> Tensor2 {
    let inv = 1.0 / n as f64;
    Tensor2::from_fn(n, dy.cols(), |_, j| dy.get(0, j) * inv)
}
