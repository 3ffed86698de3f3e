use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{Gradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = shapes.into_iter().collect();
        Self { t: 0, m: lens.iter().map(|&n| vec![0.0; n]).collect(), v: lens.iter().map(|&n| vec![0.0; n]).collect() }
    }

    pub fn for_model(params: &ModelParams) -> Self {
        let mut p = params.clone();
        Self::new(p.slots_mut().into_iter().filter(|s| s.trainable).map(|s| s.data.len()))
    }
}

/// One decoupled-weight-decay Adam update:
/// `θ ← θ − lr (m̂ / (√v̂ + eps) + wd θ)`.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    hyper: AdamHyper,
) -> Result<(), TrainError> {
    let shapes_ok = params.len() == grads.len()
        && params.len() == state.m.len()
        && params.iter().zip(grads).zip(&state.m).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(TrainError::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + weight_decay * p[i]);
        }
    }
    Ok(())
}

/// [`adamw_step`] over every trainable tensor of a model.
pub fn adamw_step_model(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    hyper: AdamHyper,
) -> Result<(), TrainError> {
    let mut slots: Vec<_> = params.slots_mut().into_iter().filter(|s| s.trainable).collect();
    if slots.len() != grads.tensors.len() || slots.iter().zip(&grads.tensors).any(|(s, (n, _))| s.name != *n) {
        return Err(TrainError::ShapeMismatch("gradient names do not match parameters".into()));
    }
    let mut views: Vec<&mut [f64]> = slots.iter_mut().map(|s| &mut *s.data).collect();
    let g: Vec<&[f64]> = grads.tensors.iter().map(|(_, g)| g.as_slice()).collect();
    adamw_step(&mut views, &g, state, lr, weight_decay, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut p = [theta];
        let mut state = AdamState::new([1]);
        adamw_step(&mut [&mut p[..]], &[&[g][..]], &mut state, lr, wd, AdamHyper::default()).unwrap();
        p[0]
    }

    #[test]
    fn zero_gradient_no_decay_is_fixed_point() {
        assert_eq!(step(0.7, 0.0, 0.1, 0.0), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert_eq!(step(0.0, 1.0, 0.1, 0.0), expected);
        assert!((step(0.0, 1.0, 0.1, 0.0) + 0.1).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay() {
        assert!((step(1.0, 0.0, 0.1, 0.1) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = [0.0, 1.0];
        let mut state = AdamState::new([1]);
        let err = adamw_step(&mut [&mut p[..]], &[&[0.0, 0.0][..]], &mut state, 0.1, 0.0, AdamHyper::default());
        assert!(matches!(err, Err(TrainError::ShapeMismatch(_))));
    }

    #[test]
    fn matches_reference_trace() {
        // Hand-unrolled three steps of the update rule.
        let grads = [0.5, -1.0, 2.0];
        let (lr, wd, b1, b2, eps) = (0.01, 0.1, 0.9, 0.999, 1e-8);
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            th -= lr * (mh / (vh.sqrt() + eps) + wd * th);
        }
        let mut p = [1.0];
        let mut state = AdamState::new([1]);
        for g in grads {
            adamw_step(&mut [&mut p[..]], &[&[g][..]], &mut state, lr, wd, AdamHyper::default()).unwrap();
        }
        assert!((p[0] - th).abs() < 1e-15);
    }
}
