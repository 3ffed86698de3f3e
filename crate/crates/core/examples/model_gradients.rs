//! Checks the network's analytic gradients against central differences and
//! shows that a zero LoRA `B` leaves predictions untouched.

use anyhow::Result;
use polyllmem::model::{loss_and_grads, LossKind, ModelConfig, ModelParams};
use polyllmem::ndmath::{grad_check, Mode, Tensor2, DEFAULT_EPS};
use polyllmem::rng::SplitMix64;

fn main() -> Result<()> {
    let cfg = ModelConfig { llm_dim: 12, uni_dim: 6, hidden: 8, rank: 2, alpha: 4.0, dropout: 0.0, lora: true };
    let mut rng = SplitMix64::new(3);
    let llm = Tensor2::from_fn(8, cfg.llm_dim, |_, _| rng.next_gaussian());
    let uni = Tensor2::from_fn(8, cfg.uni_dim, |_, _| rng.next_gaussian());
    let y: Vec<f64> = (0..8).map(|_| rng.next_gaussian()).collect();

    let params = ModelParams::init(&cfg, 3)?;
    println!("{} trainable values in {} tensors", params.num_trainable(), params.trainable_names().len());

    let with = params.predict(&llm, &uni)?;
    let without = params.without_lora().predict(&llm, &uni)?;
    println!("fresh adapters change predictions: {}", with != without);

    // Give B a nonzero value so its gradient path is exercised too.
    let mut trained = params.clone();
    if let Some(l) = trained.lora_llm.as_mut() {
        l.b.data_mut().iter_mut().for_each(|b| *b = 0.1 * rng.next_gaussian());
    }
    for (kind, name) in [(LossKind::Mse, "mse"), (LossKind::Mae, "mae"), (LossKind::Huber { delta: 1.0 }, "huber")] {
        let out = loss_and_grads(&trained, &llm, &uni, &y, kind, Mode::Eval, &mut SplitMix64::new(0))?;
        let loss = |w: &[f64]| {
            let mut p = trained.clone();
            p.set_flat_trainable(w);
            kind.value(&p.predict(&llm, &uni).unwrap(), &y)
        };
        let err = grad_check(loss, &trained.flat_trainable(), &out.grads.flat(), DEFAULT_EPS);
        println!("{name:<6} loss {:.5}  max relative gradient error {err:.2e}", out.loss);
    }
    Ok(())
}
