//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use polyllmem::attribution::{attribute, integrated_gradients, normalize_by_star, LinearProbe, ModelScorer};
use polyllmem::embed_store::{
    decode_matrix, decode_tokens, encode_matrix, encode_tokens, read_matrix, read_tokens, synth_token_embeddings,
    write_matrix, write_tokens, EmbeddingMatrix, EmbeddingMeta, EmbeddingRecord, Modality, PlantSpec, StoreError,
    TokenEmbeddingSet, TokenRecord,
};
use polyllmem::model::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, loss_and_grads, save_checkpoint, CheckpointMeta, LossKind,
    ModelConfig, ModelParams,
};
use polyllmem::ndmath::{
    gelu, gelu_backward, grad_check, lora_backward, lora_forward, mean_pool_rows, mean_pool_rows_backward, BatchNorm,
    GateUnit, Linear, LoraAdapter, Mode, Tensor2, DEFAULT_EPS,
};
use polyllmem::pipeline::{make_split, test_size};
use polyllmem::psmiles::{build_merge_map, cap, generate_corpus, join, merge_scores, tokenize};
use polyllmem::rng::SplitMix64;
use polyllmem::trainer::{
    mae, planted_task, r2, ridge_cv, train_cv, CvOptions, PlantedOptions, TrainConfig, DEFAULT_LAMBDAS,
};

type Check = fn() -> Result<String>;

fn main() {
    let checks: [(&str, Check); 10] = [
        ("gradient fidelity", ac1_gradients),
        ("LoRA identity", ac2_lora_identity),
        ("planted-signal recovery", ac3_planted),
        ("null control", ac4_null),
        ("IG correctness", ac5_ig),
        ("split laws", ac6_split),
        ("metric oracles", ac7_metrics),
        ("format round-trips", ac8_formats),
        ("PSMILES suite", ac9_psmiles),
        ("determinism under parallelism", ac10_parallel),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("AC{} PASS {name}: {detail} ({secs:.1}s)", i + 1),
            Err(e) => {
                failed += 1;
                println!("AC{} FAIL {name}: {e:#} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<()> {
    let elapsed = start.elapsed();
    ensure!(elapsed < limit, "{what} took {elapsed:?}, limit {limit:?}");
    Ok(())
}

fn gaussian(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.next_gaussian())
}

/// Random values in every tensor; running variances stay positive.
fn randomize(p: &mut ModelParams, rng: &mut SplitMix64, keep_lora_b: bool) {
    for slot in p.slots_mut() {
        if keep_lora_b && slot.name.starts_with("lora_") && slot.name.ends_with(".b") {
            continue;
        }
        for x in slot.data.iter_mut() {
            *x = if slot.name.ends_with("running_var") {
                0.5 + rng.next_f64()
            } else if slot.name.ends_with("gamma") {
                1.0 + 0.3 * rng.next_gaussian()
            } else {
                0.5 * rng.next_gaussian()
            };
        }
    }
}

fn weighted_sum(y: &Tensor2, c: &Tensor2) -> f64 {
    y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

fn ac1_gradients() -> Result<String> {
    let start = Instant::now();
    let cfg = ModelConfig { llm_dim: 7, uni_dim: 5, hidden: 8, rank: 2, alpha: 4.0, dropout: 0.0, lora: true };
    let mut worst_model: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = SplitMix64::new(500 + seed);
        let mut p = ModelParams::init(&cfg, seed)?;
        randomize(&mut p, &mut rng, false);
        let llm = gaussian(6, cfg.llm_dim, &mut rng);
        let uni = gaussian(6, cfg.uni_dim, &mut rng);
        let y: Vec<f64> = (0..6).map(|_| rng.next_gaussian()).collect();
        let out = loss_and_grads(&p, &llm, &uni, &y, LossKind::Mse, Mode::Eval, &mut SplitMix64::new(0))?;
        let loss = |w: &[f64]| {
            let mut q = p.clone();
            q.set_flat_trainable(w);
            LossKind::Mse.value(&q.predict(&llm, &uni).unwrap(), &y)
        };
        worst_model = worst_model.max(grad_check(loss, &p.flat_trainable(), &out.grads.flat(), DEFAULT_EPS));
    }
    ensure!(worst_model < 1e-4, "full-model relative error {worst_model:e}");

    let worst_layer = layer_checks()?;
    ensure!(worst_layer < 1e-5, "per-layer relative error {worst_layer:e}");
    within(start, Duration::from_secs(60), "gradient checks")?;
    Ok(format!("model max rel err {worst_model:.1e} over 20 seeds, layers {worst_layer:.1e}"))
}

/// Input and parameter gradients of each layer against central differences
/// of `Σ c ⊙ layer(x)`.
fn layer_checks() -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut track = |e: f64| worst = worst.max(e);
    for seed in 0..5u64 {
        let mut rng = SplitMix64::new(900 + seed);
        let (n, din, dout) = (5, 6, 4);
        let x = gaussian(n, din, &mut rng);
        let c = gaussian(n, dout, &mut rng);

        let lin = Linear::new(gaussian(dout, din, &mut rng), (0..dout).map(|_| rng.next_gaussian()).collect())?;
        let (dx, g) = lin.backward(&x, &c)?;
        track(grad_check(
            |v| weighted_sum(&lin.forward(&Tensor2::new(n, din, v.to_vec()).unwrap()).unwrap(), &c),
            x.data(),
            dx.data(),
            DEFAULT_EPS,
        ));
        track(grad_check(
            |v| {
                let l = Linear::new(Tensor2::new(dout, din, v.to_vec()).unwrap(), lin.bias.clone()).unwrap();
                weighted_sum(&l.forward(&x).unwrap(), &c)
            },
            lin.weight.data(),
            g.weight.data(),
            DEFAULT_EPS,
        ));

        let lora = LoraAdapter::new(gaussian(2, din, &mut rng), gaussian(dout, 2, &mut rng), 4.0)?;
        let (_, cache) = lora_forward(&x, &lin, &lora)?;
        let (dx, _, lg) = lora_backward(&x, &lin, &lora, &cache, &c)?;
        let lora_out = |x: &Tensor2, l: &LoraAdapter| weighted_sum(&lora_forward(x, &lin, l).unwrap().0, &c);
        track(grad_check(
            |v| lora_out(&Tensor2::new(n, din, v.to_vec()).unwrap(), &lora),
            x.data(),
            dx.data(),
            DEFAULT_EPS,
        ));
        track(grad_check(
            |v| {
                lora_out(&x, &LoraAdapter::new(Tensor2::new(2, din, v.to_vec()).unwrap(), lora.b.clone(), 4.0).unwrap())
            },
            lora.a.data(),
            lg.a.data(),
            DEFAULT_EPS,
        ));
        track(grad_check(
            |v| {
                lora_out(
                    &x,
                    &LoraAdapter::new(lora.a.clone(), Tensor2::new(dout, 2, v.to_vec()).unwrap(), 4.0).unwrap(),
                )
            },
            lora.b.data(),
            lg.b.data(),
            DEFAULT_EPS,
        ));

        let cx = gaussian(n, din, &mut rng);
        let dx = gelu_backward(&x, &cx)?;
        track(grad_check(
            |v| weighted_sum(&gelu(&Tensor2::new(n, din, v.to_vec()).unwrap()), &cx),
            x.data(),
            dx.data(),
            DEFAULT_EPS,
        ));

        let mut bn = BatchNorm::new(din);
        bn.gamma = (0..din).map(|_| 1.0 + 0.3 * rng.next_gaussian()).collect();
        bn.beta = (0..din).map(|_| rng.next_gaussian()).collect();
        bn.running_mean = (0..din).map(|_| rng.next_gaussian()).collect();
        bn.running_var = (0..din).map(|_| 0.5 + rng.next_f64()).collect();
        for mode in [Mode::Train, Mode::Eval] {
            let (_, cache) = bn.forward(&x, mode)?;
            let (dx, bg) = bn.backward(&cache, &cx)?;
            let bn_out = |x: &Tensor2, b: &BatchNorm| weighted_sum(&b.forward(x, mode).unwrap().0, &cx);
            track(grad_check(
                |v| bn_out(&Tensor2::new(n, din, v.to_vec()).unwrap(), &bn),
                x.data(),
                dx.data(),
                DEFAULT_EPS,
            ));
            track(grad_check(
                |v| bn_out(&x, &BatchNorm { gamma: v.to_vec(), ..bn.clone() }),
                &bn.gamma,
                &bg.gamma,
                DEFAULT_EPS,
            ));
        }

        let h = 4;
        let gate = GateUnit::new(gaussian(h, 2 * h, &mut rng), (0..h).map(|_| rng.next_gaussian()).collect())?;
        let u = gaussian(n, h, &mut rng);
        let v = gaussian(n, h, &mut rng);
        let (_, gc) = gate.forward(&u, &v)?;
        let (du, dv, gg) = gate.backward(&u, &v, &gc, &c)?;
        let fuse = |u: &Tensor2, v: &Tensor2, g: &GateUnit| weighted_sum(&g.forward(u, v).unwrap().0, &c);
        track(grad_check(
            |w| fuse(&Tensor2::new(n, h, w.to_vec()).unwrap(), &v, &gate),
            u.data(),
            du.data(),
            DEFAULT_EPS,
        ));
        track(grad_check(
            |w| fuse(&u, &Tensor2::new(n, h, w.to_vec()).unwrap(), &gate),
            v.data(),
            dv.data(),
            DEFAULT_EPS,
        ));
        track(grad_check(
            |w| fuse(&u, &v, &GateUnit::new(Tensor2::new(h, 2 * h, w.to_vec()).unwrap(), gate.bias.clone()).unwrap()),
            gate.weight.data(),
            gg.weight.data(),
            DEFAULT_EPS,
        ));

        let cp = gaussian(1, din, &mut rng);
        let dx = mean_pool_rows_backward(&cp, n);
        track(grad_check(
            |w| weighted_sum(&mean_pool_rows(&Tensor2::new(n, din, w.to_vec()).unwrap()), &cp),
            x.data(),
            dx.data(),
            DEFAULT_EPS,
        ));
    }
    Ok(worst)
}

fn ac2_lora_identity() -> Result<String> {
    let mut rng = SplitMix64::new(2);
    for trial in 0..100u64 {
        let cfg = ModelConfig {
            llm_dim: 4 + rng.below(12) as usize,
            uni_dim: 4 + rng.below(8) as usize,
            hidden: 4 + 2 * rng.below(6) as usize,
            rank: 1 + rng.below(4) as usize,
            alpha: 1.0 + 15.0 * rng.next_f64(),
            dropout: 0.0,
            lora: true,
        };
        let mut p = ModelParams::init(&cfg, trial)?;
        randomize(&mut p, &mut rng, true);
        ensure!(p.lora_llm.as_ref().is_some_and(|l| l.b.data().iter().all(|&b| b == 0.0)), "B not zero");
        let llm = gaussian(3, cfg.llm_dim, &mut rng);
        let uni = gaussian(3, cfg.uni_dim, &mut rng);
        let with = p.predict(&llm, &uni)?;
        let without = p.without_lora().predict(&llm, &uni)?;
        let same = with.iter().zip(&without).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "trial {trial}: {with:?} != {without:?}");
    }
    Ok("100 random inputs bitwise equal".into())
}

/// Configuration used for the planted and null runs.
fn planted_config() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        hidden: 32,
        rank: 4,
        alpha: 8.0,
        lr: 1e-3,
        dropout: 0.0,
        weight_decay: 2.0,
        patience_early: 50,
        patience_lr: 15,
        ..TrainConfig::default()
    }
}

fn ac3_planted() -> Result<String> {
    let start = Instant::now();
    let task = planted_task(&PlantedOptions::default())?;
    let data = task.train_data("Tg")?;
    let config = planted_config();
    let report = train_cv(&data, &config, &CvOptions::default())?;
    let ridge = ridge_cv(&data, config.seed, &DEFAULT_LAMBDAS)?;
    let detail = format!("R2 {:.4} ± {:.4}, ridge {:.4}", report.r2_mean, report.r2_std, ridge.r2_mean);
    ensure!(report.r2_mean >= 0.95, "{detail}: below 0.95");
    ensure!((report.r2_mean - ridge.r2_mean).abs() <= 0.05, "{detail}: more than 0.05 from ridge");
    within(start, Duration::from_secs(300), "planted run")?;
    Ok(detail)
}

fn ac4_null() -> Result<String> {
    let task = planted_task(&PlantedOptions { null: true, ..PlantedOptions::default() })?;
    let report = train_cv(&task.train_data("Tg")?, &planted_config(), &CvOptions::default())?;
    ensure!(report.r2_mean <= 0.1, "mean R2 {:.4} above 0.1", report.r2_mean);
    Ok(format!("mean R2 {:.4}", report.r2_mean))
}

fn ac5_ig() -> Result<String> {
    let mut rng = SplitMix64::new(5);
    let mut worst_probe: f64 = 0.0;
    for _ in 0..20 {
        let (n_tok, d) = (1 + rng.below(12) as usize, 1 + rng.below(16) as usize);
        let probe = LinearProbe { weights: (0..d).map(|_| rng.next_gaussian()).collect(), bias: rng.next_gaussian() };
        let tokens = gaussian(n_tok, d, &mut rng);
        for steps in [1, 2, 7, 64, 256] {
            let ig = integrated_gradients(&probe, &tokens, steps)?;
            for (k, s) in ig.scores.iter().enumerate() {
                let expected: f64 =
                    tokens.row(k).iter().zip(&probe.weights).map(|(x, w)| x * w).sum::<f64>() / n_tok as f64;
                worst_probe = worst_probe.max((s - expected).abs());
            }
        }
    }
    ensure!(worst_probe <= 1e-12, "linear-probe error {worst_probe:e}");

    let dir = tempfile::tempdir()?;
    let task = planted_task(&PlantedOptions { n: 200, llm_dim: 24, uni_dim: 8, ..PlantedOptions::default() })?;
    let config = TrainConfig {
        hidden: 16,
        rank: 2,
        alpha: 4.0,
        lr: 1e-3,
        dropout: 0.0,
        weight_decay: 1.0,
        max_epochs: 60,
        ..TrainConfig::default()
    };
    let options = CvOptions { checkpoint_dir: Some(dir.path().to_path_buf()), ..CvOptions::default() };
    train_cv(&task.train_data("Tg")?, &config, &options)?;
    let ck = load_checkpoint(dir.path().join("Tg_fold0.plym"))?;
    let meta = EmbeddingMeta::new(Modality::TextLlm, 24, "tokens");
    let token_set = synth_token_embeddings(&task.ids, &task.psmiles, &meta, 42, Some(&PlantSpec::standard()))?;
    let mut worst_gap: f64 = 0.0;
    for rec in token_set.records.iter().take(25) {
        let uni: Vec<f64> = task.uni.get(&rec.id).context("uni vector")?.iter().map(|&v| f64::from(v)).collect();
        let scorer = ModelScorer::for_checkpoint(&ck, uni)?;
        let vectors = Tensor2::new(rec.n_tokens(), 24, rec.vectors.iter().map(|&v| f64::from(v)).collect())?;
        let a = attribute(&scorer, &rec.id, &rec.tokens, &vectors, 256, None)?;
        let rel = a.completeness_gap / (a.f_input - a.f_baseline).abs();
        worst_gap = worst_gap.max(rel);
    }
    ensure!(worst_gap < 0.01, "completeness gap {:.3}% of |F(x) - F(0)|", 100.0 * worst_gap);

    let tokens: Vec<String> = tokenize("[*]CC(Cl)c1ccccc1[*]")?.into_iter().map(|t| t.text).collect();
    let d = 8;
    for trial in 0..20 {
        let probe = LinearProbe { weights: (0..d).map(|_| rng.next_gaussian()).collect(), bias: 0.0 };
        let vectors = gaussian(tokens.len(), d, &mut rng);
        let base = normalize_by_star(&attribute(&probe, "p", &tokens, &vectors, 16, None)?)?;
        for shift in [-3, 1, 5] {
            let c = 2f64.powi(shift);
            let scaled = LinearProbe { weights: probe.weights.iter().map(|w| w * c).collect(), bias: 0.0 };
            let other = normalize_by_star(&attribute(&scaled, "p", &tokens, &vectors, 16, None)?)?;
            ensure!(
                other.normalized_scores == base.normalized_scores,
                "trial {trial}: normalization not scale invariant"
            );
        }
    }
    Ok(format!("probe err {worst_probe:.1e}, max completeness gap {:.4}% at m=256", 100.0 * worst_gap))
}

fn ac6_split() -> Result<String> {
    for n in 10..=5000usize {
        let expected = (n as f64 * 15.0 / 100.0).round() as usize;
        ensure!(test_size(n) == expected, "n={n}: test size {} expected {expected}", test_size(n));
    }
    let mut rng = SplitMix64::new(6);
    for _ in 0..1000 {
        let n = 10 + rng.below(1991) as usize;
        let seed = rng.next_u64();
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let plan = make_split(&ids, seed)?;
        let expected_test = (n as f64 * 15.0 / 100.0).round() as usize;
        ensure!(
            plan.test_ids.len() == expected_test,
            "n={n}: {} test ids, expected {expected_test}",
            plan.test_ids.len()
        );
        ensure!(plan.train_ids.len() == n - expected_test, "n={n}: train size");
        let mut all: Vec<&String> = plan.test_ids.iter().chain(plan.folds.iter().flatten()).collect();
        all.sort();
        all.dedup();
        ensure!(all.len() == n, "n={n}: test and folds do not partition the ids");
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        ensure!(plan.folds.len() == 5 && hi - lo <= 1, "n={n}: fold sizes {sizes:?}");
        let again = make_split(&ids, seed)?;
        ensure!(serde_json::to_vec(&plan)? == serde_json::to_vec(&again)?, "n={n}: split not deterministic");
    }
    Ok("test sizes exact for n in 10..=5000, laws hold on 1000 random (n, seed) pairs".into())
}

/// R² as one division of exact integer sums.
fn r2_oracle(y: &[i64], y_hat: &[i64]) -> f64 {
    let n = y.len() as i128;
    let sum: i128 = y.iter().map(|&v| v as i128).sum();
    let sum_sq: i128 = y.iter().map(|&v| (v as i128).pow(2)).sum();
    let ss_res: i128 = y.iter().zip(y_hat).map(|(&a, &b)| ((a - b) as i128).pow(2)).sum();
    1.0 - (n * ss_res) as f64 / (n * sum_sq - sum * sum) as f64
}

fn ac7_metrics() -> Result<String> {
    ensure!(r2(&[0.0, 1.0], &[1.0, 0.0])? == -3.0, "y=[0,1], y_hat=[1,0] must give -3");
    let mut rng = SplitMix64::new(7);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let n = 2 + rng.below(60) as usize;
        let y: Vec<i64> = (0..n).map(|_| rng.below(201) as i64 - 100).collect();
        let y_hat: Vec<i64> = (0..n).map(|_| rng.below(201) as i64 - 100).collect();
        if y.iter().all(|&v| v == y[0]) {
            continue;
        }
        // A power-of-two scale keeps both sides exact in f64.
        let scale = 2f64.powi(rng.below(7) as i32 - 3);
        let yf: Vec<f64> = y.iter().map(|&v| v as f64 * scale).collect();
        let yhf: Vec<f64> = y_hat.iter().map(|&v| v as f64 * scale).collect();
        worst = worst.max((r2(&yf, &yhf)? - r2_oracle(&y, &y_hat)).abs());
        let abs_sum: i64 = y.iter().zip(&y_hat).map(|(a, b)| (a - b).abs()).sum();
        worst = worst.max((mae(&yf, &yhf)? - abs_sum as f64 * scale / n as f64).abs());
        done += 1;
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

fn expect_store_code(result: Result<impl std::fmt::Debug, StoreError>, code: &str) -> Result<()> {
    match result {
        Err(e) if e.code() == code => Ok(()),
        other => bail!("expected {code}, got {other:?}"),
    }
}

fn ac8_formats() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let mut rng = SplitMix64::new(8);
    let meta = EmbeddingMeta::new(Modality::Structure3d, 3, "t");
    let records = ["a", "b"]
        .iter()
        .map(|id| EmbeddingRecord { id: id.to_string(), vector: (0..3).map(|_| rng.next_gaussian() as f32).collect() })
        .collect();
    let matrix = EmbeddingMatrix::new(meta, records)?;
    let tokens = TokenEmbeddingSet::new(
        EmbeddingMeta::new(Modality::TextLlm, 2, "t"),
        vec![TokenRecord {
            id: "a".into(),
            tokens: vec!["[*]".into(), "C".into()],
            vectors: vec![0.5, -1.0, 2.0, 0.25],
        }],
    )?;
    let cfg = ModelConfig { llm_dim: 6, uni_dim: 4, hidden: 6, rank: 2, alpha: 4.0, dropout: 0.1, lora: true };
    let mut params = ModelParams::init(&cfg, 8)?;
    randomize(&mut params, &mut rng, false);
    let ck_meta = CheckpointMeta {
        property: "Tg".into(),
        epoch: 3,
        val_loss: 0.25,
        seed: 8,
        fold: Some(1),
        target_mean: 1.5,
        target_std: 2.0,
        log_scale: false,
    };

    let twice =
        |name: &str, write: &dyn Fn(&Path) -> Result<()>, reread: &dyn Fn(&Path, &Path) -> Result<()>| -> Result<()> {
            let first = dir.path().join(format!("{name}.1"));
            let second = dir.path().join(format!("{name}.2"));
            write(&first)?;
            reread(&first, &second)?;
            ensure!(std::fs::read(&first)? == std::fs::read(&second)?, "{name} bytes differ after round trip");
            Ok(())
        };
    twice("plye", &|p| Ok(write_matrix(&matrix, p)?), &|a, b| Ok(write_matrix(&read_matrix(a)?, b)?))?;
    twice("plyt", &|p| Ok(write_tokens(&tokens, p)?), &|a, b| Ok(write_tokens(&read_tokens(a)?, b)?))?;
    twice("plym", &|p| Ok(save_checkpoint(&params, &ck_meta, p)?), &|a, b| {
        let ck = load_checkpoint(a)?;
        Ok(save_checkpoint(&ck.params, &ck.meta, b)?)
    })?;

    let plye = encode_matrix(&matrix)?;
    let header = 23;
    let record = 2 + 1 + 12;
    let patched = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = plye.clone();
        f(&mut b);
        b
    };
    expect_store_code(decode_matrix(&patched(&|b| b[0] = b'X')), "BadMagic")?;
    expect_store_code(decode_matrix(&patched(&|b| b[4] = 9)), "VersionMismatch")?;
    expect_store_code(decode_matrix(&patched(&|b| b[6] = 7)), "BadModality")?;
    expect_store_code(decode_matrix(&patched(&|b| b[8..12].copy_from_slice(&0u32.to_le_bytes()))), "ZeroDim")?;
    expect_store_code(decode_matrix(&patched(&|b| b.truncate(b.len() - 1))), "Truncated")?;
    expect_store_code(decode_matrix(&patched(&|b| b.push(0))), "TrailingBytes")?;
    expect_store_code(
        decode_matrix(&patched(&|b| b[header + 3..header + 7].copy_from_slice(&f32::NAN.to_le_bytes()))),
        "NonFinite",
    )?;
    expect_store_code(decode_matrix(&patched(&|b| b[header + 2] = 0xFF)), "InvalidUtf8")?;
    expect_store_code(decode_matrix(&patched(&|b| b[header + record + 2] = b'a')), "DuplicateId")?;

    let plyt = encode_tokens(&tokens)?;
    let mut empty = plyt.clone();
    empty[header + 3..header + 5].copy_from_slice(&0u16.to_le_bytes());
    expect_store_code(decode_tokens(&empty), "EmptyTokens")?;
    expect_store_code(decode_tokens(&plye), "BadMagic")?;
    expect_store_code(decode_tokens(&plyt[..plyt.len() - 2]), "Truncated")?;

    let plym = encode_checkpoint(&params, &ck_meta);
    let ck_code = |b: &[u8]| decode_checkpoint(b).err().map(|e| e.code());
    let mut cases = Vec::new();
    let mut b = plym.clone();
    b[1] = b'x';
    cases.push((ck_code(&b), "BadMagic"));
    let mut b = plym.clone();
    b[4] = 2;
    cases.push((ck_code(&b), "VersionMismatch"));
    cases.push((ck_code(&plym[..plym.len() - 3]), "Truncated"));
    let mut b = plym.clone();
    b.extend_from_slice(&[1, 2]);
    cases.push((ck_code(&b), "TrailingBytes"));
    let mut b = plym.clone();
    b[10] = b'!';
    cases.push((ck_code(&b), "Header"));
    // The last tensor is head_out.bias: name, rank 1, dim 1, one f64.
    let last = plym.len() - (2 + "head_out.bias".len() + 1 + 4 + 8);
    let mut b = plym.clone();
    let len = b.len();
    b[len - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
    cases.push((ck_code(&b), "NonFinite"));
    let mut b = plym.clone();
    b[len - 12..len - 8].copy_from_slice(&2u32.to_le_bytes());
    cases.push((ck_code(&b), "ShapeMismatch"));
    let mut b = plym.clone();
    b[last + 2 + "head_out.bias".len() - 1] = b'z';
    cases.push((ck_code(&b), "UnknownTensor"));
    let json_len = u32::from_le_bytes(plym[6..10].try_into()?) as usize;
    let count_at = 10 + json_len;
    let mut b = plym[..last].to_vec();
    let n = u32::from_le_bytes(b[count_at..count_at + 4].try_into()?);
    b[count_at..count_at + 4].copy_from_slice(&(n - 1).to_le_bytes());
    cases.push((ck_code(&b), "MissingTensor"));
    for (got, want) in &cases {
        ensure!(*got == Some(*want), "checkpoint corruption: expected {want}, got {got:?}");
    }
    Ok(format!("3 formats byte-identical, {} corruption codes", 12 + cases.len()))
}

fn ac9_psmiles() -> Result<String> {
    let corpus = generate_corpus(500, 9);
    for s in &corpus {
        ensure!(join(&tokenize(s)?) == *s, "round trip failed for {s}");
    }
    let examples = [
        ("[*]CC([*])C", "CCC(C)C"),
        ("[*]CC([*])c1ccncc1", "CCC(C)c1ccncc1"),
        ("[*]CC([*])(F)C(=O)OCC(F)(F)C(F)(F)F", "CCC(C)(F)C(=O)OCC(F)(F)C(F)(F)F"),
    ];
    for (input, expected) in examples {
        ensure!(cap(input)? == expected, "cap({input})");
    }

    let mut rng = SplitMix64::new(99);
    let mut worst_general: f64 = 0.0;
    for s in &corpus {
        let target: Vec<String> = tokenize(s)?.into_iter().map(|t| t.text).collect();
        for lengths in [[1usize, 2, 4], [1, 3, 5]] {
            let mut pieces = Vec::new();
            let mut pos = 0;
            while pos < s.len() {
                let mut len = lengths[rng.below(3) as usize];
                if len > s.len() - pos {
                    len = 1;
                }
                pieces.push(s[pos..pos + len].to_string());
                pos += len;
            }
            let map = build_merge_map(&pieces, &target)?;
            let scores: Vec<f64> = (0..pieces.len()).map(|_| (rng.below(257) as f64 - 128.0) / 64.0).collect();
            let merged: f64 = merge_scores(&scores, &map)?.iter().sum();
            let total: f64 = scores.iter().sum();
            if lengths[2] == 4 {
                ensure!(merged == total, "{s}: dyadic total {merged} != {total}");
            } else {
                worst_general = worst_general.max((merged - total).abs());
            }
        }
    }
    ensure!(worst_general <= 1e-12, "merge total drift {worst_general:e}");
    Ok(format!("500 round trips, 3 cap examples, merge totals exact (general drift {worst_general:.1e})"))
}

fn ac10_parallel() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let task = planted_task(&PlantedOptions { n: 120, llm_dim: 16, uni_dim: 8, ..PlantedOptions::default() })?;
    std::fs::write(dir.path().join("data.csv"), task.to_csv("Tg", 300.0, 40.0))?;
    write_matrix(&task.llm, dir.path().join("llm.plye"))?;
    write_matrix(&task.uni, dir.path().join("uni.plye"))?;
    std::fs::write(dir.path().join("config.json"), r#"{"batch_size": 16, "max_epochs": 10, "patience_early": 5}"#)?;
    std::fs::write(
        dir.path().join("grid.json"),
        r#"{"batch_size":[16],"hidden":[8,16],"rank":[2],"alpha":[4],"lr":[1e-3],"weight_decay":[1e-3],"dropout":[0.0,0.1]}"#,
    )?;
    let run = |threads: &str| -> Result<Vec<u8>> {
        let out = Command::new(env!("CARGO_BIN_EXE_polyllmem"))
            .current_dir(dir.path())
            .args(["gridsearch", "--dataset", "data.csv", "--property", "Tg", "--llm", "llm.plye", "--uni", "uni.plye"])
            .args(["--config", "config.json", "--grid", "grid.json", "--threads", threads])
            .output()?;
        ensure!(out.status.success(), "gridsearch --threads {threads}: {}", String::from_utf8_lossy(&out.stderr));
        Ok(out.stdout)
    };
    let one = run("1")?;
    let four = run("4")?;
    ensure!(!one.is_empty() && one == four, "outputs differ ({} vs {} bytes)", one.len(), four.len());
    Ok(format!("4-cell grid, {} identical bytes", one.len()))
}
