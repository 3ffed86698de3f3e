use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::{csv_rows, emit, render, Format, Render};
use super::*;
use crate::attribution::{
    attribute, cosine_matrix, normalize_by_star, pca_reduce, AttrError, Attribution, ModelScorer, Pca, SimilarityMatrix,
};
use crate::embed_store::{
    read_any, read_matrix, read_tokens, synth_embeddings, synth_token_embeddings, write_matrix, write_tokens,
    EmbeddingFile, EmbeddingMatrix, EmbeddingMeta, PlantSpec, TokenRecord,
};
use crate::model::{load_checkpoint, Checkpoint};
use crate::ndmath::Tensor2;
use crate::pipeline::{
    load_dataset, make_split, property_subset, write_jsonl, PolymerRecord, PropertyCatalog, SplitPlan,
};
use crate::psmiles::{build_merge_map, cap, tokenize};
use crate::trainer::{
    evaluate_checkpoint, grid_search, predict_original, ridge_cv, run_in_pool, train_cv, CvOptions, EvalReport,
    GridReport, GridSpec, PredictionRow, RidgeReport, RunReport, TrainConfig, TrainData, DEFAULT_LAMBDAS,
};

pub(super) fn dispatch(cli: &Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<(), CliError> {
    let g = &cli.global;
    let fmt = |default: Format| g.format.unwrap_or(default);
    let out = g.out.as_deref();
    let text = match &cli.command {
        Command::Ingest(a) => {
            if fmt(Format::Json) != Format::Json {
                return Err(CliError::Usage("ingest only writes JSON lines".into()));
            }
            ingest(a)?
        }
        Command::Split(a) => render(&split(a, g.seed)?, fmt(Format::Json), "split")?,
        Command::Cap => render(&cap_lines(stdin)?, fmt(Format::Text), "cap")?,
        Command::Tokenize => render(&tokenize_lines(stdin)?, fmt(Format::Text), "tokenize")?,
        Command::Embed(EmbedCommand::Synth(a)) => {
            let path = out.ok_or_else(|| CliError::Usage("embed synth needs --out".into()))?;
            let info = synth(a, g.seed, path)?;
            return emit(None, stdout, render(&info, fmt(Format::Json), "embed synth")?.as_bytes());
        }
        Command::Embed(EmbedCommand::Validate(a)) => {
            let report = validate(&a.file);
            emit(out, stdout, render(&report, fmt(Format::Json), "embed validate")?.as_bytes())?;
            return match report.code {
                None => Ok(()),
                Some(code) => Err(CliError::Data(format!("{}: {code}", a.file.display()))),
            };
        }
        Command::Embed(EmbedCommand::Info(a)) => render(&info(&a.file)?, fmt(Format::Json), "embed info")?,
        Command::Train(a) => render(&train(a, g)?, fmt(Format::Json), "train")?,
        Command::Gridsearch(a) => render(&gridsearch(a, g)?, fmt(Format::Json), "gridsearch")?,
        Command::Evaluate(a) => render(&evaluate(a)?, fmt(Format::Json), "evaluate")?,
        Command::Predict(a) => render(&predict(a)?, fmt(Format::Json), "predict")?,
        Command::Baseline(BaselineCommand::Ridge(a)) => {
            render(&ridge(a, g.seed)?, fmt(Format::Json), "baseline ridge")?
        }
        Command::Attribute(a) => render(&attribute_all(a, g.threads)?, fmt(Format::Json), "attribute")?,
        Command::Similarity(a) => render(&similarity(a)?, fmt(Format::Json), "similarity")?,
        Command::Pca(a) => render(&pca(a)?, fmt(Format::Json), "pca")?,
        Command::Report(a) => render(&report(a)?, fmt(Format::Csv), "report")?,
    };
    emit(out, stdout, text.as_bytes())
}

fn fmt_f(v: f64) -> String {
    format!("{v:.4}")
}

fn load_records(path: &Path) -> Result<Vec<PolymerRecord>, CliError> {
    let outcome = load_dataset(path, &PropertyCatalog::standard())?;
    for w in &outcome.warnings {
        log::warn!("{}: {w}", path.display());
    }
    log::info!("{}: {} records", path.display(), outcome.records.len());
    Ok(outcome.records)
}

fn check_property(property: &str) -> Result<(), CliError> {
    let catalog = PropertyCatalog::standard();
    if catalog.get(property).is_none() {
        let known: Vec<_> = catalog.symbols().collect();
        return Err(CliError::Usage(format!("unknown property {property:?}; expected one of {}", known.join(", "))));
    }
    Ok(())
}

fn train_data(a: &DataArgs) -> Result<TrainData, CliError> {
    check_property(&a.property)?;
    let records = load_records(&a.dataset)?;
    let samples = property_subset(&records, &a.property);
    log::info!("{}: {} labelled records", a.property, samples.len());
    let llm = read_matrix(&a.llm)?;
    let uni = read_matrix(&a.uni)?;
    Ok(TrainData::assemble(&samples, &a.property, &PropertyCatalog::standard(), &llm, &uni)?)
}

fn train_config(g: &GlobalArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &g.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    config.seed = g.seed;
    config.validate()?;
    Ok(config)
}

fn ingest(a: &IngestArgs) -> Result<String, CliError> {
    let records = load_records(&a.input)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        for k in r.values.keys() {
            *counts.entry(k).or_default() += 1;
        }
    }
    for (property, n) in &counts {
        log::info!("{property}: {n}");
    }
    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf).expect("in-memory write");
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

#[derive(Serialize)]
struct SplitOutput {
    property: String,
    n: usize,
    #[serde(flatten)]
    plan: SplitPlan,
}

#[derive(Serialize)]
struct SplitRow<'a> {
    id: &'a str,
    set: String,
}

impl Render for SplitOutput {
    fn csv(&self) -> Option<String> {
        let mut rows: Vec<SplitRow> = self.plan.test_ids.iter().map(|id| SplitRow { id, set: "test".into() }).collect();
        for (k, fold) in self.plan.folds.iter().enumerate() {
            rows.extend(fold.iter().map(|id| SplitRow { id, set: format!("fold{k}") }));
        }
        Some(csv_rows(&rows))
    }

    fn text(&self) -> Option<String> {
        let sizes: Vec<String> = self.plan.folds.iter().map(|f| f.len().to_string()).collect();
        Some(format!(
            "{}: {} records, {} test, folds {}\n",
            self.property,
            self.n,
            self.plan.test_ids.len(),
            sizes.join("/")
        ))
    }
}

fn split(a: &SplitArgs, seed: u64) -> Result<SplitOutput, CliError> {
    check_property(&a.property)?;
    let records = load_records(&a.dataset)?;
    let ids: Vec<String> = property_subset(&records, &a.property).into_iter().map(|s| s.id).collect();
    let plan = make_split(&ids, seed)?;
    Ok(SplitOutput { property: a.property.clone(), n: ids.len(), plan })
}

fn input_lines(stdin: &mut dyn BufRead) -> Result<Vec<(usize, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in stdin.lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("stdin: {e}")))?;
        let line = line.trim();
        if !line.is_empty() {
            out.push((i + 1, line.to_string()));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct CapRow {
    input: String,
    output: String,
}

#[derive(Serialize)]
#[serde(transparent)]
struct CapOutput(Vec<CapRow>);

impl Render for CapOutput {
    fn csv(&self) -> Option<String> {
        Some(csv_rows(&self.0))
    }

    fn text(&self) -> Option<String> {
        Some(self.0.iter().map(|r| format!("{}\n", r.output)).collect())
    }
}

fn cap_lines(stdin: &mut dyn BufRead) -> Result<CapOutput, CliError> {
    let rows = input_lines(stdin)?
        .into_iter()
        .map(|(n, input)| {
            let output = cap(&input).map_err(|e| CliError::Data(format!("line {n}: {e}")))?;
            Ok(CapRow { input, output })
        })
        .collect::<Result<_, CliError>>()?;
    Ok(CapOutput(rows))
}

#[derive(Serialize)]
struct TokenRow {
    input: String,
    tokens: Vec<String>,
}

#[derive(Serialize)]
#[serde(transparent)]
struct TokenizeOutput(Vec<TokenRow>);

impl Render for TokenizeOutput {
    fn text(&self) -> Option<String> {
        Some(self.0.iter().map(|r| format!("{}\n", r.tokens.join("\t"))).collect())
    }
}

fn tokenize_lines(stdin: &mut dyn BufRead) -> Result<TokenizeOutput, CliError> {
    let rows = input_lines(stdin)?
        .into_iter()
        .map(|(n, input)| {
            let tokens = tokenize(&input).map_err(|e| CliError::Data(format!("line {n}: {e}")))?;
            Ok(TokenRow { tokens: tokens.into_iter().map(|t| t.text).collect(), input })
        })
        .collect::<Result<_, CliError>>()?;
    Ok(TokenizeOutput(rows))
}

#[derive(Serialize)]
struct EmbedInfo {
    path: String,
    kind: &'static str,
    #[serde(flatten)]
    meta: EmbeddingMeta,
    count: usize,
    /// Token rows across all records; absent for pooled files.
    #[serde(skip_serializing_if = "Option::is_none")]
    total_tokens: Option<usize>,
}

impl EmbedInfo {
    fn new(path: &Path, file: &EmbeddingFile) -> Self {
        let (kind, total_tokens) = match file {
            EmbeddingFile::Pooled(_) => ("pooled", None),
            EmbeddingFile::Tokens(t) => ("tokens", Some(t.records.iter().map(TokenRecord::n_tokens).sum())),
        };
        Self { path: path.display().to_string(), kind, meta: file.meta().clone(), count: file.len(), total_tokens }
    }

    fn summary(&self) -> String {
        format!(
            "{}: {} {:?} dim {}, {} records, tag {:?}",
            self.path, self.kind, self.meta.modality, self.meta.dim, self.count, self.meta.source_tag
        )
    }
}

impl Render for EmbedInfo {
    fn text(&self) -> Option<String> {
        Some(format!("{}\n", self.summary()))
    }
}

fn synth(a: &SynthArgs, seed: u64, path: &Path) -> Result<EmbedInfo, CliError> {
    let records = load_records(&a.dataset)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let psmiles: Vec<String> = records.iter().map(|r| r.psmiles.as_str().to_string()).collect();
    let modality = a.modality.into();
    let dim = a.dim.unwrap_or_else(|| crate::embed_store::Modality::default_dim(modality));
    let meta = EmbeddingMeta::new(modality, dim, a.source_tag.clone());
    let plant = a.plant.then(PlantSpec::standard);
    let file = if a.tokens {
        let t = synth_token_embeddings(&ids, &psmiles, &meta, seed, plant.as_ref())?;
        write_tokens(&t, path)?;
        EmbeddingFile::Tokens(t)
    } else {
        let m = synth_embeddings(&ids, &psmiles, &meta, seed, plant.as_ref())?;
        write_matrix(&m, path)?;
        EmbeddingFile::Pooled(m)
    };
    Ok(EmbedInfo::new(path, &file))
}

fn info(path: &Path) -> Result<EmbedInfo, CliError> {
    Ok(EmbedInfo::new(path, &read_any(path)?))
}

#[derive(Serialize)]
struct ValidateOutput {
    path: String,
    valid: bool,
    code: Option<&'static str>,
    message: Option<String>,
    info: Option<EmbedInfo>,
}

impl Render for ValidateOutput {
    fn text(&self) -> Option<String> {
        Some(match (&self.info, self.code, &self.message) {
            (Some(info), _, _) => format!("ok {}\n", info.summary()),
            (None, Some(code), Some(msg)) => format!("{code} {}: {msg}\n", self.path),
            _ => format!("invalid {}\n", self.path),
        })
    }
}

fn validate(path: &Path) -> ValidateOutput {
    let shown = path.display().to_string();
    match read_any(path) {
        Ok(file) => ValidateOutput {
            path: shown,
            valid: true,
            code: None,
            message: None,
            info: Some(EmbedInfo::new(path, &file)),
        },
        Err(e) => {
            ValidateOutput { path: shown, valid: false, code: Some(e.code()), message: Some(e.to_string()), info: None }
        }
    }
}

#[derive(Serialize)]
struct FoldRow {
    fold: usize,
    n_train: usize,
    n_val: usize,
    best_epoch: usize,
    epochs_run: usize,
    best_val_loss: f64,
    test_r2: f64,
    test_mae: f64,
    test_mae_original: f64,
}

fn run_summary(r: &RunReport) -> String {
    let mut s = format!(
        "{}: {} records ({} train, {} test){}\n",
        r.property,
        r.n_records,
        r.n_train,
        r.n_test,
        if r.log_scale { ", log10 targets" } else { "" }
    );
    for f in &r.folds {
        let _ = writeln!(
            s,
            "fold {}: best epoch {}/{}, val loss {}, test R2 {}, MAE {}",
            f.fold,
            f.best_epoch,
            f.epochs_run,
            fmt_f(f.best_val_loss),
            fmt_f(f.test_r2),
            fmt_f(f.test_mae)
        );
    }
    let _ = writeln!(
        s,
        "R2 {} ± {}, MAE {} ± {}, MAE (original units) {} ± {}",
        fmt_f(r.r2_mean),
        fmt_f(r.r2_std),
        fmt_f(r.mae_mean),
        fmt_f(r.mae_std),
        fmt_f(r.mae_original_mean),
        fmt_f(r.mae_original_std)
    );
    s
}

impl Render for RunReport {
    fn csv(&self) -> Option<String> {
        let rows: Vec<FoldRow> = self
            .folds
            .iter()
            .map(|f| FoldRow {
                fold: f.fold,
                n_train: f.n_train,
                n_val: f.n_val,
                best_epoch: f.best_epoch,
                epochs_run: f.epochs_run,
                best_val_loss: f.best_val_loss,
                test_r2: f.test_r2,
                test_mae: f.test_mae,
                test_mae_original: f.test_mae_original,
            })
            .collect();
        Some(csv_rows(&rows))
    }

    fn text(&self) -> Option<String> {
        Some(run_summary(self))
    }
}

fn train(a: &TrainArgs, g: &GlobalArgs) -> Result<RunReport, CliError> {
    let config = train_config(g)?;
    let data = train_data(&a.data)?;
    log::info!("training {} on {} records with {} threads", data.property, data.len(), g.threads);
    let options = CvOptions { checkpoint_dir: a.checkpoint_dir.clone(), threads: g.threads, job: 0 };
    Ok(train_cv(&data, &config, &options)?)
}

#[derive(Serialize)]
struct GridRow {
    index: usize,
    batch_size: usize,
    hidden: usize,
    rank: usize,
    alpha: f64,
    lr: f64,
    weight_decay: f64,
    dropout: f64,
    mean_val_loss: f64,
    r2_mean: f64,
    r2_std: f64,
    mae_mean: f64,
    mae_std: f64,
    best: bool,
}

impl Render for GridReport {
    fn csv(&self) -> Option<String> {
        let rows: Vec<GridRow> = self
            .cells
            .iter()
            .map(|c| {
                let cfg = &c.report.config;
                GridRow {
                    index: c.index,
                    batch_size: cfg.batch_size,
                    hidden: cfg.hidden,
                    rank: cfg.rank,
                    alpha: cfg.alpha,
                    lr: cfg.lr,
                    weight_decay: cfg.weight_decay,
                    dropout: cfg.dropout,
                    mean_val_loss: c.mean_val_loss,
                    r2_mean: c.report.r2_mean,
                    r2_std: c.report.r2_std,
                    mae_mean: c.report.mae_mean,
                    mae_std: c.report.mae_std,
                    best: c.index == self.best_index,
                }
            })
            .collect();
        Some(csv_rows(&rows))
    }

    fn text(&self) -> Option<String> {
        let mut s = format!("{}: {} cells, best cell {}\n", self.property, self.cells.len(), self.best_index);
        for c in &self.cells {
            let cfg = &c.report.config;
            let _ = writeln!(
                s,
                "{}{:>4} batch {} hidden {} rank {} alpha {} lr {} wd {} dropout {}: val loss {}, R2 {}",
                if c.index == self.best_index { "*" } else { " " },
                c.index,
                cfg.batch_size,
                cfg.hidden,
                cfg.rank,
                cfg.alpha,
                cfg.lr,
                cfg.weight_decay,
                cfg.dropout,
                fmt_f(c.mean_val_loss),
                fmt_f(c.report.r2_mean)
            );
        }
        Some(s)
    }
}

fn gridsearch(a: &GridArgs, g: &GlobalArgs) -> Result<GridReport, CliError> {
    let base = train_config(g)?;
    let grid: GridSpec = match &a.grid {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => GridSpec::default(),
    };
    let data = train_data(&a.data)?;
    let options = CvOptions { checkpoint_dir: a.checkpoint_dir.clone(), threads: g.threads, job: 0 };
    Ok(grid_search(&data, &grid, &base, &options)?)
}

#[derive(Serialize)]
struct PredictionCsvRow<'a> {
    id: &'a str,
    prediction: f64,
    target: Option<f64>,
}

fn prediction_csv(rows: &[PredictionRow]) -> String {
    let rows: Vec<_> =
        rows.iter().map(|r| PredictionCsvRow { id: &r.id, prediction: r.prediction, target: r.target }).collect();
    csv_rows(&rows)
}

impl Render for EvalReport {
    fn csv(&self) -> Option<String> {
        Some(prediction_csv(&self.predictions))
    }

    fn text(&self) -> Option<String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), fmt_f);
        Some(format!(
            "{}: {} rows, R2 {}, MAE {}, MAE (original units) {}\n",
            self.property,
            self.n,
            opt(self.r2),
            opt(self.mae),
            opt(self.mae_original)
        ))
    }
}

fn subset_data(data: &TrainData, ids: &[String]) -> Result<TrainData, CliError> {
    let idx = data.indices(ids);
    Ok(TrainData::from_parts(
        data.property.clone(),
        idx.iter().map(|&i| data.ids[i].clone()).collect(),
        data.llm.select_rows(&idx),
        data.uni.select_rows(&idx),
        data.select_targets(&idx),
        data.log_scale,
    )?)
}

fn evaluate(a: &EvaluateArgs) -> Result<EvalReport, CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let property = match (&a.property, ck.meta.property.as_str()) {
        (Some(p), _) => p.clone(),
        (None, "") => return Err(CliError::Usage("checkpoint names no property; pass --property".into())),
        (None, p) => p.to_string(),
    };
    let data = train_data(&DataArgs { dataset: a.dataset.clone(), property, llm: a.llm.clone(), uni: a.uni.clone() })?;
    let data = match a.subset {
        Subset::All => data,
        Subset::Test => {
            let plan = make_split(&data.ids, ck.meta.seed)?;
            subset_data(&data, &plan.test_ids)?
        }
    };
    Ok(evaluate_checkpoint(&ck, &data)?)
}

#[derive(Serialize)]
struct PredictOutput {
    property: String,
    predictions: Vec<PredictionRow>,
}

impl Render for PredictOutput {
    fn csv(&self) -> Option<String> {
        Some(prediction_csv(&self.predictions))
    }
}

fn matrix_rows(m: &EmbeddingMatrix, ids: &[&str]) -> Result<Tensor2, CliError> {
    Tensor2::new(ids.len(), m.dim(), m.gather(ids)?).map_err(|e| CliError::Data(e.to_string()))
}

fn predict(a: &PredictArgs) -> Result<PredictOutput, CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let llm = read_matrix(&a.llm)?;
    let uni = read_matrix(&a.uni)?;
    let ids: Vec<&str> = llm.records.iter().map(|r| r.id.as_str()).collect();
    let values = predict_original(&ck, &matrix_rows(&llm, &ids)?, &matrix_rows(&uni, &ids)?)?;
    let predictions = ids
        .iter()
        .zip(values)
        .map(|(id, prediction)| PredictionRow { id: id.to_string(), prediction, target: None })
        .collect();
    Ok(PredictOutput { property: ck.meta.property.clone(), predictions })
}

impl Render for RidgeReport {
    fn csv(&self) -> Option<String> {
        Some(csv_rows(&self.folds))
    }

    fn text(&self) -> Option<String> {
        let mut s = format!("{} ridge baseline\n", self.property);
        for f in &self.folds {
            let _ = writeln!(
                s,
                "fold {}: lambda {}, test R2 {}, MAE {}",
                f.fold,
                f.lambda,
                fmt_f(f.test_r2),
                fmt_f(f.test_mae)
            );
        }
        let _ = writeln!(
            s,
            "R2 {} ± {}, MAE {} ± {}",
            fmt_f(self.r2_mean),
            fmt_f(self.r2_std),
            fmt_f(self.mae_mean),
            fmt_f(self.mae_std)
        );
        Some(s)
    }
}

fn ridge(a: &RidgeArgs, seed: u64) -> Result<RidgeReport, CliError> {
    let data = train_data(&a.data)?;
    let lambdas = a.lambdas.clone().unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
    Ok(ridge_cv(&data, seed, &lambdas)?)
}

#[derive(Serialize)]
struct AttributeOutput {
    property: String,
    steps: usize,
    attributions: Vec<Attribution>,
}

#[derive(Serialize)]
struct AttributionRow<'a> {
    polymer_id: &'a str,
    index: usize,
    token: &'a str,
    score: f64,
    normalized_score: Option<f64>,
}

impl Render for AttributeOutput {
    fn csv(&self) -> Option<String> {
        let mut rows = Vec::new();
        for a in &self.attributions {
            for (i, (token, &score)) in a.tokens.iter().zip(&a.scores).enumerate() {
                rows.push(AttributionRow {
                    polymer_id: &a.polymer_id,
                    index: i,
                    token,
                    score,
                    normalized_score: a.normalized_scores.as_ref().map(|n| n[i]),
                });
            }
        }
        Some(csv_rows(&rows))
    }

    fn text(&self) -> Option<String> {
        let mut s = String::new();
        for a in &self.attributions {
            let _ = writeln!(
                s,
                "{}: F(x) {}, F(0) {}, completeness gap {:.3e}",
                a.polymer_id,
                fmt_f(a.f_input),
                fmt_f(a.f_baseline),
                a.completeness_gap
            );
            for (i, (token, score)) in a.tokens.iter().zip(&a.scores).enumerate() {
                let norm = a.normalized_scores.as_ref().map_or_else(String::new, |n| format!(" ({})", fmt_f(n[i])));
                let _ = writeln!(s, "  {token:<8} {}{norm}", fmt_f(*score));
            }
        }
        Some(s)
    }
}

fn token_tensor(record: &TokenRecord, dim: usize) -> Result<Tensor2, CliError> {
    let data = record.vectors.iter().map(|&v| f64::from(v)).collect();
    Tensor2::new(record.n_tokens(), dim, data).map_err(|e| CliError::Data(e.to_string()))
}

fn attribute_one(
    ck: &Checkpoint,
    record: &TokenRecord,
    dim: usize,
    uni: &EmbeddingMatrix,
    steps: usize,
    refine: bool,
) -> Result<Attribution, CliError> {
    let uni_vec: Vec<f64> = uni
        .get(&record.id)
        .ok_or_else(|| CliError::Data(format!("no structure embedding for polymer {:?}", record.id)))?
        .iter()
        .map(|&v| f64::from(v))
        .collect();
    let scorer = ModelScorer::for_checkpoint(ck, uni_vec)?;
    let vectors = token_tensor(record, dim)?;
    let map = if refine {
        let target: Vec<String> = tokenize(&record.tokens.concat())?.into_iter().map(|t| t.text).collect();
        Some(build_merge_map(&record.tokens, &target)?)
    } else {
        None
    };
    let raw = attribute(&scorer, &record.id, &record.tokens, &vectors, steps, map.as_ref())?;
    match normalize_by_star(&raw) {
        Ok(a) => Ok(a),
        Err(e @ (AttrError::NoReference | AttrError::ZeroReference)) => {
            log::warn!("{}: scores not normalized: {e}", record.id);
            Ok(raw)
        }
        Err(e) => Err(e.into()),
    }
}

fn attribute_all(a: &AttributeArgs, threads: usize) -> Result<AttributeOutput, CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let tokens = read_tokens(&a.tokens_file)?;
    let uni = read_matrix(&a.uni)?;
    let dim = tokens.dim();
    if dim != ck.params.config.llm_dim {
        return Err(CliError::Data(format!(
            "checkpoint expects text dim {}, {} has {dim}",
            ck.params.config.llm_dim,
            a.tokens_file.display()
        )));
    }
    let records: Vec<&TokenRecord> = match &a.ids {
        Some(ids) => ids
            .iter()
            .map(|id| tokens.get(id).ok_or_else(|| CliError::Data(format!("no token embeddings for polymer {id:?}"))))
            .collect::<Result<_, _>>()?,
        None => tokens.records.iter().collect(),
    };
    log::info!("attributing {} polymers with {} steps", records.len(), a.steps);
    let attributions = run_in_pool(threads, || {
        records.par_iter().map(|r| attribute_one(&ck, r, dim, &uni, a.steps, a.refine)).collect::<Vec<_>>()
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(AttributeOutput { property: ck.meta.property.clone(), steps: a.steps, attributions })
}

#[derive(Serialize)]
struct SimilarityOutput {
    polymer_id: String,
    #[serde(flatten)]
    matrix: SimilarityMatrix,
}

impl Render for SimilarityOutput {
    fn csv(&self) -> Option<String> {
        Some(self.matrix.edges_csv())
    }
}

fn similarity(a: &SimilarityArgs) -> Result<SimilarityOutput, CliError> {
    let tokens = read_tokens(&a.tokens_file)?;
    let record =
        tokens.get(&a.id).ok_or_else(|| CliError::Data(format!("no token embeddings for polymer {:?}", a.id)))?;
    let matrix = cosine_matrix(&record.tokens, &token_tensor(record, tokens.dim())?, a.threshold);
    for &i in &matrix.undefined {
        log::warn!("{}: token {i} ({}) has a zero vector", a.id, record.tokens[i]);
    }
    Ok(SimilarityOutput { polymer_id: a.id.clone(), matrix })
}

#[derive(Serialize)]
struct PcaOutput {
    ids: Vec<String>,
    #[serde(flatten)]
    pca: Pca,
}

impl Render for PcaOutput {
    fn csv(&self) -> Option<String> {
        let k = self.pca.scores.cols();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend((1..=k).map(|c| format!("pc{c}")));
        w.write_record(&header).expect("in-memory CSV write");
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.pca.scores.row(i).iter().map(f64::to_string));
            w.write_record(&row).expect("in-memory CSV write");
        }
        Some(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields"))
    }

    fn text(&self) -> Option<String> {
        let mut s = format!("{} rows, {} components\n", self.ids.len(), self.pca.scores.cols());
        let mut cumulative = 0.0;
        for (c, r) in self.pca.explained_variance_ratio.iter().enumerate() {
            cumulative += r;
            let _ = writeln!(s, "pc{}: {} ({} cumulative)", c + 1, fmt_f(*r), fmt_f(cumulative));
        }
        Some(s)
    }
}

fn pca(a: &PcaArgs) -> Result<PcaOutput, CliError> {
    let matrix = match read_any(&a.embeddings)? {
        EmbeddingFile::Pooled(m) => m,
        EmbeddingFile::Tokens(t) => t.pooled()?,
    };
    let ids: Vec<&str> = matrix.records.iter().map(|r| r.id.as_str()).collect();
    let x = matrix_rows(&matrix, &ids)?;
    let pca = pca_reduce(&x, a.components)?;
    Ok(PcaOutput { ids: ids.into_iter().map(String::from).collect(), pca })
}

/// One line of the merged metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub property: String,
    pub n_records: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_folds: usize,
    pub log_scale: bool,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mae_original_mean: f64,
    pub mae_original_std: f64,
    pub mean_val_loss: f64,
    pub source: String,
}

#[derive(Serialize)]
#[serde(transparent)]
struct ReportOutput(Vec<ReportRow>);

impl Render for ReportOutput {
    fn csv(&self) -> Option<String> {
        Some(csv_rows(&self.0))
    }

    fn text(&self) -> Option<String> {
        let mut s = String::new();
        for r in &self.0 {
            let _ = writeln!(
                s,
                "{:<10} n {:>6}  R2 {} ± {}  MAE {} ± {}",
                r.property,
                r.n_records,
                fmt_f(r.r2_mean),
                fmt_f(r.r2_std),
                fmt_f(r.mae_original_mean),
                fmt_f(r.mae_original_std)
            );
        }
        Some(s)
    }
}

fn read_run_report(path: &PathBuf) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if let Ok(r) = serde_json::from_str::<RunReport>(&text) {
        return Ok(r);
    }
    match serde_json::from_str::<GridReport>(&text) {
        Ok(mut g) if g.best_index < g.cells.len() => Ok(g.cells.swap_remove(g.best_index).report),
        _ => Err(CliError::Data(format!("{}: not a run or grid report", path.display()))),
    }
}

fn report(a: &ReportArgs) -> Result<ReportOutput, CliError> {
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    for path in &a.reports {
        let r = read_run_report(path)?;
        let source = path.display().to_string();
        if let Some(prev) = rows.get(&r.property) {
            return Err(CliError::Data(format!("{} reported by both {} and {source}", r.property, prev.source)));
        }
        rows.insert(
            r.property.clone(),
            ReportRow {
                property: r.property.clone(),
                n_records: r.n_records,
                n_train: r.n_train,
                n_test: r.n_test,
                n_folds: r.folds.len(),
                log_scale: r.log_scale,
                r2_mean: r.r2_mean,
                r2_std: r.r2_std,
                mae_mean: r.mae_mean,
                mae_std: r.mae_std,
                mae_original_mean: r.mae_original_mean,
                mae_original_std: r.mae_original_std,
                mean_val_loss: r.mean_val_loss,
                source,
            },
        );
    }
    Ok(ReportOutput(rows.into_values().collect()))
}
