//! Command implementations: each wires configuration, data, and the library
//! together, writes its outputs under the run's directory, and prints a
//! short summary.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use encoderlab::datamix::{ingest, quality_filter, Document, MixSampler};
use encoderlab::encoder::EncoderModel;
use encoderlab::evalstats::{
    bucket_means, f1_entity, fertility_bins, load_score_rows, ndcg_at_k, pearson,
    quantile_buckets, rank_systems, spearman, Entity, ScoreTable,
};
use encoderlab::finetune::{finetune, load_task_data};
use encoderlab::rng::derive_seed;
use encoderlab::tokenizer::Vocab;
use encoderlab::trainer::{
    load_checkpoint, save_checkpoint, CheckpointMeta, MixedSource, TrainConfig, Trainer,
};
use encoderlab::{Error, Result};

use crate::chart;
use crate::config::{FinetuneFileConfig, MixSlot, RunConfig};

// ---------------------------------------------------------------------------
// tokenizer-train
// ---------------------------------------------------------------------------

pub fn tokenizer_train(corpus: &[PathBuf], vocab_size: usize, out: &Path) -> Result<()> {
    let mut lines: Vec<String> = Vec::new();
    for path in corpus {
        for line in std::fs::read_to_string(path)?.lines() {
            if !line.trim().is_empty() {
                lines.push(line.to_string());
            }
        }
    }
    if lines.is_empty() {
        return Err(Error::invalid("corpus files contain no non-empty lines"));
    }
    let vocab = Vocab::train(&lines, vocab_size)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    vocab.save(out)?;
    println!(
        "trained vocabulary of {} tokens from {} lines -> {}",
        vocab_size,
        lines.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain / anneal
// ---------------------------------------------------------------------------

fn validated_config(path: &Path) -> Result<RunConfig> {
    let config = RunConfig::from_file(path)?;
    let mut problems = config.problems();
    if problems.is_empty() {
        problems = config.file_problems();
    }
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(format!(
            "{} problem(s) in {}:\n  {}",
            problems.len(),
            path.display(),
            problems.join("\n  ")
        )))
    }
}

fn load_documents(config: &RunConfig) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for path in &config.data.corpus {
        for doc in ingest(path)? {
            docs.push(doc.map_err(|e| match e {
                Error::Parse { line, msg } => Error::Parse {
                    line,
                    msg: format!("{}: {msg}", path.display()),
                },
                other => other,
            })?);
        }
    }
    if let Some(min) = config.data.min_quality {
        docs = quality_filter(docs, min, config.data.unlabeled_pass)?;
    }
    if docs.is_empty() {
        return Err(Error::EmptySelection("no documents survive ingestion and filtering"));
    }
    Ok(docs)
}

/// One weighted document source for the given phase, drawing from its own
/// deterministic stream.
fn build_source(
    config: &RunConfig,
    slot: MixSlot,
    phase_idx: u64,
    docs: Vec<Document>,
    vocab: Vocab,
) -> Result<MixedSource> {
    let spec = config.mix_spec(slot)?;
    let pools = spec.partition(docs)?;
    let seed = derive_seed(config.run.seed, "source", phase_idx);
    let sampler = MixSampler::new(spec, pools, seed, true)?;
    Ok(MixedSource::new(sampler, vocab))
}

fn train_config(config: &RunConfig, out_dir: &Path) -> TrainConfig {
    let mut tc = TrainConfig::new(config.run.batch_rows, config.run.seed);
    tc.checkpoint_every = Some(config.run.checkpoint_every);
    tc.checkpoint_dir = Some(out_dir.join("checkpoints"));
    tc.metrics_path = Some(out_dir.join("metrics.jsonl"));
    tc
}

fn write_effective_config(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let text = config.effective()?.to_toml()?;
    std::fs::write(out_dir.join("effective-config.toml"), text)?;
    Ok(())
}

fn write_loss_chart(trainer: &Trainer, out_dir: &Path) -> Result<()> {
    let points: Vec<(f64, f64)> = trainer
        .metrics()
        .iter()
        .map(|m| (m.step as f64, m.loss))
        .collect();
    let svg = chart::line_chart("Training loss", "step", "loss", &points);
    std::fs::write(out_dir.join("loss-curve.svg"), svg)?;
    Ok(())
}

fn finish_run(trainer: &Trainer, checkpoints: &[PathBuf], out_dir: &Path, chart: bool) -> Result<()> {
    if chart {
        write_loss_chart(trainer, out_dir)?;
    }
    let last_loss = trainer.metrics().last().map(|m| m.loss);
    match last_loss {
        Some(loss) => println!("finished at step {} with loss {loss:.4}", trainer.step_count()),
        None => println!("finished at step {} (no new steps taken)", trainer.step_count()),
    }
    println!("{} checkpoint(s) under {}", checkpoints.len(), out_dir.join("checkpoints").display());
    println!("metrics appended to {}", out_dir.join("metrics.jsonl").display());
    Ok(())
}

pub fn pretrain(config_path: &Path, resume: Option<&Path>, chart: bool) -> Result<()> {
    let config = validated_config(config_path)?;
    let out_dir = config.run.out_dir.clone();
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    write_effective_config(&config, &out_dir)?;

    let vocab = Vocab::load(&config.data.vocab)?;
    let model_config = config.model_config()?;
    if model_config.vocab_size < vocab.size() {
        return Err(Error::Config(format!(
            "model vocab of {} is smaller than the trained vocabulary of {}",
            model_config.vocab_size,
            vocab.size()
        )));
    }
    let docs = load_documents(&config)?;
    let source = build_source(&config, MixSlot::Pretrain, 0, docs, vocab)?;

    let plan = config.pretrain_plan();
    let tc = train_config(&config, &out_dir);
    let mut trainer = match resume {
        Some(path) => Trainer::resume(path, plan, tc)?,
        None => {
            let model = EncoderModel::<f32>::init(model_config, config.run.seed)?;
            Trainer::new(model, plan, tc)?
        }
    };
    let mut sources: Vec<Box<dyn encoderlab::trainer::DocSource>> = vec![Box::new(source)];
    let checkpoints = trainer.run(&mut sources)?;
    finish_run(&trainer, &checkpoints, &out_dir, chart)
}

pub fn anneal(config_path: &Path, from: &Path, chart: bool) -> Result<()> {
    let config = validated_config(config_path)?;
    let out_dir = config.run.out_dir.clone();
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    write_effective_config(&config, &out_dir)?;

    let vocab = Vocab::load(&config.data.vocab)?;
    let docs = load_documents(&config)?;
    let pretrain_src =
        build_source(&config, MixSlot::Pretrain, 0, docs.clone(), vocab.clone())?;
    let anneal_src = build_source(&config, MixSlot::Anneal, 1, docs, vocab)?;

    let plan = config.train_plan();
    let tc = train_config(&config, &out_dir);
    let mut trainer = Trainer::resume(from, plan, tc)?;
    let mut sources: Vec<Box<dyn encoderlab::trainer::DocSource>> =
        vec![Box::new(pretrain_src), Box::new(anneal_src)];
    let checkpoints = trainer.run(&mut sources)?;
    finish_run(&trainer, &checkpoints, &out_dir, chart)
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

/// Rebuild the encoder a checkpoint describes: fresh init for the geometry,
/// then every parameter overwritten from the stored tensors.
fn model_from_checkpoint(path: &Path) -> Result<(CheckpointMeta, EncoderModel<f32>)> {
    let (meta, tensors) = load_checkpoint(path)?;
    let model = EncoderModel::<f32>::init(meta.config.clone(), meta.seed)?;
    for (name, param) in model.named_params() {
        let (shape, data) = tensors.get(&name).ok_or_else(|| {
            Error::Checkpoint(format!("tensor \"{name}\" missing from {}", path.display()))
        })?;
        if *shape != param.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor \"{name}\" has shape {shape:?}, model expects {:?}",
                param.shape()
            )));
        }
        param.set_data(data);
    }
    Ok((meta, model))
}

pub fn finetune_cmd(config_path: &Path, grid_size: Option<usize>) -> Result<()> {
    let config = FinetuneFileConfig::from_file(config_path)?;
    let out_dir = config.run.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let effective = toml::to_string_pretty(&config).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out_dir.join("effective-config.toml"), effective)?;

    let (_, base) = model_from_checkpoint(&config.model.checkpoint)?;
    let vocab = Vocab::load(&config.data.vocab)?;
    let kind = config.head_kind()?;
    let protocol = config.protocol(grid_size)?;
    let train = load_task_data(&config.data.train, &vocab, &kind)?;
    let val = load_task_data(&config.data.val, &vocab, &kind)?;

    let outcome = finetune(
        &base,
        kind,
        config.task.pooling,
        &protocol,
        &train,
        &val,
        config.run.seed,
    )?;

    let mut grid_report = String::new();
    for point in &outcome.grid {
        grid_report.push_str(&serde_json::to_string(point).map_err(io_err)?);
        grid_report.push('\n');
    }
    std::fs::write(out_dir.join("grid-report.jsonl"), grid_report)?;

    let summary = serde_json::json!({
        "metric": outcome.metric,
        "best-lr": outcome.best_lr,
        "best-value": outcome.best_value,
        "grid-size": outcome.grid.len(),
        "train-examples": train.len(),
        "val-examples": val.len(),
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(io_err)?,
    )?;

    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    for (name, t) in outcome.model.named_params() {
        tensors.push((name, t.shape(), t.to_vec()));
    }
    for (name, t) in outcome.head.named_params() {
        tensors.push((name, t.shape(), t.to_vec()));
    }
    let meta = CheckpointMeta {
        step: 0,
        tokens_seen: 0,
        next_sequence_index: 0,
        source_draws: Vec::new(),
        packer_buffer: Vec::new(),
        optimizer_step: 0,
        seed: config.run.seed,
        config: outcome.model.config.clone(),
    };
    let model_path = out_dir.join("model-checkpoint.bin");
    save_checkpoint(&model_path, &meta, &tensors)?;

    println!(
        "grid of {} rate(s): best {} = {:.4} at lr {:.3e}",
        outcome.grid.len(),
        outcome.metric,
        outcome.best_value,
        outcome.best_lr
    );
    println!("model written to {}", model_path.display());
    Ok(())
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Retrieval,
    Regression,
    TokenClass,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredRecord {
    example: String,
    #[serde(default)]
    ranking: Option<Vec<u64>>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    entities: Option<Vec<(usize, usize, usize)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldRecord {
    example: String,
    #[serde(default)]
    relevant: Option<Vec<u64>>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    entities: Option<Vec<(usize, usize, usize)>>,
    /// Input length in tokens, for length-bucketed reporting.
    #[serde(default)]
    length: Option<u64>,
    /// Tokens per word for this example, for fertility-bucketed reporting.
    #[serde(default)]
    fertility: Option<f64>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("{}: {e}", path.display()),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Keyed records with duplicate and set-equality checks against the gold ids.
fn index_predictions(
    records: Vec<PredRecord>,
    gold_ids: &BTreeSet<String>,
    path: &Path,
) -> Result<BTreeMap<String, PredRecord>> {
    let mut map = BTreeMap::new();
    for record in records {
        if map.insert(record.example.clone(), record).is_some() {
            return Err(Error::invalid(format!(
                "{}: duplicate example id in predictions",
                path.display()
            )));
        }
    }
    let pred_ids: BTreeSet<String> = map.keys().cloned().collect();
    let missing: Vec<&String> = gold_ids.difference(&pred_ids).take(3).collect();
    let extra: Vec<&String> = pred_ids.difference(gold_ids).take(3).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::invalid(format!(
            "{}: prediction ids do not match gold ids (missing {missing:?}, unexpected {extra:?})",
            path.display()
        )));
    }
    Ok(map)
}

/// Per-example quality values in gold order, plus what to call them.
fn per_example_values(
    task: EvalTask,
    gold: &[GoldRecord],
    preds: &BTreeMap<String, PredRecord>,
) -> Result<(Vec<f64>, &'static str)> {
    let mut values = Vec::with_capacity(gold.len());
    for g in gold {
        let p = &preds[&g.example];
        let value = match task {
            EvalTask::Retrieval => {
                let ranking = p.ranking.as_ref().ok_or_else(|| {
                    Error::invalid(format!("example {}: prediction lacks a ranking", g.example))
                })?;
                let relevant = g.relevant.as_ref().ok_or_else(|| {
                    Error::invalid(format!("example {}: gold lacks relevant ids", g.example))
                })?;
                let gains: std::collections::HashMap<u64, f64> =
                    relevant.iter().map(|&d| (d, 1.0)).collect();
                ndcg_at_k(ranking, &gains, 10)
            }
            EvalTask::Regression => {
                let predicted = p.score.ok_or_else(|| {
                    Error::invalid(format!("example {}: prediction lacks a score", g.example))
                })?;
                let target = g.score.ok_or_else(|| {
                    Error::invalid(format!("example {}: gold lacks a score", g.example))
                })?;
                -(predicted - target).abs()
            }
            EvalTask::TokenClass => {
                let predicted = entities(p.entities.as_deref(), &g.example, "prediction")?;
                let target = entities(g.entities.as_deref(), &g.example, "gold")?;
                f1_entity(&[predicted], &[target])?
            }
        };
        values.push(value);
    }
    let label = match task {
        EvalTask::Retrieval => "ndcg@10",
        EvalTask::Regression => "neg-abs-error",
        EvalTask::TokenClass => "f1",
    };
    Ok((values, label))
}

fn entities(list: Option<&[(usize, usize, usize)]>, example: &str, side: &str) -> Result<Vec<Entity>> {
    Ok(list
        .ok_or_else(|| Error::invalid(format!("example {example}: {side} lacks entities")))?
        .to_vec())
}

pub fn evaluate_cmd(
    task: EvalTask,
    predictions: &Path,
    gold_path: &Path,
    out: &Path,
    baseline: Option<&Path>,
    chart: bool,
) -> Result<()> {
    let gold: Vec<GoldRecord> = read_jsonl(gold_path)?;
    if gold.is_empty() {
        return Err(Error::EmptySelection("gold file has no records"));
    }
    let mut gold_ids = BTreeSet::new();
    for g in &gold {
        if !gold_ids.insert(g.example.clone()) {
            return Err(Error::invalid(format!(
                "{}: duplicate example id {}",
                gold_path.display(),
                g.example
            )));
        }
    }
    let preds = index_predictions(read_jsonl(predictions)?, &gold_ids, predictions)?;
    let (values, value_label) = per_example_values(task, &gold, &preds)?;

    std::fs::create_dir_all(out)?;
    let mut per_example = String::new();
    for (g, v) in gold.iter().zip(&values) {
        per_example.push_str(&serde_json::to_string(&serde_json::json!({
            "example": g.example,
            value_label: v,
        })).map_err(io_err)?);
        per_example.push('\n');
    }
    std::fs::write(out.join("per-example.jsonl"), per_example)?;

    // Aggregate: task-appropriate headline number plus the per-example mean.
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let aggregate = match task {
        EvalTask::Retrieval => serde_json::json!({
            "task": "retrieval", "metric": "mean-ndcg@10", "value": mean,
            "examples": values.len(),
        }),
        EvalTask::Regression => {
            let predicted: Vec<f64> = gold
                .iter()
                .map(|g| preds[&g.example].score.unwrap())
                .collect();
            let target: Vec<f64> = gold.iter().map(|g| g.score.unwrap()).collect();
            serde_json::json!({
                "task": "regression", "metric": "spearman",
                "value": spearman(&predicted, &target)?,
                "pearson": pearson(&predicted, &target)?,
                "mean-abs-error": -mean,
                "examples": values.len(),
            })
        }
        EvalTask::TokenClass => {
            let predicted: Vec<Vec<Entity>> = gold
                .iter()
                .map(|g| entities(preds[&g.example].entities.as_deref(), &g.example, "prediction"))
                .collect::<Result<_>>()?;
            let target: Vec<Vec<Entity>> = gold
                .iter()
                .map(|g| entities(g.entities.as_deref(), &g.example, "gold"))
                .collect::<Result<_>>()?;
            serde_json::json!({
                "task": "token-class", "metric": "micro-f1",
                "value": f1_entity(&predicted, &target)?,
                "mean-example-f1": mean,
                "examples": values.len(),
            })
        }
    };
    std::fs::write(
        out.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate).map_err(io_err)?,
    )?;
    println!(
        "{}: {} = {:.4} over {} examples",
        match task {
            EvalTask::Retrieval => "retrieval",
            EvalTask::Regression => "regression",
            EvalTask::TokenClass => "token-class",
        },
        aggregate["metric"].as_str().unwrap_or("metric"),
        aggregate["value"].as_f64().unwrap_or(f64::NAN),
        values.len()
    );

    // Optional length-bucketed view: five quantile buckets of input length.
    if chart {
        let lengths: Option<Vec<u64>> = gold.iter().map(|g| g.length).collect();
        match lengths {
            Some(lengths) => {
                let buckets = quantile_buckets(&lengths, 5)?;
                let means = bucket_means(&buckets, &values, 5)?;
                let bars: Vec<(String, f64)> = means
                    .iter()
                    .enumerate()
                    .map(|(i, m)| (format!("Q{}", i + 1), m.unwrap_or(0.0)))
                    .collect();
                let svg = chart::bar_chart(
                    &format!("Mean {value_label} by length quantile"),
                    value_label,
                    &bars,
                );
                std::fs::write(out.join("length-quantile.svg"), svg)?;
            }
            None => eprintln!("note: gold records lack \"length\"; skipping length-quantile.svg"),
        }
    }

    // Optional fertility-bucketed comparison against a baseline system.
    if let Some(baseline_path) = baseline {
        let fertilities: Option<Vec<f64>> = gold.iter().map(|g| g.fertility).collect();
        let fertilities = fertilities.ok_or_else(|| {
            Error::invalid("gold records lack \"fertility\", required with --baseline")
        })?;
        let base_preds = index_predictions(read_jsonl(baseline_path)?, &gold_ids, baseline_path)?;
        let (base_values, _) = per_example_values(task, &gold, &base_preds)?;
        let lo = fertilities.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = fertilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let edges: Vec<f64> = (0..=4)
            .map(|i| lo + (hi - lo).max(1e-9) * i as f64 / 4.0)
            .collect();
        let bins = fertility_bins(&fertilities, &values, &base_values, &edges)?;
        std::fs::write(
            out.join("fertility-bins.json"),
            serde_json::to_string_pretty(&bins).map_err(io_err)?,
        )?;
        if chart {
            let bars: Vec<(String, f64)> = bins
                .iter()
                .map(|b| (format!("{:.2}-{:.2}", b.lo, b.hi), b.difference.unwrap_or(0.0)))
                .collect();
            let svg = chart::bar_chart(
                &format!("{value_label} gap vs baseline by fertility"),
                &format!("Δ {value_label}"),
                &bars,
            );
            std::fs::write(out.join("fertility-bins.svg"), svg)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rank
// ---------------------------------------------------------------------------

pub fn rank(
    scores: &Path,
    out: &Path,
    confidence: f64,
    resamples: u64,
    seed: u64,
    chart: bool,
) -> Result<()> {
    let rows = load_score_rows(scores)?;
    let table = ScoreTable::from_rows(&rows)?;
    let report = rank_systems(&table, confidence, resamples, seed)?;

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("ranking.jsonl"), report.to_jsonl())?;
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(io_err)?,
    )?;
    let rendered = report.render_table();
    std::fs::write(out.join("ranking-table.txt"), &rendered)?;
    if chart {
        let bars: Vec<(String, f64)> = report
            .ordering
            .iter()
            .map(|&s| (report.systems[s].clone(), report.borda[s]))
            .collect();
        let svg = chart::bar_chart("Mean significance-cluster rank", "mean cluster", &bars);
        std::fs::write(out.join("borda.svg"), svg)?;
    }
    let mut stdout = std::io::stdout();
    stdout.write_all(rendered.as_bytes())?;
    match &report.clear_winner {
        Some(winner) => println!("clear winner: {winner}"),
        None => println!("no clear winner at confidence {confidence}"),
    }
    Ok(())
}
