//! Task heads and the standardized fine-tuning protocol: sequence
//! classification, sequence regression, token classification, and
//! contrastive retrieval, plus the learning-rate grid search that picks the
//! best run by validation metric.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamix::pad_rows;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream_rng};
use crate::tensor::{fl, Elem, Graph, Tensor};
use crate::tokenizer::Vocab;
use crate::trainer::{AdamWConfig, OptimizerState};

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    SeqClass { classes: usize },
    SeqRegress,
    TokenClass { labels: usize },
    /// Projects pooled states back to `d_model`-wide embedding vectors.
    RetrievalEmbed,
}

impl HeadKind {
    pub fn output_width(&self, d_model: usize) -> usize {
        match *self {
            HeadKind::SeqClass { classes } => classes,
            HeadKind::SeqRegress => 1,
            HeadKind::TokenClass { labels } => labels,
            HeadKind::RetrievalEmbed => d_model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    FirstToken,
    MeanOverNonPad,
}

/// A linear projection on top of encoder states, with sequence-level
/// pooling for everything except token classification.
pub struct TaskHead {
    pub kind: HeadKind,
    pub pooling: Pooling,
    /// `[d_model, output_width]`.
    pub proj: Tensor<f32>,
}

impl TaskHead {
    pub fn init(kind: HeadKind, pooling: Pooling, d_model: usize, seed: u64) -> Result<TaskHead> {
        match kind {
            HeadKind::SeqClass { classes } if classes < 2 => {
                return Err(Error::invalid("a classifier needs at least 2 classes"));
            }
            HeadKind::TokenClass { labels } if labels < 2 => {
                return Err(Error::invalid("a token classifier needs at least 2 labels"));
            }
            _ => {}
        }
        let width = kind.output_width(d_model);
        let std = (d_model as f64).powf(-0.5);
        let mut rng = stream_rng(seed, "head-init", 0);
        let data: Vec<f32> = (0..d_model * width)
            .map(|_| (standard_normal(&mut rng) * std) as f32)
            .collect();
        let proj = Tensor::from_vec(&[d_model, width], data)?.with_grad();
        Ok(TaskHead { kind, pooling, proj })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<f32>)> {
        vec![("head.proj".to_string(), self.proj.clone())]
    }

    /// Pool `[batch·seq, d]` hidden states to `[batch, d]` rows.
    ///
    /// Pooling is a constant matrix multiply, so gradients flow through to
    /// the encoder unchanged.
    pub fn pool(
        &self,
        g: &mut Graph<f32>,
        hidden: &Tensor<f32>,
        pad: &[bool],
        batch: usize,
        seq_len: usize,
    ) -> Result<Tensor<f32>> {
        if pad.len() != batch * seq_len {
            return Err(Error::invalid(format!(
                "pad mask of {} entries for {batch}×{seq_len} positions",
                pad.len()
            )));
        }
        let mut weights = vec![0.0f32; batch * batch * seq_len];
        for b in 0..batch {
            let row = &pad[b * seq_len..(b + 1) * seq_len];
            match self.pooling {
                Pooling::FirstToken => {
                    weights[b * batch * seq_len + b * seq_len] = 1.0;
                }
                Pooling::MeanOverNonPad => {
                    let count = row.iter().filter(|&&p| !p).count();
                    if count == 0 {
                        return Err(Error::EmptySelection("pooling over an all-padding row"));
                    }
                    for (t, &p) in row.iter().enumerate() {
                        if !p {
                            weights[b * batch * seq_len + b * seq_len + t] = 1.0 / count as f32;
                        }
                    }
                }
            }
        }
        let pool = Tensor::from_vec(&[batch, batch * seq_len], weights)?;
        g.matmul(&pool, hidden)
    }

    /// Sequence-level output: pooled states through the projection,
    /// `[batch, output_width]`.
    pub fn sequence_output(
        &self,
        g: &mut Graph<f32>,
        hidden: &Tensor<f32>,
        pad: &[bool],
        batch: usize,
        seq_len: usize,
    ) -> Result<Tensor<f32>> {
        let pooled = self.pool(g, hidden, pad, batch, seq_len)?;
        g.matmul(&pooled, &self.proj)
    }

    /// Per-token logits `[batch·seq, labels]` for token classification.
    pub fn token_output(&self, g: &mut Graph<f32>, hidden: &Tensor<f32>) -> Result<Tensor<f32>> {
        g.matmul(hidden, &self.proj)
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy over every row.
pub fn classification_loss<F: Elem>(
    g: &mut Graph<F>,
    logits: &Tensor<F>,
    classes: &[usize],
) -> Result<Tensor<F>> {
    let selected = vec![true; classes.len()];
    g.softmax_cross_entropy(logits, classes, &selected)
}

/// Mean squared error between `[n, 1]` predictions and targets.
pub fn regression_loss<F: Elem>(
    g: &mut Graph<F>,
    predictions: &Tensor<F>,
    targets: &[f64],
) -> Result<Tensor<F>> {
    let shape = predictions.shape();
    if shape != [targets.len(), 1] {
        return Err(Error::invalid(format!(
            "predictions of shape {shape:?} against {} targets",
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::EmptySelection("regression over no targets"));
    }
    let t = Tensor::from_vec(&shape, targets.iter().map(|&x| fl::<F>(x)).collect())?;
    let diff = g.sub(predictions, &t)?;
    let sq = g.mul(&diff, &diff)?;
    let total = g.sum_all(&sq);
    Ok(g.scale(&total, 1.0 / targets.len() as f64))
}

/// Cross-entropy over the labeled positions only.
pub fn token_classification_loss<F: Elem>(
    g: &mut Graph<F>,
    logits: &Tensor<F>,
    labels: &[usize],
    selected: &[bool],
) -> Result<Tensor<F>> {
    g.softmax_cross_entropy(logits, labels, selected)
}

/// Contrastive loss with in-batch negatives and cosine similarity:
/// `s_ij = cos(q_i, d_j)/τ`, `loss = mean_i CE(softmax(s_i·), i)`.
pub fn infonce_loss<F: Elem>(
    g: &mut Graph<F>,
    queries: &Tensor<F>,
    docs: &Tensor<F>,
    temperature: f64,
) -> Result<Tensor<F>> {
    let (qs, ds) = (queries.shape(), docs.shape());
    if qs.len() != 2 || qs != ds {
        return Err(Error::ShapeMismatch { op: "infonce_loss", lhs: qs, rhs: ds });
    }
    let b = qs[0];
    if b < 2 {
        return Err(Error::invalid(
            "in-batch negatives need a batch of at least 2 pairs",
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature {temperature} must be positive"
        )));
    }
    for (name, t) in [("query", queries), ("doc", docs)] {
        let data = t.data();
        for i in 0..b {
            let norm_sq: f64 = data[i * qs[1]..(i + 1) * qs[1]]
                .iter()
                .map(|&x| {
                    let v = x.to_f64().unwrap();
                    v * v
                })
                .sum();
            if norm_sq <= 0.0 {
                return Err(Error::invalid(format!("{name} embedding {i} has zero norm")));
            }
        }
    }
    let normalize = |g: &mut Graph<F>, x: &Tensor<F>| -> Result<Tensor<F>> {
        let sq = g.mul(x, x)?;
        let norm_sq = g.sum_rows(&sq)?; // [b, 1]
        let inv_norm = g.powf(&norm_sq, -0.5);
        g.mul(x, &inv_norm)
    };
    let qn = normalize(g, queries)?;
    let dn = normalize(g, docs)?;
    let dt = g.transpose(&dn)?;
    let sims = g.matmul(&qn, &dt)?;
    let scaled = g.scale(&sims, 1.0 / temperature);
    let targets: Vec<usize> = (0..b).collect();
    let selected = vec![true; b];
    g.softmax_cross_entropy(&scaled, &targets, &selected)
}

// ---------------------------------------------------------------------------
// Token-classification prediction
// ---------------------------------------------------------------------------

/// Entity labels by majority vote over sub-token argmaxes.
///
/// For each span, every sub-token votes with its argmax label; the modal
/// label wins, and a tie goes to the tied label that appears earliest in
/// the span (so a 1–1 split picks the first sub-token's label).
pub fn token_class_predict(
    logits: &[f32],
    n_labels: usize,
    spans: &[(usize, usize)],
) -> Result<Vec<usize>> {
    if n_labels == 0 || logits.len() % n_labels != 0 {
        return Err(Error::invalid(format!(
            "{} logits do not form rows of {n_labels} labels",
            logits.len()
        )));
    }
    let n_tokens = logits.len() / n_labels;
    let argmax: Vec<usize> = (0..n_tokens)
        .map(|t| {
            let row = &logits[t * n_labels..(t + 1) * n_labels];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect();

    spans
        .iter()
        .map(|&(start, end)| {
            if start >= end || end > n_tokens {
                return Err(Error::invalid(format!(
                    "span {start}..{end} is empty or outside {n_tokens} tokens"
                )));
            }
            let votes = &argmax[start..end];
            let mut counts = vec![0usize; n_labels];
            for &v in votes {
                counts[v] += 1;
            }
            let best = *counts.iter().max().unwrap();
            // Earliest-appearing label among those tied at the top.
            Ok(*votes.iter().find(|&&v| counts[v] == best).unwrap())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Protocol
// ---------------------------------------------------------------------------

/// Geometric sequence of `n` rates from `lo` to `hi` inclusive.
pub fn lr_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::invalid(format!(
            "grid bounds [{lo}, {hi}] must satisfy 0 < lo < hi"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("a grid needs at least 2 points"));
    }
    let ratio = hi / lo;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi // exact endpoint regardless of powf rounding
            } else {
                lo * ratio.powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneProtocol {
    pub steps: u64,
    pub batch: usize,
    pub warmup_fraction: f64,
    pub lr_grid: Vec<f64>,
    /// Validation evaluations (one per epoch) without improvement before a
    /// run stops early.
    pub patience: u64,
    /// Freeze the encoder and train only the head.
    pub head_only: bool,
    /// InfoNCE temperature for retrieval tasks.
    pub temperature: f64,
    pub optimizer: AdamWConfig,
}

impl FinetuneProtocol {
    /// Reference protocol: 10,000 steps, batch 32, 10% warmup, 10
    /// log-spaced rates spanning 1e-5 to 1e-4.
    pub fn classification_reference() -> FinetuneProtocol {
        FinetuneProtocol {
            steps: 10_000,
            batch: 32,
            warmup_fraction: 0.1,
            lr_grid: lr_grid(1e-5, 1e-4, 10).expect("static grid bounds"),
            patience: 1,
            head_only: false,
            temperature: 0.05,
            optimizer: AdamWConfig::default(),
        }
    }

    /// Retrieval runs use the same protocol over a tenth of the steps.
    pub fn retrieval_reference() -> FinetuneProtocol {
        FinetuneProtocol { steps: 1_000, ..FinetuneProtocol::classification_reference() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {} outside [0, 1)",
                self.warmup_fraction
            )));
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::Config("lr grid must be non-empty and positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then linear decay to zero at `steps`.
    fn lr_at(&self, step: u64, lr: f64) -> f64 {
        let warmup = (self.steps as f64 * self.warmup_fraction).round() as u64;
        if warmup > 0 && step < warmup {
            lr * step as f64 / warmup as f64
        } else if self.steps <= 1 {
            lr
        } else {
            let rest = (self.steps - warmup).max(1) as f64;
            lr * (self.steps - step) as f64 / rest
        }
    }
}

// ---------------------------------------------------------------------------
// Task data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum TaskTarget {
    Class(usize),
    Score(f64),
    /// One entry per token; `None` marks unlabeled positions.
    TokenLabels(Vec<Option<usize>>),
    /// Retrieval positive (document side of the pair).
    Positive(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub tokens: Vec<u32>,
    pub target: TaskTarget,
}

#[derive(Deserialize)]
struct RawTask {
    text: Option<String>,
    label: Option<usize>,
    score: Option<f64>,
    spans: Option<Vec<(usize, usize, usize)>>,
    query: Option<String>,
    positive: Option<String>,
}

/// Read task examples in the line-delimited record format: `text` plus
/// `label` / `score` / byte-offset `spans`, or `query`/`positive` pairs.
pub fn load_task_data(path: &Path, vocab: &Vocab, kind: &HeadKind) -> Result<Vec<TaskExample>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let raw: RawTask = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        examples.push(task_example(raw, kind, vocab, line_no)?);
    }
    Ok(examples)
}

fn task_example(raw: RawTask, kind: &HeadKind, vocab: &Vocab, line: usize) -> Result<TaskExample> {
    let parse_err = |msg: String| Error::Parse { line, msg };
    let text_tokens = |text: &Option<String>| -> Result<(Vec<u32>, Vec<(usize, usize)>)> {
        let text = text
            .as_deref()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| parse_err("missing required field \"text\"".into()))?;
        let enc = vocab.encode(text);
        Ok((enc.ids, enc.offsets))
    };
    match *kind {
        HeadKind::SeqClass { classes } => {
            let (tokens, _) = text_tokens(&raw.text)?;
            let label = raw
                .label
                .ok_or_else(|| parse_err("missing required field \"label\"".into()))?;
            if label >= classes {
                return Err(parse_err(format!("label {label} outside 0..{classes}")));
            }
            Ok(TaskExample { tokens, target: TaskTarget::Class(label) })
        }
        HeadKind::SeqRegress => {
            let (tokens, _) = text_tokens(&raw.text)?;
            let score = raw
                .score
                .ok_or_else(|| parse_err("missing required field \"score\"".into()))?;
            Ok(TaskExample { tokens, target: TaskTarget::Score(score) })
        }
        HeadKind::TokenClass { labels } => {
            let (tokens, offsets) = text_tokens(&raw.text)?;
            let spans = raw
                .spans
                .ok_or_else(|| parse_err("missing required field \"spans\"".into()))?;
            let mut per_token: Vec<Option<usize>> = vec![None; tokens.len()];
            for &(start, end, label) in &spans {
                if label >= labels {
                    return Err(parse_err(format!("span label {label} outside 0..{labels}")));
                }
                if start >= end {
                    return Err(parse_err(format!("empty span {start}..{end}")));
                }
                for (t, &(ts, te)) in offsets.iter().enumerate() {
                    if ts < end && start < te {
                        per_token[t] = Some(label);
                    }
                }
            }
            Ok(TaskExample { tokens, target: TaskTarget::TokenLabels(per_token) })
        }
        HeadKind::RetrievalEmbed => {
            let query = raw
                .query
                .as_deref()
                .filter(|t| !t.is_empty())
                .ok_or_else(|| parse_err("missing required field \"query\"".into()))?;
            let positive = raw
                .positive
                .as_deref()
                .filter(|t| !t.is_empty())
                .ok_or_else(|| parse_err("missing required field \"positive\"".into()))?;
            Ok(TaskExample {
                tokens: vocab.encode(query).ids,
                target: TaskTarget::Positive(vocab.encode(positive).ids),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GridRecord {
    pub lr: f64,
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridPoint {
    pub lr: f64,
    pub best_value: f64,
    pub records: Vec<GridRecord>,
}

pub struct FinetuneOutcome {
    pub best_lr: f64,
    pub best_value: f64,
    pub metric: String,
    pub grid: Vec<GridPoint>,
    pub model: EncoderModel<f32>,
    pub head: TaskHead,
}

fn metric_name(kind: &HeadKind) -> &'static str {
    match kind {
        HeadKind::SeqClass { .. } => "accuracy",
        HeadKind::SeqRegress => "neg-mse",
        HeadKind::TokenClass { .. } => "token-accuracy",
        HeadKind::RetrievalEmbed => "in-batch-accuracy",
    }
}

fn clone_model(base: &EncoderModel<f32>) -> Result<EncoderModel<f32>> {
    let fresh = EncoderModel::<f32>::init(base.config.clone(), 0)?;
    for ((_, src), (_, dst)) in base.named_params().iter().zip(fresh.named_params().iter()) {
        dst.set_data(&src.to_vec());
    }
    Ok(fresh)
}

/// A padded batch of examples ready for the encoder.
struct TaskBatch {
    ids: Vec<u32>,
    pad: Vec<bool>,
    rows: usize,
    seq_len: usize,
    examples: Vec<TaskExample>,
}

fn build_batch(examples: &[TaskExample], vocab_size: usize) -> Result<TaskBatch> {
    let docs: Vec<Vec<u32>> = examples.iter().map(|e| e.tokens.clone()).collect();
    let packed = pad_rows(&docs, vocab_size, None)?;
    Ok(TaskBatch {
        ids: packed.ids,
        pad: packed.pad,
        rows: packed.rows,
        seq_len: packed.seq_len,
        examples: examples.to_vec(),
    })
}

/// Run the full grid: one training run per rate, each evaluated on the
/// validation split once per epoch. Returns the best run's model and head
/// (ties go to the smallest rate, so the result is grid-order invariant).
pub fn finetune(
    base: &EncoderModel<f32>,
    kind: HeadKind,
    pooling: Pooling,
    protocol: &FinetuneProtocol,
    train: &[TaskExample],
    val: &[TaskExample],
    seed: u64,
) -> Result<FinetuneOutcome> {
    protocol.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySelection("finetune: empty training data"));
    }
    if val.is_empty() {
        return Err(Error::EmptySelection("finetune: empty validation data"));
    }

    let mut grid = Vec::new();
    let mut best: Option<(f64, f64, EncoderModel<f32>, TaskHead)> = None;
    for &lr in &protocol.lr_grid {
        let (point, model, head) = run_grid_point(base, kind, pooling, protocol, train, val, seed, lr)?;
        let better = match &best {
            None => true,
            Some((best_value, best_lr, _, _)) => {
                point.best_value > *best_value
                    || (point.best_value == *best_value && lr < *best_lr)
            }
        };
        if better {
            best = Some((point.best_value, lr, model, head));
        }
        grid.push(point);
    }
    let (best_value, best_lr, model, head) = best.expect("non-empty grid");
    Ok(FinetuneOutcome {
        best_lr,
        best_value,
        metric: metric_name(&kind).to_string(),
        grid,
        model,
        head,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_grid_point(
    base: &EncoderModel<f32>,
    kind: HeadKind,
    pooling: Pooling,
    protocol: &FinetuneProtocol,
    train: &[TaskExample],
    val: &[TaskExample],
    seed: u64,
    lr: f64,
) -> Result<(GridPoint, EncoderModel<f32>, TaskHead)> {
    use rand::seq::SliceRandom;

    let model = clone_model(base)?;
    let head = TaskHead::init(kind, pooling, base.config.d_model, seed)?;
    let mut params = head.named_params();
    if !protocol.head_only {
        params.extend(model.named_params());
    }
    let mut optimizer = OptimizerState::new(protocol.optimizer, &params);

    let epoch_len = (train.len() as u64).div_ceil(protocol.batch as u64).max(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut best_value = f64::NEG_INFINITY;
    let mut best_snapshot: Option<Vec<Vec<f32>>> = None;
    let mut evals_since_best = 0u64;
    let metric = metric_name(&kind);

    let mut epoch = 0u64;
    let mut cursor = 0usize;
    for step in 0..protocol.steps {
        if cursor == 0 {
            let mut rng = stream_rng(seed, "finetune-epoch", epoch);
            order.shuffle(&mut rng);
        }
        let hi = (cursor + protocol.batch).min(train.len());
        let batch_examples: Vec<TaskExample> =
            order[cursor..hi].iter().map(|&i| train[i].clone()).collect();
        cursor = if hi == train.len() { 0 } else { hi };

        let step_lr = protocol.lr_at(step, lr);
        train_step(&model, &head, protocol, &batch_examples, step_lr, &mut optimizer, &params)?;

        let epoch_end = cursor == 0;
        let last_step = step + 1 == protocol.steps;
        if epoch_end || last_step {
            let value = evaluate(&model, &head, protocol, val)?;
            records.push(GridRecord {
                lr,
                step: step + 1,
                split: "val".into(),
                metric: metric.into(),
                value,
            });
            if value > best_value {
                best_value = value;
                best_snapshot = Some(params.iter().map(|(_, p)| p.to_vec()).collect());
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best > protocol.patience {
                    break;
                }
            }
            if epoch_end {
                epoch += 1;
            }
        }
        let _ = epoch_len; // epochs are tracked by cursor wrap, not arithmetic
    }

    if let Some(snapshot) = best_snapshot {
        for ((_, param), data) in params.iter().zip(&snapshot) {
            param.set_data(data);
        }
    }
    Ok((GridPoint { lr, best_value, records }, model, head))
}

fn train_step(
    model: &EncoderModel<f32>,
    head: &TaskHead,
    protocol: &FinetuneProtocol,
    examples: &[TaskExample],
    lr: f64,
    optimizer: &mut OptimizerState,
    params: &[(String, Tensor<f32>)],
) -> Result<()> {
    for (_, p) in params {
        p.zero_grad();
    }
    let mut g = Graph::<f32>::new();
    let loss = batch_loss(&mut g, model, head, protocol, examples)?;
    if !loss.item().is_finite() {
        return Err(Error::NonFinite("fine-tuning loss became non-finite".into()));
    }
    g.backward(&loss)?;
    optimizer.apply(params, lr)?;
    Ok(())
}

fn batch_loss(
    g: &mut Graph<f32>,
    model: &EncoderModel<f32>,
    head: &TaskHead,
    protocol: &FinetuneProtocol,
    examples: &[TaskExample],
) -> Result<Tensor<f32>> {
    let vocab_size = model.config.vocab_size;
    match head.kind {
        HeadKind::SeqClass { .. } => {
            let batch = build_batch(examples, vocab_size)?;
            let out = model.forward(g, &batch.ids, &batch.pad, batch.seq_len, model.config.rope_theta)?;
            let logits = head.sequence_output(g, &out.hidden, &batch.pad, batch.rows, batch.seq_len)?;
            let classes: Vec<usize> = batch
                .examples
                .iter()
                .map(|e| match e.target {
                    TaskTarget::Class(c) => Ok(c),
                    _ => Err(Error::invalid("expected class targets")),
                })
                .collect::<Result<_>>()?;
            classification_loss(g, &logits, &classes)
        }
        HeadKind::SeqRegress => {
            let batch = build_batch(examples, vocab_size)?;
            let out = model.forward(g, &batch.ids, &batch.pad, batch.seq_len, model.config.rope_theta)?;
            let preds = head.sequence_output(g, &out.hidden, &batch.pad, batch.rows, batch.seq_len)?;
            let scores: Vec<f64> = batch
                .examples
                .iter()
                .map(|e| match e.target {
                    TaskTarget::Score(s) => Ok(s),
                    _ => Err(Error::invalid("expected score targets")),
                })
                .collect::<Result<_>>()?;
            regression_loss(g, &preds, &scores)
        }
        HeadKind::TokenClass { .. } => {
            let batch = build_batch(examples, vocab_size)?;
            let out = model.forward(g, &batch.ids, &batch.pad, batch.seq_len, model.config.rope_theta)?;
            let logits = head.token_output(g, &out.hidden)?;
            let n = batch.rows * batch.seq_len;
            let mut labels = vec![0usize; n];
            let mut selected = vec![false; n];
            for (b, example) in batch.examples.iter().enumerate() {
                let TaskTarget::TokenLabels(per_token) = &example.target else {
                    return Err(Error::invalid("expected token-label targets"));
                };
                for (t, label) in per_token.iter().enumerate() {
                    if let Some(l) = label {
                        labels[b * batch.seq_len + t] = *l;
                        selected[b * batch.seq_len + t] = true;
                    }
                }
            }
            token_classification_loss(g, &logits, &labels, &selected)
        }
        HeadKind::RetrievalEmbed => {
            let queries: Vec<TaskExample> = examples.to_vec();
            let positives: Vec<TaskExample> = examples
                .iter()
                .map(|e| match &e.target {
                    TaskTarget::Positive(doc) => Ok(TaskExample {
                        tokens: doc.clone(),
                        target: TaskTarget::Class(0),
                    }),
                    _ => Err(Error::invalid("expected retrieval pairs")),
                })
                .collect::<Result<_>>()?;
            let qb = build_batch(&queries, vocab_size)?;
            let db = build_batch(&positives, vocab_size)?;
            let q_out = model.forward(g, &qb.ids, &qb.pad, qb.seq_len, model.config.rope_theta)?;
            let d_out = model.forward(g, &db.ids, &db.pad, db.seq_len, model.config.rope_theta)?;
            let q_emb = head.sequence_output(g, &q_out.hidden, &qb.pad, qb.rows, qb.seq_len)?;
            let d_emb = head.sequence_output(g, &d_out.hidden, &db.pad, db.rows, db.seq_len)?;
            infonce_loss(g, &q_emb, &d_emb, protocol.temperature)
        }
    }
}

/// Validation metric (higher is better) for the head's task.
pub fn evaluate(
    model: &EncoderModel<f32>,
    head: &TaskHead,
    protocol: &FinetuneProtocol,
    examples: &[TaskExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptySelection("evaluate: no examples"));
    }
    let vocab_size = model.config.vocab_size;
    let mut g = Graph::<f32>::no_grad();
    let mut correct = 0.0f64;
    let mut total = 0.0f64;
    let mut sq_err = 0.0f64;
    for chunk in examples.chunks(protocol.batch.max(2)) {
        match head.kind {
            HeadKind::SeqClass { classes } => {
                let batch = build_batch(chunk, vocab_size)?;
                let out = model.forward(&mut g, &batch.ids, &batch.pad, batch.seq_len, model.config.rope_theta)?;
                let logits = head.sequence_output(&mut g, &out.hidden, &batch.pad, batch.rows, batch.seq_len)?;
                let data = logits.to_vec();
                for (b, example) in batch.examples.iter().enumerate() {
                    let TaskTarget::Class(want) = example.target else {
                        return Err(Error::invalid("expected class targets"));
                    };
                    let row = &data[b * classes..(b + 1) * classes];
                    let got = argmax(row);
                    correct += (got == want) as u32 as f64;
                    total += 1.0;
                }
            }
            HeadKind::SeqRegress => {
                let batch = build_batch(chunk, vocab_size)?;
                let out = model.forward(&mut g, &batch.ids, &batch.pad, batch.seq_len, model.config.rope_theta)?;
                let preds = head.sequence_output(&mut g, &out.hidden, &batch.pad, batch.rows, batch.seq_len)?;
                let data = preds.to_vec();
                for (b, example) in batch.examples.iter().enumerate() {
                    let TaskTarget::Score(want) = example.target else {
                        return Err(Error::invalid("expected score targets"));
                    };
                    sq_err += (data[b] as f64 - want).powi(2);
                    total += 1.0;
                }
            }
            HeadKind::TokenClass { labels } => {
                let batch = build_batch(chunk, vocab_size)?;
                let out = model.forward(&mut g, &batch.ids, &batch.pad, batch.seq_len, model.config.rope_theta)?;
                let logits = head.token_output(&mut g, &out.hidden)?;
                let data = logits.to_vec();
                for (b, example) in batch.examples.iter().enumerate() {
                    let TaskTarget::TokenLabels(per_token) = &example.target else {
                        return Err(Error::invalid("expected token-label targets"));
                    };
                    for (t, label) in per_token.iter().enumerate() {
                        if let Some(want) = label {
                            let row_at = (b * batch.seq_len + t) * labels;
                            let got = argmax(&data[row_at..row_at + labels]);
                            correct += (got == *want) as u32 as f64;
                            total += 1.0;
                        }
                    }
                }
            }
            HeadKind::RetrievalEmbed => {
                if chunk.len() < 2 {
                    continue; // a lone pair has no negatives to rank against
                }
                let queries: Vec<TaskExample> = chunk.to_vec();
                let positives: Vec<TaskExample> = chunk
                    .iter()
                    .map(|e| match &e.target {
                        TaskTarget::Positive(doc) => Ok(TaskExample {
                            tokens: doc.clone(),
                            target: TaskTarget::Class(0),
                        }),
                        _ => Err(Error::invalid("expected retrieval pairs")),
                    })
                    .collect::<Result<_>>()?;
                let qb = build_batch(&queries, vocab_size)?;
                let db = build_batch(&positives, vocab_size)?;
                let q_out = model.forward(&mut g, &qb.ids, &qb.pad, qb.seq_len, model.config.rope_theta)?;
                let d_out = model.forward(&mut g, &db.ids, &db.pad, db.seq_len, model.config.rope_theta)?;
                let q_emb = head.sequence_output(&mut g, &q_out.hidden, &qb.pad, qb.rows, qb.seq_len)?;
                let d_emb = head.sequence_output(&mut g, &d_out.hidden, &db.pad, db.rows, db.seq_len)?;
                let (q, d) = (q_emb.to_vec(), d_emb.to_vec());
                let width = model.config.d_model;
                for i in 0..chunk.len() {
                    let qi = &q[i * width..(i + 1) * width];
                    let best = (0..chunk.len())
                        .map(|j| cosine(qi, &d[j * width..(j + 1) * width]))
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite similarity"))
                        .map(|(j, _)| j)
                        .unwrap();
                    correct += (best == i) as u32 as f64;
                    total += 1.0;
                }
            }
        }
    }
    if total == 0.0 {
        return Err(Error::EmptySelection("evaluate: no scoreable examples"));
    }
    Ok(match head.kind {
        HeadKind::SeqRegress => -(sq_err / total),
        _ => correct / total,
    })
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite values"))
        .map(|(i, _)| i)
        .unwrap()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    dot / (na.sqrt() * nb.sqrt()).max(f64::MIN_POSITIVE)
}
