//! Corpus ingestion, declarative mixture sampling, parallel-pair
//! construction, quality bucketing, sequence packing, and random cropping.
//!
//! The pipeline is deliberately deterministic: mixture draws and pool
//! reshuffles run on seeded streams, so two runs over the same corpus files
//! produce identical batches.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tokenizer::Vocab;

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

/// Broad content category of a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocKind {
    Mono,
    ParallelPair,
    Code,
    Math,
    Instruction,
}

impl DocKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::Mono => "mono",
            DocKind::ParallelPair => "parallel-pair",
            DocKind::Code => "code",
            DocKind::Math => "math",
            DocKind::Instruction => "instruction",
        }
    }
}

/// Either a single text or a translation pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocContent {
    Text(String),
    Pair { src: String, tgt: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub content: DocContent,
    pub lang: String,
    pub source: String,
    /// Quality bucket in 1..=4 (4 best); absent when unclassified.
    pub quality: Option<u8>,
    pub kind: DocKind,
}

impl Document {
    pub fn is_pair(&self) -> bool {
        matches!(self.content, DocContent::Pair { .. })
    }

    /// Crude size proxy (whitespace word count) used for token-mass
    /// accounting before any tokenizer exists.
    pub fn word_count(&self) -> usize {
        match &self.content {
            DocContent::Text(t) => t.split_whitespace().count(),
            DocContent::Pair { src, tgt } => {
                src.split_whitespace().count() + tgt.split_whitespace().count()
            }
        }
    }
}

/// Raw wire form of one corpus line; validation happens after parsing so
/// error messages can carry the line number.
#[derive(Deserialize)]
struct RawRecord {
    text: Option<String>,
    src: Option<String>,
    tgt: Option<String>,
    lang: Option<String>,
    source: Option<String>,
    quality: Option<u8>,
    kind: Option<DocKind>,
}

fn record_to_document(raw: RawRecord, line: usize) -> Result<Document> {
    let parse_err = |msg: String| Error::Parse { line, msg };
    let kind = raw.kind.unwrap_or(DocKind::Mono);
    let lang = raw
        .lang
        .filter(|l| !l.is_empty())
        .ok_or_else(|| parse_err("missing required field \"lang\"".into()))?;
    let source = raw
        .source
        .filter(|s| !s.is_empty())
        .ok_or_else(|| parse_err("missing required field \"source\"".into()))?;
    if let Some(q) = raw.quality {
        if !(1..=4).contains(&q) {
            return Err(parse_err(format!("quality {q} outside 1..=4")));
        }
    }
    let content = if kind == DocKind::ParallelPair {
        if raw.text.is_some() {
            return Err(parse_err(
                "parallel-pair records use src/tgt, not text".into(),
            ));
        }
        let src = raw
            .src
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err("parallel-pair record missing non-empty \"src\"".into()))?;
        let tgt = raw
            .tgt
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err("parallel-pair record missing non-empty \"tgt\"".into()))?;
        DocContent::Pair { src, tgt }
    } else {
        if raw.src.is_some() || raw.tgt.is_some() {
            return Err(parse_err(format!(
                "src/tgt fields are only valid on parallel-pair records, not kind \"{}\"",
                kind.as_str()
            )));
        }
        DocContent::Text(
            raw.text
                .ok_or_else(|| parse_err("missing required field \"text\"".into()))?,
        )
    };
    Ok(Document { content, lang, source, quality: raw.quality, kind })
}

/// Streaming reader over a line-delimited corpus (one JSON record per line).
pub struct DocStream<R: BufRead> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Iterator for DocStream<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            match self.lines.next()? {
                Err(e) => return Some(Err(e.into())),
                Ok(line) => {
                    if line.trim().is_empty() {
                        continue; // blank lines are not records
                    }
                    let parsed = serde_json::from_str::<RawRecord>(&line)
                        .map_err(|e| Error::Parse { line: self.line_no, msg: e.to_string() })
                        .and_then(|raw| record_to_document(raw, self.line_no));
                    return Some(parsed);
                }
            }
        }
    }
}

/// Open a corpus file as a document stream; malformed lines surface as
/// errors naming their line number.
pub fn ingest(path: &Path) -> Result<DocStream<BufReader<File>>> {
    Ok(ingest_reader(BufReader::new(File::open(path)?)))
}

pub fn ingest_reader<R: BufRead>(reader: R) -> DocStream<R> {
    DocStream { lines: reader.lines(), line_no: 0 }
}

// ---------------------------------------------------------------------------
// Parallel pairs and quality buckets
// ---------------------------------------------------------------------------

/// Encode a translation pair as `src ++ <|parallel_sep|> ++ tgt`.
/// Exactly one separator id appears in the output.
pub fn make_parallel(src: &str, tgt: &str, vocab: &Vocab) -> Result<Vec<u32>> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::invalid(
            "make_parallel: both sides of a pair must be non-empty",
        ));
    }
    let mut ids = vocab.encode(src).ids;
    ids.push(Vocab::PARALLEL_SEP);
    ids.extend(vocab.encode(tgt).ids);
    Ok(ids)
}

/// Tokenize one document: plain encode for single texts, separator joining
/// for pairs.
pub fn encode_document(doc: &Document, vocab: &Vocab) -> Result<Vec<u32>> {
    match &doc.content {
        DocContent::Text(t) => Ok(vocab.encode(t).ids),
        DocContent::Pair { src, tgt } => make_parallel(src, tgt, vocab),
    }
}

pub fn quality_passes(quality: Option<u8>, min_bucket: u8, unlabeled_pass: bool) -> bool {
    match quality {
        Some(q) => q >= min_bucket,
        None => unlabeled_pass,
    }
}

/// Keep documents with quality ≥ `min_bucket`; unlabeled documents pass only
/// when `unlabeled_pass` is set. Idempotent for any fixed arguments.
pub fn quality_filter<I>(docs: I, min_bucket: u8, unlabeled_pass: bool) -> Result<Vec<Document>>
where
    I: IntoIterator<Item = Document>,
{
    if !(1..=4).contains(&min_bucket) {
        return Err(Error::invalid(format!(
            "quality threshold {min_bucket} outside 1..=4"
        )));
    }
    Ok(docs
        .into_iter()
        .filter(|d| quality_passes(d.quality, min_bucket, unlabeled_pass))
        .collect())
}

// ---------------------------------------------------------------------------
// Mixture specification
// ---------------------------------------------------------------------------

/// One mixture component: a selector over document attributes plus the
/// fraction of draws it should receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DocKind>,
    /// Minimum quality bucket; unlabeled documents do not match when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_quality: Option<u8>,
    pub weight: f64,
}

impl MixEntry {
    pub fn matches(&self, doc: &Document) -> bool {
        self.source.as_deref().is_none_or(|s| s == doc.source)
            && self.lang.as_deref().is_none_or(|l| l == doc.lang)
            && self.kind.is_none_or(|k| k == doc.kind)
            && self
                .min_quality
                .is_none_or(|q| quality_passes(doc.quality, q, false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub name: String,
    pub entries: Vec<MixEntry>,
}

impl MixSpec {
    pub fn from_toml_str(text: &str) -> Result<MixSpec> {
        let mut spec: MixSpec =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (i, entry) in spec.entries.iter_mut().enumerate() {
            if entry.name.is_empty() {
                entry.name = format!("entry-{i}");
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<MixSpec> {
        MixSpec::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config(format!("mix \"{}\" has no entries", self.name)));
        }
        for entry in &self.entries {
            if !(entry.weight > 0.0) {
                return Err(Error::Config(format!(
                    "mix entry \"{}\" has non-positive weight {}",
                    entry.name, entry.weight
                )));
            }
            if let Some(q) = entry.min_quality {
                if !(1..=4).contains(&q) {
                    return Err(Error::Config(format!(
                        "mix entry \"{}\" quality threshold {q} outside 1..=4",
                        entry.name
                    )));
                }
            }
        }
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mix \"{}\" weights sum to {total}, expected 1.0 ± 1e-9",
                self.name
            )));
        }
        Ok(())
    }

    /// Assign each document to the first entry whose selector matches;
    /// unmatched documents are dropped. Errors if any entry ends up with an
    /// empty pool (its selector matches nothing in the corpus).
    pub fn partition(&self, docs: Vec<Document>) -> Result<Vec<Vec<Document>>> {
        let mut pools: Vec<Vec<Document>> = vec![Vec::new(); self.entries.len()];
        for doc in docs {
            if let Some(i) = self.entries.iter().position(|e| e.matches(&doc)) {
                pools[i].push(doc);
            }
        }
        for (entry, pool) in self.entries.iter().zip(&pools) {
            if pool.is_empty() {
                return Err(Error::Config(format!(
                    "mix entry \"{}\" matches no documents in the corpus",
                    entry.name
                )));
            }
        }
        Ok(pools)
    }

    /// The main-phase reference mixture. The per-language web weights follow
    /// the corpus share of each pool; grouped sources (parallel, math, code)
    /// absorb the rounding so the weights sum to exactly 1.
    pub fn pretrain_reference() -> MixSpec {
        let mut entries = vec![entry("fineweb-en", "fineweb", Some("en"), DocKind::Mono, 0.4134)];
        for &(lang, w) in CULTURAX_WEIGHTS {
            entries.push(entry(
                &format!("culturax-{lang}"),
                "culturax",
                Some(lang),
                DocKind::Mono,
                w,
            ));
        }
        entries.push(entry("parallel", "parallel-corpus", None, DocKind::ParallelPair, 0.0437));
        entries.push(entry("math", "proof-pile-2", None, DocKind::Math, 0.0437));
        entries.push(entry("code", "the-stack-v2", None, DocKind::Code, 0.1024));
        MixSpec { name: "pretrain-reference".into(), entries }
    }

    /// The decay-phase reference mixture: English reduced to 26%, the other
    /// languages scaled up proportionally, 6% math, 4% code, 6% parallel
    /// pairs, and no instruction data.
    pub fn anneal_reference() -> MixSpec {
        let culturax_total: f64 = CULTURAX_WEIGHTS.iter().map(|&(_, w)| w).sum();
        let scale = 0.58 / culturax_total;
        let mut entries = vec![entry("fineweb-en", "fineweb", Some("en"), DocKind::Mono, 0.26)];
        for &(lang, w) in CULTURAX_WEIGHTS {
            entries.push(entry(
                &format!("culturax-{lang}"),
                "culturax",
                Some(lang),
                DocKind::Mono,
                w * scale,
            ));
        }
        entries.push(entry("parallel", "parallel-corpus", None, DocKind::ParallelPair, 0.06));
        entries.push(entry("math", "proof-pile-2", None, DocKind::Math, 0.06));
        entries.push(entry("code", "the-stack-v2", None, DocKind::Code, 0.04));
        MixSpec { name: "anneal-reference".into(), entries }
    }
}

/// Web-corpus language shares of the main-phase mix, largest first.
const CULTURAX_WEIGHTS: &[(&str, f64)] = &[
    ("fr", 0.0609),
    ("de", 0.0602),
    ("es", 0.0600),
    ("zh", 0.0492),
    ("it", 0.0248),
    ("ru", 0.0241),
    ("pt", 0.0232),
    ("ja", 0.0232),
    ("pl", 0.0231),
    ("tr", 0.0110),
    ("ar", 0.0108),
    ("vi", 0.0105),
    ("nl", 0.0105),
    ("hi", 0.0053),
];

fn entry(name: &str, source: &str, lang: Option<&str>, kind: DocKind, weight: f64) -> MixEntry {
    MixEntry {
        name: name.into(),
        source: Some(source.into()),
        lang: lang.map(|l| l.into()),
        kind: Some(kind),
        min_quality: None,
        weight,
    }
}

// ---------------------------------------------------------------------------
// Mixture sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EntryReport {
    pub name: String,
    pub weight: f64,
    pub draws: u64,
    pub draw_fraction: f64,
    /// Word-count mass drawn from this entry, as a fraction of the total.
    pub token_fraction: f64,
    /// token_fraction − weight: how far document-draw sampling drifts from
    /// the token-mass target when pools have unequal document lengths.
    pub drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixReport {
    pub mix: String,
    pub entries: Vec<EntryReport>,
}

/// Weighted sampler over per-entry document pools.
///
/// Each draw picks entry `e` with probability `weight(e)`, then yields the
/// next document from pool `e`. Exhausted pools recycle with a fresh
/// deterministic shuffle (or error when recycling is disabled). Token-mass
/// drift relative to the weights is reported, not corrected.
pub struct MixSampler {
    spec: MixSpec,
    pools: Vec<Vec<Document>>,
    cursors: Vec<usize>,
    epochs: Vec<u64>,
    draws: Vec<u64>,
    words: Vec<u64>,
    rng: rand_chacha::ChaCha8Rng,
    seed: u64,
    recycle: bool,
}

impl MixSampler {
    pub fn new(
        spec: MixSpec,
        pools: Vec<Vec<Document>>,
        seed: u64,
        recycle: bool,
    ) -> Result<MixSampler> {
        spec.validate()?;
        if pools.len() != spec.entries.len() {
            return Err(Error::invalid(format!(
                "{} pools supplied for {} mix entries",
                pools.len(),
                spec.entries.len()
            )));
        }
        if let Some(i) = pools.iter().position(|p| p.is_empty()) {
            return Err(Error::invalid(format!(
                "pool for mix entry \"{}\" is empty",
                spec.entries[i].name
            )));
        }
        let n = pools.len();
        Ok(MixSampler {
            spec,
            pools,
            cursors: vec![0; n],
            epochs: vec![0; n],
            draws: vec![0; n],
            words: vec![0; n],
            rng: stream_rng(seed, "mix-draw", 0),
            seed,
            recycle,
        })
    }

    /// Draw one document; returns the index of the entry it came from.
    pub fn draw(&mut self) -> Result<(usize, Document)> {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut idx = self.spec.entries.len() - 1;
        for (i, e) in self.spec.entries.iter().enumerate() {
            acc += e.weight;
            if u < acc {
                idx = i;
                break;
            }
        }

        if self.cursors[idx] == self.pools[idx].len() {
            if !self.recycle {
                return Err(Error::EmptySelection(
                    "mix pool exhausted with recycling disabled",
                ));
            }
            self.epochs[idx] += 1;
            let mut shuffle_rng = stream_rng(
                self.seed,
                "pool-shuffle",
                ((idx as u64) << 32) | self.epochs[idx],
            );
            self.pools[idx].shuffle(&mut shuffle_rng);
            self.cursors[idx] = 0;
        }

        let doc = self.pools[idx][self.cursors[idx]].clone();
        self.cursors[idx] += 1;
        self.draws[idx] += 1;
        self.words[idx] += doc.word_count() as u64;
        Ok((idx, doc))
    }

    pub fn report(&self) -> MixReport {
        let total_draws: u64 = self.draws.iter().sum();
        let total_words: u64 = self.words.iter().sum();
        let entries = self
            .spec
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let draw_fraction = if total_draws == 0 {
                    0.0
                } else {
                    self.draws[i] as f64 / total_draws as f64
                };
                let token_fraction = if total_words == 0 {
                    0.0
                } else {
                    self.words[i] as f64 / total_words as f64
                };
                EntryReport {
                    name: e.name.clone(),
                    weight: e.weight,
                    draws: self.draws[i],
                    draw_fraction,
                    token_fraction,
                    drift: token_fraction - e.weight,
                }
            })
            .collect();
        MixReport { mix: self.spec.name.clone(), entries }
    }
}

// ---------------------------------------------------------------------------
// Packing and cropping
// ---------------------------------------------------------------------------

/// A rectangular batch of token rows with padding and boundary metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatch {
    /// Row-major `rows × seq_len` token ids.
    pub ids: Vec<u32>,
    pub pad: Vec<bool>,
    pub rows: usize,
    pub seq_len: usize,
    /// Per row: offsets of document-boundary (EOS) tokens.
    pub boundaries: Vec<Vec<usize>>,
}

impl PackedBatch {
    pub fn non_pad_tokens(&self) -> usize {
        self.pad.iter().filter(|&&p| !p).count()
    }
}

/// Streaming packer: documents are concatenated with an EOS boundary after
/// each one and the joint stream is cut into exact-length rows. The partial
/// tail stays buffered until [`Packer::flush`] pads it out.
pub struct Packer {
    seq_len: usize,
    buffer: VecDeque<u32>,
}

impl Packer {
    pub fn new(seq_len: usize) -> Result<Packer> {
        if seq_len < 2 {
            return Err(Error::invalid(format!(
                "pack length {seq_len} is too short (need ≥ 2)"
            )));
        }
        Ok(Packer { seq_len, buffer: VecDeque::new() })
    }

    /// Append one document (plus its boundary token); emit every row that
    /// fills up.
    pub fn push_doc(&mut self, ids: &[u32]) -> Vec<PackedRow> {
        self.buffer.extend(ids.iter().copied());
        self.buffer.push_back(Vocab::EOS);
        let mut rows = Vec::new();
        while self.buffer.len() >= self.seq_len {
            let ids: Vec<u32> = self.buffer.drain(..self.seq_len).collect();
            rows.push(PackedRow::full(ids));
        }
        rows
    }

    /// Pad and emit the buffered tail, if any.
    pub fn flush(&mut self) -> Option<PackedRow> {
        if self.buffer.is_empty() {
            return None;
        }
        let mut ids: Vec<u32> = self.buffer.drain(..).collect();
        let content = ids.len();
        ids.resize(self.seq_len, Vocab::PAD);
        Some(PackedRow::padded(ids, content))
    }

    /// Tokens carried over between rows — persisted by checkpoints so a
    /// resumed run continues mid-stream.
    pub fn buffered(&self) -> Vec<u32> {
        self.buffer.iter().copied().collect()
    }

    pub fn restore(&mut self, carried: Vec<u32>) {
        self.buffer = carried.into();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedRow {
    pub ids: Vec<u32>,
    pub pad: Vec<bool>,
    pub boundaries: Vec<usize>,
}

impl PackedRow {
    fn full(ids: Vec<u32>) -> PackedRow {
        let boundaries = eos_positions(&ids, ids.len());
        let pad = ids.iter().map(|&id| id == Vocab::PAD).collect();
        PackedRow { ids, pad, boundaries }
    }

    fn padded(ids: Vec<u32>, content: usize) -> PackedRow {
        let boundaries = eos_positions(&ids, content);
        let pad = (0..ids.len()).map(|i| i >= content).collect();
        PackedRow { ids, pad, boundaries }
    }
}

fn eos_positions(ids: &[u32], content: usize) -> Vec<usize> {
    ids[..content]
        .iter()
        .enumerate()
        .filter(|(_, &id)| id == Vocab::EOS)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn rows_to_batch(rows: Vec<PackedRow>, seq_len: usize) -> PackedBatch {
    let mut batch = PackedBatch {
        ids: Vec::with_capacity(rows.len() * seq_len),
        pad: Vec::with_capacity(rows.len() * seq_len),
        rows: rows.len(),
        seq_len,
        boundaries: Vec::with_capacity(rows.len()),
    };
    for row in rows {
        batch.ids.extend(row.ids);
        batch.pad.extend(row.pad);
        batch.boundaries.push(row.boundaries);
    }
    batch
}

/// Pack whole token-id documents into exact-length rows (final row padded).
pub fn pack_documents(
    docs: &[Vec<u32>],
    seq_len: usize,
    vocab_size: usize,
) -> Result<PackedBatch> {
    check_ids(docs, vocab_size)?;
    let mut packer = Packer::new(seq_len)?;
    let mut rows = Vec::new();
    for doc in docs {
        rows.extend(packer.push_doc(doc));
    }
    rows.extend(packer.flush());
    Ok(rows_to_batch(rows, seq_len))
}

/// One document per row, padded to a common width (no boundary token is
/// appended: the row itself is the document). Used for variable-length
/// decay-phase batches, where row content lengths stay within the phase's
/// maximum rather than being packed to it.
pub fn pad_rows(docs: &[Vec<u32>], vocab_size: usize, width: Option<usize>) -> Result<PackedBatch> {
    if docs.is_empty() {
        return Err(Error::EmptySelection("pad_rows: no documents"));
    }
    check_ids(docs, vocab_size)?;
    let longest = docs.iter().map(|d| d.len()).max().unwrap();
    if longest == 0 {
        return Err(Error::EmptySelection("pad_rows: empty document"));
    }
    let width = width.unwrap_or(longest);
    if width < longest {
        return Err(Error::invalid(format!(
            "row width {width} shorter than longest document ({longest} tokens)"
        )));
    }
    let rows = docs
        .iter()
        .map(|doc| {
            let mut ids = doc.clone();
            ids.resize(width, Vocab::PAD);
            PackedRow::padded(ids, doc.len())
        })
        .collect();
    Ok(rows_to_batch(rows, width))
}

fn check_ids(docs: &[Vec<u32>], vocab_size: usize) -> Result<()> {
    for doc in docs {
        if let Some(&bad) = doc.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocab of {vocab_size}"
            )));
        }
    }
    Ok(())
}

/// How crop lengths are distributed over the allowed range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropDistribution {
    Uniform,
    LogUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub distribution: CropDistribution,
}

impl Default for CropConfig {
    fn default() -> CropConfig {
        CropConfig { min_len: 12, max_len: 8192, distribution: CropDistribution::Uniform }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::Config(format!(
                "crop range [{}, {}] is invalid",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Take a contiguous random crop of `tokens`.
///
/// Target length is drawn from `{min_len ..= min(max_len, len)}` and the
/// start offset uniformly over valid positions; documents shorter than
/// `min_len` pass through whole.
pub fn random_crop(tokens: &[u32], config: &CropConfig, rng: &mut impl Rng) -> Result<Vec<u32>> {
    config.validate()?;
    if tokens.is_empty() {
        return Err(Error::EmptySelection("random_crop: empty document"));
    }
    if tokens.len() <= config.min_len {
        return Ok(tokens.to_vec());
    }
    let upper = config.max_len.min(tokens.len());
    let target = match config.distribution {
        CropDistribution::Uniform => rng.gen_range(config.min_len..=upper),
        CropDistribution::LogUniform => {
            let lo = (config.min_len as f64).ln();
            let hi = (upper as f64).ln();
            let t = rng.gen_range(lo..=hi).exp().round() as usize;
            t.clamp(config.min_len, upper)
        }
    };
    let start = rng.gen_range(0..=tokens.len() - target);
    Ok(tokens[start..start + target].to_vec())
}
