//! Metrics and the ranking methodology: nDCG@10, Spearman rank correlation,
//! entity-level micro F1, paired-bootstrap significance clustering at a
//! configurable confidence, the normalized Borda count across languages,
//! and analysis utilities (length quantiles, fertility bins).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

// ---------------------------------------------------------------------------
// Retrieval: nDCG@k
// ---------------------------------------------------------------------------

/// Normalized discounted cumulative gain over the first `k` ranked ids.
///
/// `DCG = Σ_{i≤k} gain_i / log2(i+1)` with 1-based rank `i`; the ideal DCG
/// ranks all positive-gain documents best-first. Returns 0 when no document
/// has positive gain. Binary relevance is gain 1.0; graded gains work the
/// same way.
pub fn ndcg_at_k(ranked: &[u64], relevance: &HashMap<u64, f64>, k: usize) -> f64 {
    let discount = |i: usize| ((i + 2) as f64).log2(); // rank i+1 → log2(i+2)
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| relevance.get(id).copied().unwrap_or(0.0) / discount(i))
        .sum();
    let mut gains: Vec<f64> = relevance.values().copied().filter(|&g| g > 0.0).collect();
    gains.sort_by(|a, b| b.partial_cmp(a).expect("finite gains"));
    let ideal: f64 = gains.iter().take(k).enumerate().map(|(i, g)| g / discount(i)).sum();
    if ideal <= 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

// ---------------------------------------------------------------------------
// Regression: Spearman rank correlation
// ---------------------------------------------------------------------------

/// Ranks with ties averaged: `[10, 20, 20, 30]` → `[1, 2.5, 2.5, 4]`.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &pos in &idx[i..=j] {
            ranks[pos] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::invalid(
            "correlation is undefined for a constant score vector",
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "score vectors of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 examples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score vector contains a non-finite value".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

// ---------------------------------------------------------------------------
// Token classification: entity-level micro F1
// ---------------------------------------------------------------------------

/// `(span_start, span_end, label)`; a prediction counts only on an exact
/// span-and-label match.
pub type Entity = (usize, usize, usize);

/// Micro-averaged entity F1 over the corpus: precision and recall are
/// computed from pooled true-positive / spurious / missed counts. Both
/// sides empty everywhere → 1.0 by convention.
pub fn f1_entity(predicted: &[Vec<Entity>], gold: &[Vec<Entity>]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predicted examples against {} gold examples",
            predicted.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut missed) = (0usize, 0usize, 0usize);
    for (p, g) in predicted.iter().zip(gold) {
        let ps: BTreeSet<Entity> = p.iter().copied().collect();
        let gs: BTreeSet<Entity> = g.iter().copied().collect();
        tp += ps.intersection(&gs).count();
        fp += ps.difference(&gs).count();
        missed += gs.difference(&ps).count();
    }
    if tp + fp + missed == 0 {
        return Ok(1.0);
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + missed) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

// ---------------------------------------------------------------------------
// Significance clustering
// ---------------------------------------------------------------------------

/// One-sided paired bootstrap: the fraction of resamples (drawn by example
/// index, so the pairing is preserved) in which `a`'s mean fails to exceed
/// `b`'s. Small values mean `a` is significantly above `b`.
///
/// Resample `r` draws from its own stream derived from `(seed, r)`, so the
/// estimate is deterministic and each resample is independently
/// reproducible.
pub fn paired_bootstrap_p(a: &[f64], b: &[f64], resamples: u64, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "paired scores of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("paired test needs at least 2 examples"));
    }
    if resamples == 0 {
        return Err(Error::invalid("at least 1 resample required"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score vector contains a non-finite value".into()));
    }
    let deltas: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = deltas.len();
    let mut fails = 0u64;
    for r in 0..resamples {
        let mut rng = stream_rng(seed, "bootstrap", r);
        let sum: f64 = (0..n).map(|_| deltas[rng.gen_range(0..n)]).sum();
        if sum <= 0.0 {
            fails += 1;
        }
    }
    Ok(fails as f64 / resamples as f64)
}

/// Greedy top-down significance clustering for one language.
///
/// Systems are ordered by mean score; the best system opens cluster 1. Each
/// following system is tested against the leading (first) system of the
/// current cluster with a one-sided paired bootstrap; when the gap is
/// significant at `confidence`, a new cluster opens with that system as its
/// leader. Returns 1-based, contiguous cluster indices aligned with
/// `table.systems`.
pub fn significance_clusters(
    table: &ScoreTable,
    language: &str,
    confidence: f64,
    resamples: u64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&confidence) || confidence <= 0.0 {
        return Err(Error::invalid(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let lang = table
        .languages
        .iter()
        .position(|l| l == language)
        .ok_or_else(|| Error::invalid(format!("unknown language {language:?}")))?;
    let n_examples = table.scores[0][lang].len();
    if n_examples < 2 {
        return Err(Error::invalid(
            "significance clustering needs at least 2 examples",
        ));
    }

    let means: Vec<f64> = (0..table.systems.len())
        .map(|s| table.scores[s][lang].iter().sum::<f64>() / n_examples as f64)
        .collect();
    let mut order: Vec<usize> = (0..table.systems.len()).collect();
    order.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).expect("finite means"));

    let alpha = 1.0 - confidence;
    let mut clusters = vec![0usize; table.systems.len()];
    let mut cluster = 1usize;
    let mut leader = order[0];
    clusters[leader] = 1;
    for (comparison, &sys) in order.iter().enumerate().skip(1) {
        let p = paired_bootstrap_p(
            &table.scores[leader][lang],
            &table.scores[sys][lang],
            resamples,
            crate::rng::derive_seed(seed, "cluster-test", (lang as u64) << 32 | comparison as u64),
        )?;
        if p < alpha {
            cluster += 1;
            leader = sys;
        }
        clusters[sys] = cluster;
    }
    Ok(clusters)
}

// ---------------------------------------------------------------------------
// Normalized Borda count
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BordaRanking {
    /// Mean cluster index per system (lower is better).
    pub values: Vec<f64>,
    /// System indices sorted ascending by value; ties keep input order.
    pub ordering: Vec<usize>,
    /// Groups of 2+ systems sharing a value.
    pub tied_groups: Vec<Vec<usize>>,
    /// The system that is the sole member of cluster 1 in a strict majority
    /// of languages, when one exists.
    pub clear_winner: Option<usize>,
}

/// Normalized Borda count over per-language clusterings.
///
/// `clusters[language][system]` holds 1-based cluster indices; the value of
/// a system is its mean cluster index across languages.
pub fn borda_rank(clusters: &[Vec<usize>]) -> Result<BordaRanking> {
    if clusters.is_empty() || clusters[0].is_empty() {
        return Err(Error::EmptySelection("borda over no languages or no systems"));
    }
    let n_systems = clusters[0].len();
    for (l, row) in clusters.iter().enumerate() {
        if row.len() != n_systems {
            return Err(Error::invalid(format!(
                "ragged clusters: language {l} ranks {} systems, expected {n_systems}",
                row.len()
            )));
        }
        if row.iter().any(|&c| c == 0) {
            return Err(Error::invalid("cluster indices are 1-based"));
        }
    }
    let n_langs = clusters.len() as f64;
    let values: Vec<f64> = (0..n_systems)
        .map(|s| clusters.iter().map(|row| row[s] as f64).sum::<f64>() / n_langs)
        .collect();
    let mut ordering: Vec<usize> = (0..n_systems).collect();
    ordering.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let mut tied_groups = Vec::new();
    let mut i = 0;
    while i < ordering.len() {
        let mut j = i;
        while j + 1 < ordering.len() && values[ordering[j + 1]] == values[ordering[i]] {
            j += 1;
        }
        if j > i {
            tied_groups.push(ordering[i..=j].to_vec());
        }
        i = j + 1;
    }

    let clear_winner = (0..n_systems).find(|&s| {
        let sole_top = clusters
            .iter()
            .filter(|row| row[s] == 1 && row.iter().filter(|&&c| c == 1).count() == 1)
            .count();
        2 * sole_top > clusters.len()
    });

    Ok(BordaRanking { values, ordering, tied_groups, clear_winner })
}

// ---------------------------------------------------------------------------
// Length quantiles
// ---------------------------------------------------------------------------

/// Assign each example to one of `q` equal-mass buckets (1-based) by sorted
/// length. All examples sharing a length land in the same bucket — the
/// lowest bucket any of them would occupy.
pub fn quantile_buckets(lengths: &[u64], q: usize) -> Result<Vec<usize>> {
    if q < 2 {
        return Err(Error::invalid("need at least 2 buckets"));
    }
    let n = lengths.len();
    if n < q {
        return Err(Error::invalid(format!("{n} examples into {q} buckets")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| lengths[i]);
    let mut buckets = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && lengths[idx[j + 1]] == lengths[idx[i]] {
            j += 1;
        }
        let bucket = i * q / n + 1; // the run's first sorted position decides
        for &pos in &idx[i..=j] {
            buckets[pos] = bucket;
        }
        i = j + 1;
    }
    Ok(buckets)
}

/// Mean metric per bucket `1..=q`; buckets that received no examples (ties
/// collapse runs downward) are `None`.
pub fn bucket_means(buckets: &[usize], metric: &[f64], q: usize) -> Result<Vec<Option<f64>>> {
    if buckets.len() != metric.len() {
        return Err(Error::invalid(format!(
            "{} bucket labels against {} metric values",
            buckets.len(),
            metric.len()
        )));
    }
    let mut sums = vec![0.0f64; q];
    let mut counts = vec![0usize; q];
    for (&b, &m) in buckets.iter().zip(metric) {
        if b == 0 || b > q {
            return Err(Error::invalid(format!("bucket {b} outside 1..={q}")));
        }
        sums[b - 1] += m;
        counts[b - 1] += 1;
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect())
}

// ---------------------------------------------------------------------------
// Fertility bins
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FertilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    /// `mean_a − mean_b`; absent (not zero) when the bin is empty.
    pub difference: Option<f64>,
}

/// Group examples by fertility (tokens per word) into `[edges[i], edges[i+1])`
/// bins — the last bin includes its right edge — and report each system's
/// mean metric plus the per-bin difference.
pub fn fertility_bins(
    fertility: &[f64],
    metric_a: &[f64],
    metric_b: &[f64],
    edges: &[f64],
) -> Result<Vec<FertilityBin>> {
    if fertility.len() != metric_a.len() || fertility.len() != metric_b.len() {
        return Err(Error::invalid(format!(
            "misaligned vectors: {} fertilities, {} and {} metric values",
            fertility.len(),
            metric_a.len(),
            metric_b.len()
        )));
    }
    if edges.len() < 2 {
        return Err(Error::invalid("need at least 2 bin edges"));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid("bin edges must be finite and strictly increasing"));
    }
    let n_bins = edges.len() - 1;
    let mut count = vec![0usize; n_bins];
    let mut sum_a = vec![0.0f64; n_bins];
    let mut sum_b = vec![0.0f64; n_bins];
    for ((&f, &a), &b) in fertility.iter().zip(metric_a).zip(metric_b) {
        let bin = (0..n_bins).find(|&i| {
            let last = i == n_bins - 1;
            f >= edges[i] && (f < edges[i + 1] || (last && f == edges[i + 1]))
        });
        if let Some(i) = bin {
            count[i] += 1;
            sum_a[i] += a;
            sum_b[i] += b;
        }
    }
    Ok((0..n_bins)
        .map(|i| {
            let occupied = count[i] > 0;
            let mean_a = occupied.then(|| sum_a[i] / count[i] as f64);
            let mean_b = occupied.then(|| sum_b[i] / count[i] as f64);
            FertilityBin {
                lo: edges[i],
                hi: edges[i + 1],
                count: count[i],
                mean_a,
                mean_b,
                difference: mean_a.zip(mean_b).map(|(a, b)| a - b),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Score tables and the ranking report
// ---------------------------------------------------------------------------

/// Paired per-example scores for every (system, language) cell.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub systems: Vec<String>,
    pub languages: Vec<String>,
    /// `scores[system][language]` — aligned example-for-example across
    /// systems within a language.
    scores: Vec<Vec<Vec<f64>>>,
}

impl ScoreTable {
    /// Build from (system, language, example_id, score) rows. The table must
    /// come out rectangular: every system scores every language, on exactly
    /// the same example ids.
    pub fn from_rows(rows: &[(String, String, String, f64)]) -> Result<ScoreTable> {
        if rows.is_empty() {
            return Err(Error::EmptySelection("score table from no rows"));
        }
        let mut systems: Vec<String> = Vec::new();
        let mut languages: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), BTreeMap<String, f64>> = BTreeMap::new();
        for (system, language, example, score) in rows {
            if !score.is_finite() {
                return Err(Error::NonFinite(format!(
                    "score for {system}/{language}/{example}"
                )));
            }
            let s = position_or_insert(&mut systems, system);
            let l = position_or_insert(&mut languages, language);
            if cells.entry((s, l)).or_default().insert(example.clone(), *score).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate score for {system}/{language}/{example}"
                )));
            }
        }
        // Rectangularity and pairing.
        let mut scores = vec![vec![Vec::new(); languages.len()]; systems.len()];
        for (l, language) in languages.iter().enumerate() {
            let mut reference: Option<Vec<&String>> = None;
            for (s, system) in systems.iter().enumerate() {
                let cell = cells.get(&(s, l)).ok_or_else(|| {
                    Error::invalid(format!("system {system:?} has no scores for {language:?}"))
                })?;
                let ids: Vec<&String> = cell.keys().collect();
                match &reference {
                    None => reference = Some(ids),
                    Some(want) => {
                        if *want != ids {
                            return Err(Error::invalid(format!(
                                "example ids for {language:?} differ between {:?} and {system:?}",
                                systems[0]
                            )));
                        }
                    }
                }
                scores[s][l] = cell.values().copied().collect();
            }
        }
        Ok(ScoreTable { systems, languages, scores })
    }

    pub fn scores(&self, system: &str, language: &str) -> Option<&[f64]> {
        let s = self.systems.iter().position(|x| x == system)?;
        let l = self.languages.iter().position(|x| x == language)?;
        Some(&self.scores[s][l])
    }

    pub fn mean(&self, system: &str, language: &str) -> Option<f64> {
        let v = self.scores(system, language)?;
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn position_or_insert(list: &mut Vec<String>, item: &str) -> usize {
    match list.iter().position(|x| x == item) {
        Some(i) => i,
        None => {
            list.push(item.to_string());
            list.len() - 1
        }
    }
}

#[derive(Deserialize)]
struct RawScore {
    system: String,
    language: String,
    example: String,
    score: Option<f64>,
    ranking: Option<Vec<u64>>,
    relevant: Option<Vec<u64>>,
}

/// Read line-delimited score records. Each record carries either a direct
/// `score` or a retrieval `ranking` plus the `relevant` ids, which is folded
/// to nDCG@10 with binary relevance.
pub fn load_score_rows(path: &Path) -> Result<Vec<(String, String, String, f64)>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let raw: RawScore = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let score = match (raw.score, raw.ranking, raw.relevant) {
            (Some(s), None, None) => s,
            (None, Some(ranking), Some(relevant)) => {
                let gains: HashMap<u64, f64> = relevant.into_iter().map(|d| (d, 1.0)).collect();
                ndcg_at_k(&ranking, &gains, 10)
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "record needs either \"score\" or \"ranking\"+\"relevant\"".into(),
                })
            }
        };
        rows.push((raw.system, raw.language, raw.example, score));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankingReport {
    pub systems: Vec<String>,
    pub languages: Vec<String>,
    /// `clusters[language][system]`, 1-based.
    pub clusters: Vec<Vec<usize>>,
    /// Normalized Borda value per system (mean cluster index).
    pub borda: Vec<f64>,
    /// System indices best-first.
    pub ordering: Vec<usize>,
    pub tied_groups: Vec<Vec<usize>>,
    pub clear_winner: Option<String>,
    pub confidence: f64,
    pub resamples: u64,
    pub seed: u64,
}

/// Cluster every language, then rank systems by normalized Borda count.
pub fn rank_systems(
    table: &ScoreTable,
    confidence: f64,
    resamples: u64,
    seed: u64,
) -> Result<RankingReport> {
    let clusters: Vec<Vec<usize>> = table
        .languages
        .iter()
        .map(|lang| significance_clusters(table, lang, confidence, resamples, seed))
        .collect::<Result<_>>()?;
    let borda = borda_rank(&clusters)?;
    Ok(RankingReport {
        systems: table.systems.clone(),
        languages: table.languages.clone(),
        clusters,
        borda: borda.values,
        ordering: borda.ordering,
        tied_groups: borda.tied_groups,
        clear_winner: borda.clear_winner.map(|s| table.systems[s].clone()),
        confidence,
        resamples,
        seed,
    })
}

impl RankingReport {
    /// One line per (language, system) cluster plus one Borda line per
    /// system, each a self-describing JSON record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (l, lang) in self.languages.iter().enumerate() {
            for (s, sys) in self.systems.iter().enumerate() {
                out.push_str(
                    &serde_json::json!({
                        "record": "cluster",
                        "language": lang,
                        "system": sys,
                        "cluster": self.clusters[l][s],
                    })
                    .to_string(),
                );
                out.push('\n');
            }
        }
        for &s in &self.ordering {
            out.push_str(
                &serde_json::json!({
                    "record": "borda",
                    "system": self.systems[s],
                    "value": self.borda[s],
                })
                .to_string(),
            );
            out.push('\n');
        }
        out
    }

    /// Fixed-width table, best system first: Borda value then the
    /// per-language cluster indices.
    pub fn render_table(&self) -> String {
        let name_width = self
            .systems
            .iter()
            .map(|s| s.len())
            .chain(["system".len()])
            .max()
            .unwrap();
        let mut out = format!("{:name_width$}  {:>6}", "system", "borda");
        for lang in &self.languages {
            out.push_str(&format!("  {lang:>6}"));
        }
        out.push('\n');
        for &s in &self.ordering {
            out.push_str(&format!("{:name_width$}  {:>6.2}", self.systems[s], self.borda[s]));
            for l in 0..self.languages.len() {
                out.push_str(&format!("  {:>6}", self.clusters[l][s]));
            }
            out.push('\n');
        }
        out
    }
}
