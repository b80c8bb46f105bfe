//! Self-check suites runnable from the command line. Each suite prints one
//! `[pass]`/`[FAIL]` line per check and reports whether everything held.

use encoderlab::datamix::{quality_passes, DocContent, DocKind, Document, MixSampler, MixSpec};
use encoderlab::encoder::{gqa_attention, AttentionParams, EncoderConfig, EncoderModel, LayerWeights};
use encoderlab::mlm::{apply_masking, MaskingPolicy, MaskingStrategy};
use encoderlab::tokenizer::Vocab;
use encoderlab::trainer::{wsd_lr, TrainPlan};
use encoderlab::{grad_check, Graph, Result, Tensor};

use rand::Rng;
use rand::SeedableRng;

pub const SUITES: [&str; 6] = ["grad", "rope", "gqa", "mask", "mix", "sched"];

/// Run one suite (or "all"); returns true when every check passed.
pub fn run_suite(name: &str) -> Result<bool> {
    let mut checks = Checks::default();
    match name {
        "grad" => grad_suite(&mut checks)?,
        "rope" => rope_suite(&mut checks)?,
        "gqa" => gqa_suite(&mut checks)?,
        "mask" => mask_suite(&mut checks)?,
        "mix" => mix_suite(&mut checks)?,
        "sched" => sched_suite(&mut checks)?,
        "all" => {
            for suite in SUITES {
                println!("-- {suite}");
                match suite {
                    "grad" => grad_suite(&mut checks)?,
                    "rope" => rope_suite(&mut checks)?,
                    "gqa" => gqa_suite(&mut checks)?,
                    "mask" => mask_suite(&mut checks)?,
                    "mix" => mix_suite(&mut checks)?,
                    "sched" => sched_suite(&mut checks)?,
                    _ => unreachable!(),
                }
            }
        }
        other => {
            return Err(encoderlab::Error::invalid(format!(
                "unknown verify suite \"{other}\" (expected one of {SUITES:?} or \"all\")"
            )))
        }
    }
    println!("{} checks, {} failed", checks.total, checks.failed);
    Ok(checks.failed == 0)
}

#[derive(Default)]
struct Checks {
    total: usize,
    failed: usize,
}

impl Checks {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.total += 1;
        if ok {
            println!("[pass] {name}  {detail}");
        } else {
            self.failed += 1;
            println!("[FAIL] {name}  {detail}");
        }
    }
}

// ---------------------------------------------------------------------------

/// Analytic gradients of a one-layer model against central differences.
fn grad_suite(checks: &mut Checks) -> Result<()> {
    let config = EncoderConfig {
        n_layers: 1,
        d_model: 16,
        d_ffn: 32,
        n_heads: 2,
        n_kv_heads: 1,
        vocab_size: 31,
        rope_theta: 10_000.0,
        rmsnorm_eps: 1e-5,
        max_seq_len: 64,
        init_std: 0.2,
        tie_mlm_head: false,
    };
    let model = EncoderModel::<f64>::init(config, 97)?;
    let params: Vec<Tensor<f64>> = model.named_params().into_iter().map(|(_, t)| t).collect();
    let ids = [2u32, 9, 17, 25, 3, 0];
    let pad = [false, false, false, false, false, true];
    let targets = [0usize, 11, 4, 0, 0, 0];
    let selected = [false, true, true, false, false, false];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let out = model.forward(g, &ids, &pad, ids.len(), 1e4)?;
            g.softmax_cross_entropy(&out.logits, &targets, &selected)
        },
        &params,
        1e-5,
    )?;
    checks.check(
        "grad: loss gradients match central differences",
        report.passed(1e-5),
        format!("{} entries, max rel err {:.2e}", report.checked, report.max_rel_err),
    );
    Ok(())
}

/// Rotary encoding identities.
fn rope_suite(checks: &mut Checks) -> Result<()> {
    let head_dim = 8;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let rand_row =
        |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..head_dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };

    // Position 0 leaves the vector untouched.
    let x_data = rand_row(&mut rng);
    let mut g = Graph::<f64>::no_grad();
    let x = Tensor::from_vec(&[1, head_dim], x_data.clone())?;
    let rotated = g.rope(&x, &[0], 10_000.0, head_dim)?;
    let max_dev = rotated
        .to_vec()
        .iter()
        .zip(&x_data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    checks.check(
        "rope: position 0 is the identity",
        max_dev <= 1e-12,
        format!("max deviation {max_dev:.2e}"),
    );

    // q·k after rotation depends only on the position offset.
    let q_data = rand_row(&mut rng);
    let k_data = rand_row(&mut rng);
    let delta = 3usize;
    let dot_at = |p: usize| -> Result<f64> {
        let mut g = Graph::<f64>::no_grad();
        let q = Tensor::from_vec(&[1, head_dim], q_data.clone())?;
        let k = Tensor::from_vec(&[1, head_dim], k_data.clone())?;
        let qr = g.rope(&q, &[p], 10_000.0, head_dim)?.to_vec();
        let kr = g.rope(&k, &[p + delta], 10_000.0, head_dim)?.to_vec();
        Ok(qr.iter().zip(&kr).map(|(a, b)| a * b).sum())
    };
    let reference = dot_at(0)?;
    let mut worst = 0.0f64;
    for p in [0usize, 5, 11] {
        worst = worst.max((dot_at(p)? - reference).abs());
    }
    checks.check(
        "rope: dot products invariant to absolute position",
        worst <= 1e-12,
        format!("offset {delta}, max spread {worst:.2e}"),
    );
    Ok(())
}

/// Grouped-query attention equals full attention with duplicated KV blocks.
fn gqa_suite(checks: &mut Checks) -> Result<()> {
    let d = 16;
    let head_dim = 4;
    let n_heads = 4;
    let n_kv = 2;
    let kvw = n_kv * head_dim;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
    let mut mat = |rows: usize, cols: usize| -> Result<Tensor<f64>> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Tensor::from_vec(&[rows, cols], data)
    };
    let wq = mat(d, d)?;
    let wk = mat(d, kvw)?;
    let wv = mat(d, kvw)?;
    let wo = mat(d, d)?;
    let ones = Tensor::from_vec(&[1, d], vec![1.0; d])?;
    let dummy_ffn = Tensor::from_vec(&[1, 1], vec![0.0])?;

    // Duplicate each KV head's column block once per query head in its group.
    let widen = |narrow: &Tensor<f64>| -> Result<Tensor<f64>> {
        let src = narrow.to_vec();
        let group = n_heads / n_kv;
        let mut wide = vec![0.0f64; d * d];
        for r in 0..d {
            for c in 0..d {
                let h = c / head_dim;
                let src_c = (h / group) * head_dim + c % head_dim;
                wide[r * d + c] = src[r * kvw + src_c];
            }
        }
        Tensor::from_vec(&[d, d], wide)
    };

    let gqa_layer = LayerWeights {
        attn_norm: ones.clone(),
        wq: wq.clone(),
        wk: wk.clone(),
        wv: wv.clone(),
        wo: wo.clone(),
        ffn_norm: ones.clone(),
        w1: dummy_ffn.clone(),
        w3: dummy_ffn.clone(),
        w2: dummy_ffn.clone(),
    };
    let mha_layer = LayerWeights {
        attn_norm: ones.clone(),
        wq,
        wk: widen(&wk)?,
        wv: widen(&wv)?,
        wo,
        ffn_norm: ones,
        w1: dummy_ffn.clone(),
        w3: dummy_ffn.clone(),
        w2: dummy_ffn,
    };

    let seq = 6;
    let x = {
        let data = (0..seq * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[seq, d], data)?
    };
    let positions: Vec<usize> = (0..seq).collect();
    let pad = [false, false, false, false, false, true];

    let run = |layer: &LayerWeights<f64>, kv_heads: usize| -> Result<Vec<f64>> {
        let mut g = Graph::<f64>::no_grad();
        let params = AttentionParams {
            n_heads,
            n_kv_heads: kv_heads,
            head_dim,
            rope_theta: 10_000.0,
        };
        Ok(gqa_attention(&mut g, &x, layer, &positions, &pad, &params)?.to_vec())
    };
    let grouped = run(&gqa_layer, n_kv)?;
    let full = run(&mha_layer, n_heads)?;
    let max_dev = grouped
        .iter()
        .zip(&full)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    checks.check(
        "gqa: grouped heads equal full attention on duplicated KV blocks",
        max_dev <= 1e-12,
        format!("{n_heads} heads sharing {n_kv} KV heads, max deviation {max_dev:.2e}"),
    );
    Ok(())
}

/// Masking counts, special-token immunity, and corruption split.
fn mask_suite(checks: &mut Checks) -> Result<()> {
    let vocab_size = 50_000usize;

    // Exact selection count on one sequence of 100 eligible tokens.
    let ids: Vec<u32> = (0..100).map(|i| 10 + (i as u32 % 500)).collect();
    let policy = MaskingPolicy { ratio: 0.5, strategy: MaskingStrategy::Bert801010, seed: 7 };
    let batch = apply_masking(&ids, ids.len(), vocab_size, &policy, 0)?;
    checks.check(
        "mask: ratio 0.5 selects exactly half of 100 eligible tokens",
        batch.selected_count() == 50 && batch.masked_fraction() == 0.5,
        format!("selected {}", batch.selected_count()),
    );

    // Special tokens are never selected, over many sequences.
    let mut special_hit = false;
    let mut sequences = 0u64;
    for first in (0..200u64).map(|i| i * 17) {
        let mut seq: Vec<u32> = (0..64).map(|i| 5 + (i as u32 * 3) % 900).collect();
        seq[0] = Vocab::BOS;
        seq[20] = Vocab::MASK;
        seq[40] = Vocab::PARALLEL_SEP;
        seq[62] = Vocab::EOS;
        seq[63] = Vocab::PAD;
        let b = apply_masking(&seq, seq.len(), vocab_size, &policy, first)?;
        for (i, &sel) in b.selected.iter().enumerate() {
            if sel && Vocab::is_special(seq[i]) {
                special_hit = true;
            }
        }
        sequences += 1;
    }
    checks.check(
        "mask: special tokens never selected",
        !special_hit,
        format!("{sequences} sequences scanned"),
    );

    // Corruption split over ~20k selections: 80% mask / 10% random / 10% keep.
    let rows = 400usize;
    let cols = 100usize;
    let big: Vec<u32> = (0..rows * cols).map(|i| 10 + (i as u32 % 30_000)).collect();
    let b = apply_masking(&big, cols, vocab_size, &policy, 1_000)?;
    let (mut masked, mut kept, mut random) = (0u64, 0u64, 0u64);
    for i in 0..big.len() {
        if !b.selected[i] {
            continue;
        }
        if b.corrupted[i] == Vocab::MASK {
            masked += 1;
        } else if b.corrupted[i] == b.original[i] {
            kept += 1;
        } else {
            random += 1;
        }
    }
    let n = (masked + kept + random) as f64;
    let fm = masked as f64 / n;
    let fr = random as f64 / n;
    let fk = kept as f64 / n;
    checks.check(
        "mask: corruption splits 80/10/10 within 1.5%",
        (fm - 0.8).abs() <= 0.015 && (fr - 0.1).abs() <= 0.015 && (fk - 0.1).abs() <= 0.015,
        format!("{n:.0} selections: mask {fm:.4}, random {fr:.4}, keep {fk:.4}"),
    );
    Ok(())
}

/// Mixture weights, empirical draw frequencies, pair encoding, quality gate.
fn mix_suite(checks: &mut Checks) -> Result<()> {
    for (spec, label) in [
        (MixSpec::pretrain_reference(), "pretraining"),
        (MixSpec::anneal_reference(), "annealing"),
    ] {
        let sum: f64 = spec.entries.iter().map(|e| e.weight).sum();
        checks.check(
            &format!("mix: {label} reference weights sum to 1"),
            (sum - 1.0).abs() <= 1e-9,
            format!("{} entries, sum {sum:.12}", spec.entries.len()),
        );
    }

    // Empirical draw frequency tracks each weight within 1% absolute.
    let spec = MixSpec::pretrain_reference();
    let pools: Vec<Vec<Document>> = spec
        .entries
        .iter()
        .map(|e| {
            vec![Document {
                content: DocContent::Text(format!("document for {}", e.name)),
                lang: e.lang.clone().unwrap_or_else(|| "en".into()),
                source: e.source.clone().unwrap_or_else(|| "pool".into()),
                quality: Some(4),
                kind: e.kind.unwrap_or(DocKind::Mono),
            }]
        })
        .collect();
    let mut sampler = MixSampler::new(spec.clone(), pools, 40, true)?;
    let draws = 20_000usize;
    let mut counts = vec![0u64; spec.entries.len()];
    for _ in 0..draws {
        let (entry, _) = sampler.draw()?;
        counts[entry] += 1;
    }
    let worst = spec
        .entries
        .iter()
        .zip(&counts)
        .map(|(e, &c)| (c as f64 / draws as f64 - e.weight).abs())
        .fold(0.0f64, f64::max);
    checks.check(
        "mix: 20k draw frequencies within 1% of the weights",
        worst <= 0.01,
        format!("worst absolute gap {worst:.4}"),
    );

    // A translation pair encodes with exactly one separator token.
    let corpus = ["the quick brown fox", "le renard brun rapide", "pack my box"];
    let vocab = Vocab::train(corpus, 262)?;
    let pair = Document {
        content: DocContent::Pair { src: "the quick fox".into(), tgt: "le renard rapide".into() },
        lang: "en-fr".into(),
        source: "parallel-corpus".into(),
        quality: Some(4),
        kind: DocKind::ParallelPair,
    };
    let ids = encoderlab::datamix::encode_document(&pair, &vocab)?;
    let separators = ids.iter().filter(|&&id| id == Vocab::PARALLEL_SEP).count();
    checks.check(
        "mix: translation pair carries exactly one separator",
        separators == 1,
        format!("{separators} separator(s) in {} tokens", ids.len()),
    );

    // Quality floor 3 admits buckets {3, 4} and nothing below.
    let gate = [
        quality_passes(Some(1), 3, true),
        quality_passes(Some(2), 3, true),
        quality_passes(Some(3), 3, true),
        quality_passes(Some(4), 3, true),
    ];
    let unlabeled = (quality_passes(None, 3, true), quality_passes(None, 3, false));
    checks.check(
        "mix: quality floor 3 admits exactly buckets 3 and 4",
        gate == [false, false, true, true] && unlabeled == (true, false),
        format!("buckets 1..=4 -> {gate:?}, unlabeled (pass,strict) -> {unlabeled:?}"),
    );
    Ok(())
}

/// Warmup–stable–decay learning-rate shape at exact anchor points.
fn sched_suite(checks: &mut Checks) -> Result<()> {
    let plan = TrainPlan::reference(4_000, 101);
    let anchors: [(u64, f64, &str); 7] = [
        (0, 0.0, "warmup start"),
        (1_000, 5e-5, "warmup midpoint"),
        (2_000, 1e-4, "stable start"),
        (3_777, 1e-4, "stable interior"),
        (4_000, 1e-4, "decay start"),
        (4_050, 5e-5, "decay midpoint"),
        (4_100, 0.0, "decay end"),
    ];
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for (step, expected, _) in anchors {
        let lr = wsd_lr(step, &plan)?;
        worst = worst.max((lr - expected).abs());
        detail.push_str(&format!("lr({step})={lr:.3e} "));
    }
    checks.check(
        "sched: warmup/stable/decay anchors exact",
        worst <= 1e-12,
        format!("max deviation {worst:.2e}"),
    );

    // The stable segment is flat at exactly the base rate everywhere.
    let flat = (2_000..4_000).all(|s| wsd_lr(s, &plan).map(|lr| lr == plan.base_lr).unwrap_or(false));
    checks.check(
        "sched: stable segment exactly at the base rate",
        flat,
        "steps 2000..4000".into(),
    );
    Ok(())
}
