//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria that need external data read it from these variables and fall
//! back to deterministic synthetic stand-ins otherwise:
//!
//! * `NER_GERMEVAL_TRAIN`, `NER_GERMEVAL_DEV`: GermEval 2014 TSV files
//! * `NER_EMBEDDINGS`: word vectors (text, `FTXT1` or fastText `.bin`)
//! * `NER_FASTTEXT_MODEL`: a fastText `.bin` model
//! * `NER_CONLL_TRAIN`: CoNLL 2003 German training file (`NER_CONLL_DEV`,
//!   `NER_CONLL_TEST` and `NER_GERMEVAL_TEST` are used by the full run)
//! * `NER_FULL_REPRO=1`: also run the full-scale reproduction (hours to days)
#![allow(clippy::type_complexity)]

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, ensure, Context, Result};
use ner_core::autodiff::{check_gradient, GradCheckReport, Graph, NodeId, Tensor};
use ner_core::corpus::{iob_to_bio, parse_conll03, parse_germeval, CharVocab, LabelSchema, Sentence};
use ner_core::crf::{batch_nll, log_partition, viterbi_decode, CrfNodes, CrfParams};
use ner_core::embeddings::{read_fasttext_bin, EmbeddingStore};
use ner_core::evaluation::{
    evaluate_labels, extract_chunks_with, germeval_combined, germeval_combined_with, ChunkMode, Level, Pooling,
    Scores,
};
use ner_core::layers::{
    bilstm_sequence, conv1d_globalmaxpool, dense, embed_lookup, lstm_cell_step, Conv1dNodes, Conv1dParams,
    EmbeddingTable, LstmNodes, LstmParams, Mode, RecurrentDropout,
};
use ner_core::model::{build_model, CharVariant, ModelConfig, NerModel};
use ner_core::synthetic::{generate, SyntheticSpec};
use ner_core::training::{evaluate_model, train_epoch, train_two_stage, NadamState, TrainConfig, TrainData};
use ner_service::registry::ModelRegistry;
use ner_service::train_config::{load_embeddings, load_split, CorpusFormat, LabelLevel};
use ner_service::{router, NerResponse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STAND_IN: &str = "[synthetic stand-in]";
const REAL: &str = "[real data]";

fn env_path(name: &str) -> Option<PathBuf> {
    std::env::var_os(name).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn main() {
    let criteria: Vec<(&str, fn() -> Result<String>)> = vec![
        ("C1 CRF oracle equivalence", c1_crf_oracle),
        ("C2 gradient suite", c2_gradients),
        ("C3 evaluator fidelity", c3_evaluator),
        ("C4 overfit sanity", c4_overfit),
        ("C5 reduced-scale ablation direction", c5_ablation),
        ("C6 fastText OOV inference", c6_fasttext_oov),
        ("C7 schema conversion", c7_schema_conversion),
        ("C8 service round-trip", c8_service),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(anyhow!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name} ({secs:.1}s): {detail}"),
            Err(e) => {
                failed += 1;
                println!("[FAIL] {name} ({secs:.1}s): {e:#}");
            }
        }
    }
    if std::env::var("NER_FULL_REPRO").as_deref() == Ok("1") {
        let start = Instant::now();
        match c9_full_scale() {
            Ok(d) => println!("[PASS] C9 full-scale reproduction ({:.0}s): {d}", start.elapsed().as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("[FAIL] C9 full-scale reproduction: {e:#}");
            }
        }
    } else {
        println!("[SKIP] C9 full-scale reproduction: long-running benchmark, set NER_FULL_REPRO=1 with GermEval, CoNLL and fastText paths");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- C1

/// Enumerates every path; the best path is the maximal one that is
/// smallest when compared from the last position backwards.
fn enumerate(params: &CrfParams, emissions: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let t_len = emissions.len();
    let l = params.num_labels();
    let trans = |i: usize, j: usize| params.transitions.get2(i, j);
    let mut scores = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut path = vec![0usize; t_len];
    loop {
        let mut s = params.start.data()[path[0]] + params.end.data()[path[t_len - 1]];
        for t in 0..t_len {
            s += emissions[t][path[t]];
            if t > 0 {
                s += trans(path[t - 1], path[t]);
            }
        }
        scores.push(s);
        let better = match &best {
            None => true,
            Some((b, bp)) => s > *b || (s == *b && path.iter().rev().lt(bp.iter().rev())),
        };
        if better {
            best = Some((s, path.clone()));
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == t_len {
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
                return (z, best.unwrap().1);
            }
            path[i] += 1;
            if path[i] < l {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn crf_instance(rng: &mut ChaCha8Rng, draw: &mut dyn FnMut(&mut ChaCha8Rng) -> f64) -> (CrfParams, Vec<Vec<f64>>) {
    let t_len = rng.gen_range(1..=6);
    let l = rng.gen_range(1..=5);
    let mut p = CrfParams::zeros(l);
    for t in [&mut p.transitions, &mut p.start, &mut p.end] {
        for x in t.data_mut() {
            *x = draw(rng);
        }
    }
    let e = (0..t_len).map(|_| (0..l).map(|_| draw(rng)).collect()).collect();
    (p, e)
}

fn c1_crf_oracle() -> Result<String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let (p, e) = crf_instance(&mut rng, &mut |r| r.gen_range(-2.0..2.0));
        let em = Tensor::from_rows(&e)?;
        let (z, path) = enumerate(&p, &e);
        let dz = (log_partition(&p, &em)? - z).abs();
        worst = worst.max(dz);
        ensure!(dz <= 1e-9, "instance {i}: |logZ - brute force| = {dz:e}");
        let (vpath, _) = viterbi_decode(&p, &em)?;
        ensure!(vpath == path, "instance {i}: viterbi {vpath:?} != brute force {path:?}");
    }
    // Integer scores make ties common and exercise the lowest-index rule.
    let mut ties = 0;
    for i in 0..200 {
        let (p, e) = crf_instance(&mut rng, &mut |r| r.gen_range(-1..=1) as f64);
        let em = Tensor::from_rows(&e)?;
        let (_, path) = enumerate(&p, &e);
        let (vpath, _) = viterbi_decode(&p, &em)?;
        ensure!(vpath == path, "tie instance {i}: viterbi {vpath:?} != brute force {path:?}");
        ties += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!(
        "200/200 U(-2,2) instances, max |dlogZ| {worst:.1e} (<= 1e-9), paths equal; {ties} integer-score tie instances equal; {secs:.2}s (< 10s)"
    ))
}

// ---------------------------------------------------------------- C2

const GC_EPS: f64 = 1e-5;
const GC_SAMPLES: usize = 60;
const GC_MAX_REL: f64 = 1e-4;
const GC_MIN_CHECKED: usize = 50;

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    t
}

/// Reduces `node` to a scalar with fixed random weights so every output
/// entry contributes a distinct gradient.
fn project(g: &mut Graph, node: NodeId, seed: u64) -> ner_core::Result<NodeId> {
    let shape = g.shape(node).to_vec();
    let w = g.constant(uniform(&shape, &mut ChaCha8Rng::seed_from_u64(seed)));
    let prod = g.mul(node, w)?;
    Ok(g.sum(prod))
}

fn lstm_nodes(ids: &[NodeId], cells: usize) -> LstmNodes {
    LstmNodes {
        w_input: ids[0],
        w_recurrent: ids[1],
        bias: ids[2],
        cells,
    }
}

fn gc_layers(rng: &mut ChaCha8Rng) -> Result<Vec<(String, GradCheckReport)>> {
    let (b, input, cells, t_len, labels) = (2, 8 + 7 + 4, 4, 6, 5);
    let mut out = Vec::new();
    type LossFn<'a> = dyn FnMut(&mut Graph, &[NodeId]) -> ner_core::Result<NodeId> + 'a;
    let mut run = |name: &str, params: &mut Vec<Tensor>, f: &mut LossFn| {
        let r = check_gradient(params, f, GC_EPS, GC_SAMPLES, 17)?;
        out.push((name.to_string(), r));
        Ok::<(), anyhow::Error>(())
    };

    // LSTM cell step with a recurrent dropout mask.
    let lstm = LstmParams::new(input, cells, rng);
    let mut params: Vec<Tensor> = lstm.tensors().iter().map(|t| uniform(t.shape(), rng)).collect();
    params.extend([uniform(&[b, input], rng), uniform(&[b, cells], rng), uniform(&[b, cells], rng)]);
    let mask = Tensor::from_rows(&[vec![2.0, 0.0, 2.0, 2.0], vec![0.0, 2.0, 2.0, 0.0]])?;
    run("lstm_cell_step", &mut params, &mut |g, ids| {
        let p = lstm_nodes(ids, cells);
        let m = g.constant(mask.clone());
        let (h, c) = lstm_cell_step(g, &p, ids[3], ids[4], ids[5], Some(m))?;
        let both = g.concat(&[h, c])?;
        project(g, both, 1)
    })?;

    // Masked BiLSTM over T steps, rows of length 6 and 4.
    let fwd = LstmParams::new(input, cells, rng);
    let bwd = LstmParams::new(input, cells, rng);
    let mut params: Vec<Tensor> = fwd.tensors().iter().chain(bwd.tensors().iter()).map(|t| uniform(t.shape(), rng)).collect();
    params.extend((0..t_len).map(|_| uniform(&[b, input], rng)));
    let mask: Vec<Vec<bool>> = (0..t_len).map(|t| vec![true, t < 4]).collect();
    run("bilstm_sequence", &mut params, &mut |g, ids| {
        let f = lstm_nodes(&ids[0..3], cells);
        let bw = lstm_nodes(&ids[3..6], cells);
        let out = bilstm_sequence(g, &f, &bw, &ids[6..], &mask, RecurrentDropout::default())?;
        let mut all = out.outputs.clone();
        all.extend([out.final_forward, out.final_backward]);
        let cat = g.concat(&all)?;
        project(g, cat, 2)
    })?;

    // Char CNN: kernel 3 over 8 char positions, one row with masked windows.
    let conv = Conv1dParams::new(3, 4, 4, rng);
    let mut params = vec![uniform(&[3 * 4, 4], rng), uniform(conv.bias.shape(), rng)];
    params.extend((0..8).map(|_| uniform(&[b, 4], rng)));
    let window_ok: Vec<Vec<bool>> = (0..6).map(|w| vec![true, w <= 2]).collect();
    run("conv1d_globalmaxpool", &mut params, &mut |g, ids| {
        let p = Conv1dNodes {
            kernels: ids[0],
            bias: ids[1],
            kernel_size: 3,
        };
        let pooled = conv1d_globalmaxpool(g, &p, &ids[2..], Some(&window_ok))?;
        project(g, pooled, 3)
    })?;

    // Dense emission layer.
    let mut params = vec![uniform(&[2 * cells, labels], rng), uniform(&[labels], rng), uniform(&[t_len, 2 * cells], rng)];
    run("dense", &mut params, &mut |g, ids| {
        let y = dense(g, ids[0], ids[1], ids[2])?;
        project(g, y, 4)
    })?;

    // Char embedding lookup, including the padding index.
    let table = EmbeddingTable::new(10, 4, rng);
    let mut params = vec![uniform(table.rows.shape(), rng)];
    run("embed_lookup", &mut params, &mut |g, ids| {
        let rows = embed_lookup(g, ids[0], &[3, 0, 9, 3, 1, 7])?;
        project(g, rows, 5)
    })?;

    // CRF batch negative log-likelihood on [T, B, L] emissions.
    let mut params = vec![
        uniform(&[t_len, b, labels], rng),
        uniform(&[labels, labels], rng),
        uniform(&[labels], rng),
        uniform(&[labels], rng),
    ];
    let lengths = [6, 3];
    let gold: Vec<Vec<usize>> = lengths.iter().map(|&n| (0..n).map(|_| rng.gen_range(0..labels)).collect()).collect();
    run("crf batch_nll", &mut params, &mut |g, ids| {
        let crf = CrfNodes {
            transitions: ids[1],
            start: ids[2],
            end: ids[3],
        };
        batch_nll(g, crf, ids[0], &lengths, &gold)
    })?;
    Ok(out)
}

fn toy_store() -> EmbeddingStore {
    let mut s = EmbeddingStore::new(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for w in ["Anna", "wohnt", "seit", "in", "Berlin", ".", "Die", "Bank"] {
        let v: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.insert(w, &v).unwrap();
    }
    s
}

fn gc_end_to_end() -> Result<Vec<(String, GradCheckReport)>> {
    let store = toy_store();
    let sentences: Vec<Vec<String>> = ["Anna wohnt seit 2018 in Berlin", "Die Kölner Bank", "Anna"]
        .iter()
        .map(|s| s.split(' ').map(String::from).collect())
        .collect();
    let refs: Vec<&[String]> = sentences.iter().map(|s| s.as_slice()).collect();
    let schema = LabelSchema::new("toy", ["PER", "LOC"])?;
    let mut out = Vec::new();
    let modes = CharVariant::ALL
        .into_iter()
        .map(|v| (v, Mode::Eval))
        .chain([(CharVariant::Bilstm2, Mode::Train), (CharVariant::Cnn3, Mode::Train)]);
    for (variant, mode) in modes {
        let mut cfg = ModelConfig::new(variant, schema.clone());
        cfg.word_dim = 8;
        cfg.casing_dim = 7;
        cfg.char_emb_dim = 4;
        cfg.char_cnn_filters = 4;
        cfg.char_lstm_cells = 4;
        cfg.token_lstm_cells = 4;
        let vocab = CharVocab::from_chars(sentences.iter().flatten().flat_map(|t| t.chars()));
        let mut model = build_model(cfg, vocab, 3)?;
        ensure!(model.config.label_schema.len() == 5, "toy schema must have 5 labels");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in model.tensors_mut() {
            for x in t.data_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        let batch = model.features(&store, &refs)?;
        ensure!(batch.max_len == 6, "T must be 6");
        let gold: Vec<Vec<usize>> = sentences.iter().map(|s| (0..s.len()).map(|i| (i * 3 + 1) % 5).collect()).collect();
        let mut params = model.bound_tensors();
        let report = check_gradient(
            &mut params,
            |g, ids| {
                let nodes = model.nodes_from_ids(ids)?;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                model.loss_graph(g, &nodes, &batch, &gold, mode, &mut rng)
            },
            GC_EPS,
            GC_SAMPLES,
            5,
        )?;
        out.push((format!("end-to-end {} ({mode:?})", variant.as_str()), report));
    }
    Ok(out)
}

fn c2_gradients() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut reports = gc_layers(&mut rng)?;
    reports.extend(gc_end_to_end()?);
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    let (mut checked, mut floored, mut skipped) = (0, 0, 0);
    for (name, r) in &reports {
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        floored += r.floored;
        skipped += r.skipped;
        if r.max_rel_error > GC_MAX_REL || r.checked < GC_MIN_CHECKED {
            bad.push(format!("{name}: {r:?}"));
        }
    }
    ensure!(bad.is_empty(), "{}", bad.join("; "));
    Ok(format!(
        "{} checks (6 layers, {} end-to-end), max rel error {worst:.2e} (<= 1e-4), {checked} samples checked (>= 50 each), {skipped} kink skips, {floored} below noise floor",
        reports.len(),
        reports.len() - 6
    ))
}

// ---------------------------------------------------------------- C3

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Gold, prediction, and the chunk counts by hand, per class as
/// `(class, tp, fp, fn)`.
const EVAL_FIXTURE: &[(&str, &str, &[(&str, usize, usize, usize)])] = &[
    ("B-PER I-PER O", "B-PER I-PER O", &[("PER", 1, 0, 0)]),
    ("B-LOC O B-ORG", "B-LOC O B-LOC", &[("LOC", 1, 1, 0), ("ORG", 0, 0, 1)]),
    ("O O O", "O O O", &[]),
    // Stray I in the prediction opens a chunk.
    ("B-PER O", "I-PER O", &[("PER", 1, 0, 0)]),
    ("B-ORG I-ORG I-ORG", "B-ORG I-ORG O", &[("ORG", 0, 1, 1)]),
    // Stray I in gold.
    ("O I-LOC I-LOC", "O B-LOC I-LOC", &[("LOC", 1, 0, 0)]),
    ("B-PER B-PER", "B-PER I-PER", &[("PER", 0, 1, 2)]),
    ("B-MISC O", "O O", &[("MISC", 0, 0, 1)]),
    ("B-MISC I-MISC", "O O", &[("MISC", 0, 0, 1)]),
    ("O O", "B-OTH O", &[("OTH", 0, 1, 0)]),
    // Class change inside I- starts a new chunk on both sides.
    ("B-LOC I-ORG", "B-LOC I-ORG", &[("LOC", 1, 0, 0), ("ORG", 1, 0, 0)]),
    ("B-LOC I-LOC O B-PER", "B-LOC I-LOC O B-ORG", &[("LOC", 1, 0, 0), ("PER", 0, 0, 1), ("ORG", 0, 1, 0)]),
    ("B-ORG", "B-ORG", &[("ORG", 1, 0, 0)]),
    ("B-PER I-PER I-PER", "B-PER I-PER B-PER", &[("PER", 0, 2, 1)]),
    ("O B-LOC", "O I-LOC", &[("LOC", 1, 0, 0)]),
    ("B-ORG I-ORG", "B-LOC I-LOC", &[("ORG", 0, 0, 1), ("LOC", 0, 1, 0)]),
    ("B-PER O B-PER", "B-PER O B-PER", &[("PER", 2, 0, 0)]),
    ("B-LOC", "O", &[("LOC", 0, 0, 1)]),
    ("O O O", "O B-OTH I-OTH", &[("OTH", 0, 1, 0)]),
    ("B-PER I-LOC", "B-PER I-PER", &[("PER", 0, 1, 1), ("LOC", 0, 0, 1)]),
];

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn check_scores(what: &str, s: &Scores, counts: (usize, usize, usize), prf: (f64, f64, f64)) -> Result<()> {
    ensure!((s.tp, s.fp, s.fn_) == counts, "{what}: counts {:?} != {counts:?}", (s.tp, s.fp, s.fn_));
    ensure!(
        same(s.precision, prf.0) && same(s.recall, prf.1) && same(s.f1, prf.2),
        "{what}: P/R/F1 ({}, {}, {}) != {prf:?}",
        s.precision,
        s.recall,
        s.f1
    );
    Ok(())
}

fn c3_evaluator() -> Result<String> {
    ensure!(EVAL_FIXTURE.len() == 20, "fixture must have 20 sentences");
    let gold: Vec<Vec<String>> = EVAL_FIXTURE.iter().map(|f| split(f.0)).collect();
    let pred: Vec<Vec<String>> = EVAL_FIXTURE.iter().map(|f| split(f.1)).collect();
    let report = evaluate_labels(&gold, &pred, ChunkMode::Lenient)?;

    // Per-sentence annotations summed up must agree with the totals below.
    let mut summed: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (_, _, counts) in EVAL_FIXTURE {
        for &(c, tp, fp, fn_) in counts.iter() {
            let e = summed.entry(c).or_default();
            e.0 += tp;
            e.1 += fp;
            e.2 += fn_;
        }
    }
    // Totals and ratios worked out by hand.
    let expected: [(&str, (usize, usize, usize), (f64, f64, f64)); 5] = [
        ("PER", (4, 4, 5), (4.0 / 8.0, 4.0 / 9.0, 8.0 / 17.0)),
        ("LOC", (5, 2, 2), (5.0 / 7.0, 5.0 / 7.0, 5.0 / 7.0)),
        ("ORG", (2, 2, 3), (2.0 / 4.0, 2.0 / 5.0, 4.0 / 9.0)),
        // Only predicted: recall 0/0 is 0.
        ("OTH", (0, 2, 0), (0.0, 0.0, 0.0)),
        // Never predicted: precision 0/0 is 0.
        ("MISC", (0, 0, 2), (0.0, 0.0, 0.0)),
    ];
    for (class, counts, prf) in expected {
        ensure!(summed.get(class) == Some(&counts), "fixture annotation for {class} disagrees with hand totals");
        let s = report.per_class.get(class).with_context(|| format!("no scores for {class}"))?;
        check_scores(class, s, counts, prf)?;
    }
    ensure!(report.per_class.len() == 5, "unexpected classes {:?}", report.per_class.keys());
    check_scores("overall", &report.overall, (11, 10, 12), (11.0 / 21.0, 11.0 / 23.0, 0.5))?;
    ensure!(report.sentences == 20);

    // Two-level fixture: outer and inner chunks pooled.
    let go = [split("B-ORG I-ORG O"), split("B-PER O"), split("B-LOC I-LOC"), split("B-ORG I-ORG I-ORG")];
    let gi = [split("B-LOC O O"), split("O O"), split("O O"), split("O B-LOC I-LOC")];
    let po = [split("B-ORG I-ORG O"), split("B-PER O"), split("B-LOC O"), split("B-ORG I-ORG I-ORG")];
    let pi = [split("O O O"), split("B-LOC O"), split("O O"), split("O B-LOC I-LOC")];
    // Outer: tp 3 (s1, s2, s4), fp 1 and fn 1 (s3). Inner: tp 1 (s4),
    // fp 1 (s2), fn 1 (s1). Pooled: tp 4, fp 2, fn 2.
    let combined = germeval_combined(&go, &gi, &po, &pi)?;
    check_scores("combined", &combined.overall, (4, 2, 2), (4.0 / 6.0, 4.0 / 6.0, 4.0 / 6.0))?;
    // Averaging per-level F1 instead: (3/4 + 1/2) / 2.
    let averaged = germeval_combined_with(&go, &gi, &po, &pi, Pooling::Average)?;
    ensure!(same(averaged.overall.f1, 0.625), "averaged F1 {}", averaged.overall.f1);
    Ok("20-sentence fixture: 5 classes and overall counts exact, P/R/F1 within 1e-12 (overall P 11/21 R 11/23 F1 0.5); combined two-level fixture pooled P=R=F1=2/3".into())
}

// ---------------------------------------------------------------- C4

fn c4_overfit() -> Result<String> {
    let (train, store, tag) = match (env_path("NER_GERMEVAL_TRAIN"), env_path("NER_EMBEDDINGS")) {
        (Some(t), Some(e)) => {
            let mut s = parse_germeval(&t)?;
            s.truncate(50);
            (s, load_embeddings(&e, None)?, REAL)
        }
        _ => {
            let c = generate(&SyntheticSpec {
                train: 50,
                dev: 1,
                test: 1,
                word_dim: 300,
                ..SyntheticSpec::default()
            });
            (c.train, c.store, STAND_IN)
        }
    };
    ensure!(train.len() == 50, "need 50 training sentences, have {}", train.len());
    let mut cfg = ModelConfig::new(CharVariant::Bilstm, LabelSchema::germeval());
    cfg.word_dim = store.dim();
    let mut model = build_model(cfg, CharVocab::build(&train), 1)?;
    let tc = TrainConfig::default();
    let data = TrainData::new(&model, &train)?;
    let mut state = NadamState::default();
    let start = Instant::now();
    let mut f1 = 0.0;
    for epoch in 1..=150 {
        train_epoch(&mut model, &data, &store, &tc, 1, epoch, &mut state)?;
        f1 = evaluate_model(&model, &store, &train)?.overall.f1;
        let secs = start.elapsed().as_secs_f64();
        ensure!(secs < 600.0, "{tag} exceeded 10 minutes at epoch {epoch} (train F1 {f1:.3})");
        if f1 >= 0.95 {
            return Ok(format!(
                "{tag} bilstm char variant, default dimensions: train F1 {f1:.3} (>= 0.95) after {epoch} epochs in {secs:.1}s (< 600s)"
            ));
        }
    }
    Err(anyhow!("{tag} train F1 {f1:.3} < 0.95 after 150 epochs"))
}

// ---------------------------------------------------------------- C5

fn c5_ablation() -> Result<String> {
    let (train, dev, store, tag) =
        match (env_path("NER_GERMEVAL_TRAIN"), env_path("NER_GERMEVAL_DEV"), env_path("NER_EMBEDDINGS")) {
            (Some(t), Some(d), Some(e)) => {
                let schema = LabelSchema::germeval();
                let mut train = load_split(&t, CorpusFormat::Germeval, LabelLevel::Outer, &schema)?;
                train.truncate(2000);
                let dev = load_split(&d, CorpusFormat::Germeval, LabelLevel::Outer, &schema)?;
                (train, dev, load_embeddings(&e, None)?, REAL)
            }
            _ => {
                // Entity names unseen in training have no word vector, so
                // only the character features can classify them.
                let c = generate(&SyntheticSpec {
                    train: 1000,
                    dev: 400,
                    test: 1,
                    word_dim: 32,
                    unseen_in_vectors: 0.0,
                    ..SyntheticSpec::default()
                });
                (c.train, c.dev, c.store, STAND_IN)
            }
        };
    let seeds = [1u64, 2, 3];
    let mut means = Vec::new();
    for v in CharVariant::ALL {
        let mut total = 0.0;
        for &seed in &seeds {
            let mut cfg = ModelConfig::new(v, LabelSchema::germeval());
            cfg.word_dim = store.dim();
            cfg.char_emb_dim = 16;
            cfg.char_cnn_filters = 16;
            cfg.char_lstm_cells = 16;
            cfg.token_lstm_cells = 32;
            let model = build_model(cfg, CharVocab::build(&train), seed)?;
            let tc = TrainConfig {
                stage1_epochs: 6,
                stage2_epochs: 0,
                seed,
                ..TrainConfig::default()
            };
            let (_, report) = train_two_stage(model, &train, &dev, &store, &tc)?;
            let best = report.stage1_best.context("no stage-1 selection")?;
            total += report.epochs[best - 1].dev_f1;
        }
        means.push((v, 100.0 * total / seeds.len() as f64));
    }
    let none = means[0].1;
    let summary = means
        .iter()
        .map(|(v, f)| format!("{} {f:.2}", v.as_str()))
        .collect::<Vec<_>>()
        .join(", ");
    let losers: Vec<_> = means[1..].iter().filter(|(_, f)| f - none < 1.0).map(|(v, _)| v.as_str()).collect();
    ensure!(
        losers.is_empty(),
        "{tag} mean dev F1 over 3 seeds: {summary}; not >= 1.0 above none: {losers:?}"
    );
    Ok(format!("{tag} mean dev F1 over 3 seeds: {summary}; every char variant >= none + 1.0"))
}

// ---------------------------------------------------------------- C6

/// Independent fastText subword reimplementation: n-grams over code points
/// of `<word>`, FNV-1a over bytes with fastText's signed-char quirk.
mod ft_oracle {
    pub fn ngrams(word: &str, minn: usize, maxn: usize) -> Vec<String> {
        let chars: Vec<char> = format!("<{word}>").chars().collect();
        let mut out = Vec::new();
        for i in 0..chars.len() {
            for n in 1..=maxn {
                if i + n > chars.len() {
                    break;
                }
                let at_edge = i == 0 || i + n == chars.len();
                if n >= minn && !(n == 1 && at_edge) {
                    out.push(chars[i..i + n].iter().collect());
                }
            }
        }
        out
    }

    pub fn hash(s: &str) -> u32 {
        let mut h: u32 = 2166136261;
        for &b in s.as_bytes() {
            h ^= b as i8 as i32 as u32;
            h = h.wrapping_mul(16777619);
        }
        h
    }

    pub fn vector(word: &str, minn: usize, maxn: usize, buckets: usize, rows: &[f32], dim: usize) -> Vec<f64> {
        let grams = ngrams(word, minn, maxn);
        let mut v = vec![0.0; dim];
        for g in &grams {
            let r = hash(g) as usize % buckets;
            for (o, x) in v.iter_mut().zip(&rows[r * dim..(r + 1) * dim]) {
                *o += *x as f64;
            }
        }
        v.iter_mut().for_each(|x| *x /= grams.len() as f64);
        v
    }
}

/// A fastText `.bin` with the given words and matrix (word rows first).
fn fasttext_bin(words: &[String], dim: usize, bucket: usize, minn: i32, maxn: i32, matrix: &[f32]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend(793712314i32.to_le_bytes());
    b.extend(12i32.to_le_bytes());
    for a in [dim as i32, 5, 5, 1, 5, 1, 1, 1, bucket as i32, minn, maxn, 100] {
        b.extend(a.to_le_bytes());
    }
    b.extend(1e-4f64.to_le_bytes());
    b.extend((words.len() as i32).to_le_bytes());
    b.extend((words.len() as i32).to_le_bytes());
    b.extend(0i32.to_le_bytes());
    b.extend(100i64.to_le_bytes());
    b.extend((-1i64).to_le_bytes());
    for w in words {
        b.extend(w.as_bytes());
        b.push(0);
        b.extend(10i64.to_le_bytes());
        b.push(0);
    }
    b.push(0);
    b.extend(((words.len() + bucket) as i64).to_le_bytes());
    b.extend((dim as i64).to_le_bytes());
    for x in matrix {
        b.extend(x.to_le_bytes());
    }
    b
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn german_like_word(rng: &mut ChaCha8Rng) -> String {
    const PARTS: &[&str] = &[
        "ver", "über", "straße", "häus", "chen", "mäß", "lich", "keit", "grün", "schaft", "wört", "erb", "ö", "ß",
        "ung", "tür", "bau", "zug", "fahr", "kraft",
    ];
    let n = rng.gen_range(2..=4);
    (0..n).map(|_| PARTS[rng.gen_range(0..PARTS.len())]).collect()
}

fn c6_fasttext_oov() -> Result<String> {
    let (store, raw, tag) = match env_path("NER_FASTTEXT_MODEL") {
        Some(p) => {
            let f = std::fs::File::open(&p).with_context(|| p.display().to_string())?;
            (read_fasttext_bin(std::io::BufReader::new(f))?, None, REAL)
        }
        None => {
            let (dim, bucket) = (16, 5000);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let words: Vec<String> = ["und", "der", "Köln", "Straße", "über"].iter().map(|s| s.to_string()).collect();
            let matrix: Vec<f32> = (0..(words.len() + bucket) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bytes = fasttext_bin(&words, dim, bucket, 3, 6, &matrix);
            let buckets = matrix[words.len() * dim..].to_vec();
            (read_fasttext_bin(bytes.as_slice())?, Some(buckets), STAND_IN)
        }
    };
    let sub = store.subwords().context("model has no subword buckets")?;
    let rows = raw.as_deref().unwrap_or(&sub.rows);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut words = Vec::new();
    let mut tries = 0;
    while words.len() < 100 {
        tries += 1;
        ensure!(tries < 100_000, "could not find 100 out-of-vocabulary words");
        let w = german_like_word(&mut rng);
        if !store.vocab_contains(&w) && !words.contains(&w) {
            words.push(w);
        }
    }
    let mut worst = 1.0f64;
    for w in &words {
        let (v, oov) = store.lookup_word(w);
        ensure!(oov, "{w} unexpectedly in vocabulary");
        let expected = ft_oracle::vector(w, sub.min_n, sub.max_n, sub.bucket_count, rows, store.dim());
        let c = cosine(&v, &expected);
        worst = worst.min(c);
        ensure!(c >= 0.999, "{tag} `{w}`: cosine {c:.6} < 0.999");
    }
    Ok(format!("{tag} 100 OOV words (with umlauts and ß), min cosine vs oracle {worst:.6} (>= 0.999)"))
}

// ---------------------------------------------------------------- C7

/// IOB1 chunk reader: a chunk starts at `B-X`, or at `I-X` unless the
/// previous token continues class `X`.
fn iob_chunks(labels: &[String]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, l) in labels.iter().enumerate() {
        let (prefix, class) = match l.split_once('-') {
            Some((p, c)) => (p, c),
            None => ("O", ""),
        };
        let continues = prefix == "I" && matches!(&open, Some((c, _)) if c == class);
        if !continues {
            if let Some((c, s)) = open.take() {
                out.push((c, s, i));
            }
            if prefix != "O" {
                open = Some((class.to_string(), i));
            }
        }
    }
    if let Some((c, s)) = open {
        out.push((c, s, labels.len()));
    }
    out.sort();
    out
}

fn synthetic_iob_corpus() -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let classes = ["PER", "LOC", "ORG", "MISC"];
    (0..2000)
        .map(|_| {
            let mut labels = Vec::new();
            let mut prev: Option<&str> = None;
            let n = rng.gen_range(1..25);
            while labels.len() < n {
                if rng.gen_bool(0.6) {
                    labels.push("O".to_string());
                    prev = None;
                    continue;
                }
                let c = classes[rng.gen_range(0..4)];
                let len = rng.gen_range(1..4);
                // IOB1: B- only when a chunk directly follows one of its class.
                let first = if prev == Some(c) { "B" } else { "I" };
                labels.push(format!("{first}-{c}"));
                for _ in 1..len {
                    labels.push(format!("I-{c}"));
                }
                prev = Some(c);
            }
            let tokens = (0..labels.len()).map(|i| format!("w{i}")).collect();
            Sentence::new(tokens, labels)
        })
        .collect()
}

fn c7_schema_conversion() -> Result<String> {
    let (sentences, tag) = match env_path("NER_CONLL_TRAIN") {
        Some(p) => (parse_conll03(&p)?, REAL),
        None => (synthetic_iob_corpus(), STAND_IN),
    };
    let mut chunks = 0;
    for (i, s) in sentences.iter().enumerate() {
        let bio = iob_to_bio(&s.outer_labels)?;
        ensure!(iob_to_bio(&bio)? == bio, "sentence {i}: conversion is not idempotent");
        let before = iob_chunks(&s.outer_labels);
        let mut after: Vec<(String, usize, usize)> = extract_chunks_with(&bio, Level::Outer, ChunkMode::Strict)?
            .into_iter()
            .map(|c| (c.class, c.start, c.end))
            .collect();
        after.sort();
        ensure!(before == after, "sentence {i}: chunks {before:?} became {after:?}");
        chunks += before.len();
    }
    Ok(format!(
        "{tag} {} sentences, {chunks} chunks: idempotent and chunk multiset preserved (BIO read strictly)",
        sentences.len()
    ))
}

// ---------------------------------------------------------------- C8

async fn post(client: &reqwest::Client, url: &str, body: &serde_json::Value) -> Result<NerResponse> {
    let resp = client.post(url).json(body).send().await?;
    ensure!(resp.status() == 200, "status {}", resp.status());
    Ok(resp.json().await?)
}

fn c8_service() -> Result<String> {
    let (fixture, fixture_store) = common::fixture_model();
    // A default-size model for the latency budget.
    let big_store = {
        let mut s = EmbeddingStore::new(300);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in common::PLACES.iter().chain(common::PEOPLE) {
            let v: Vec<f32> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.insert(w, &v)?;
        }
        s
    };
    let big: NerModel = build_model(
        ModelConfig::new(CharVariant::Bilstm2, LabelSchema::germeval()),
        CharVocab::from_chars("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZäöüßÄÖÜ0123456789.,-".chars()),
        1,
    )?;
    let sentences = vec![
        split("Aachen liegt im Westen"),
        split("Maria wohnt in Köln"),
        split("Jonas besucht Bonn seit 2018 ."),
    ];
    let offline: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| fixture.predict(&fixture_store, s))
        .collect::<ner_core::Result<_>>()?;
    let mut registry = ModelRegistry::default();
    registry.insert("germeval-outer", fixture, Arc::new(fixture_store));
    registry.insert("germeval-default-size", big, Arc::new(big_store));

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        tokio::spawn(async move { axum::serve(listener, router(Arc::new(registry))).await });
        let url = format!("http://{addr}/ner");
        let client = reqwest::Client::new();

        let body = serde_json::json!({"model": "germeval-outer", "sentences": sentences});
        let resp = post(&client, &url, &body).await?;
        ensure!(resp.labels == offline, "service {:?} != offline {:?}", resp.labels, offline);
        ensure!(resp.labels[0] == ["B-LOC", "O", "O", "O"], "fixture labels {:?}", resp.labels[0]);

        // 100 tokens: ten sentences of ten.
        let words = ["Anna", "wohnt", "seit", "2018", "in", "Berlin", "und", "arbeitet", "bei", "Siemens"];
        let batch: Vec<Vec<&str>> = (0..10).map(|_| words.to_vec()).collect();
        let big_body = serde_json::json!({"model": "germeval-default-size", "sentences": batch});
        post(&client, &url, &big_body).await?;
        let mut worst = Duration::ZERO;
        for _ in 0..5 {
            let t = Instant::now();
            let r = post(&client, &url, &big_body).await?;
            worst = worst.max(t.elapsed());
            ensure!(r.labels.iter().map(Vec::len).sum::<usize>() == 100);
        }
        ensure!(worst < Duration::from_millis(500), "100-token batch took {worst:?}");

        let handles: Vec<_> = (0..16)
            .map(|_| {
                let client = client.clone();
                let url = url.clone();
                let body = body.clone();
                tokio::spawn(async move { post(&client, &url, &body).await })
            })
            .collect();
        let mut payloads = Vec::new();
        for h in handles {
            let r = h.await??;
            payloads.push((r.model, r.labels));
        }
        ensure!(payloads.windows(2).all(|w| w[0] == w[1]), "concurrent payloads differ");
        ensure!(payloads[0].1 == offline);
        Ok(format!(
            "3 sentences identical to offline predict; 100-token batch on a default-size 2-BiLSTM model: worst of 5 {:.1} ms (< 500 ms); 16 concurrent requests returned identical labels",
            worst.as_secs_f64() * 1000.0
        ))
    })
}

// ---------------------------------------------------------------- C9

fn c9_full_scale() -> Result<String> {
    let need = |n: &str| env_path(n).with_context(|| format!("{n} is not set"));
    let store = load_embeddings(&need("NER_FASTTEXT_MODEL")?, None)?;
    let tc = TrainConfig::default();
    let train = |variant, schema: &LabelSchema, train: &[Sentence], dev: &[Sentence]| -> Result<NerModel> {
        let mut cfg = ModelConfig::new(variant, schema.clone());
        cfg.word_dim = store.dim();
        let model = build_model(cfg, CharVocab::build(train), 1)?;
        Ok(train_two_stage(model, train, dev, &store, &tc)?.0)
    };

    // GermEval: the best configuration is 2-BiLSTM char features.
    let schema = LabelSchema::germeval();
    let (tr, dv) = (need("NER_GERMEVAL_TRAIN")?, need("NER_GERMEVAL_DEV")?);
    let load = |p: &PathBuf, level| load_split(p, CorpusFormat::Germeval, level, &schema);
    let m_outer = train(CharVariant::Bilstm2, &schema, &load(&tr, LabelLevel::Outer)?, &load(&dv, LabelLevel::Outer)?)?;
    let m_inner = train(CharVariant::Bilstm2, &schema, &load(&tr, LabelLevel::Inner)?, &load(&dv, LabelLevel::Inner)?)?;
    let test = parse_germeval(need("NER_GERMEVAL_TEST")?)?;
    let tokens: Vec<&[String]> = test.iter().map(|s| s.tokens.as_slice()).collect();
    let po = m_outer.predict_batch(&store, &tokens)?;
    let pi = m_inner.predict_batch(&store, &tokens)?;
    let go: Vec<Vec<String>> = test.iter().map(|s| s.outer_labels.clone()).collect();
    let gi: Vec<Vec<String>> = test.iter().map(|s| s.inner_labels.clone().unwrap_or_default()).collect();
    let outer_f1 = 100.0 * evaluate_labels(&go, &po, ChunkMode::Lenient)?.overall.f1;
    let combined_f1 = 100.0 * germeval_combined(&go, &gi, &po, &pi)?.overall.f1;

    // CoNLL: the best configuration is single BiLSTM char features.
    let schema = LabelSchema::conll();
    let load = |p: PathBuf| load_split(&p, CorpusFormat::Conll, LabelLevel::Outer, &schema);
    let m = train(CharVariant::Bilstm, &schema, &load(need("NER_CONLL_TRAIN")?)?, &load(need("NER_CONLL_DEV")?)?)?;
    let conll_f1 = 100.0 * evaluate_model(&m, &store, &load(need("NER_CONLL_TEST")?)?)?.overall.f1;

    let summary = format!("GermEval outer F1 {outer_f1:.2}, combined {combined_f1:.2}, CoNLL {conll_f1:.2}");
    ensure!((outer_f1 - 82.19).abs() <= 1.5, "{summary}: outer not within 82.19 +- 1.5");
    ensure!((combined_f1 - 80.83).abs() <= 1.5, "{summary}: combined not within 80.83 +- 1.5");
    ensure!((conll_f1 - 85.19).abs() <= 1.5, "{summary}: CoNLL not within 85.19 +- 1.5");
    Ok(summary)
}
