//! Chunk-level precision, recall and F1.
//!
//! Chunks are exact `(class, start, end)` spans. A stray `I-X` that does
//! not continue a chunk of class `X` opens a new chunk, as conlleval does;
//! [`ChunkMode::Strict`] drops such chunks instead.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Prefix, Sentence, Tag};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Outer,
    Inner,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Chunk {
    pub class: String,
    pub start: usize,
    pub end: usize,
    pub level: Level,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChunkMode {
    #[default]
    Lenient,
    Strict,
}

/// Outer-level chunks with conlleval leniency.
pub fn extract_chunks<S: AsRef<str>>(labels: &[S]) -> Result<Vec<Chunk>> {
    extract_chunks_with(labels, Level::Outer, ChunkMode::Lenient)
}

pub fn extract_chunks_with<S: AsRef<str>>(labels: &[S], level: Level, mode: ChunkMode) -> Result<Vec<Chunk>> {
    let mut chunks = Vec::new();
    // (class, start, valid)
    let mut open: Option<(String, usize, bool)> = None;
    let close = |open: &mut Option<(String, usize, bool)>, end: usize, chunks: &mut Vec<Chunk>| {
        if let Some((class, start, valid)) = open.take() {
            if valid {
                chunks.push(Chunk { class, start, end, level });
            }
        }
    };
    for (i, l) in labels.iter().enumerate() {
        match l.as_ref().parse::<Tag>()? {
            Tag::Outside => close(&mut open, i, &mut chunks),
            Tag::Entity { prefix: Prefix::B, class } => {
                close(&mut open, i, &mut chunks);
                open = Some((class, i, true));
            }
            Tag::Entity { prefix: Prefix::I, class } => {
                if !matches!(&open, Some((c, _, _)) if *c == class) {
                    close(&mut open, i, &mut chunks);
                    open = Some((class, i, mode == ChunkMode::Lenient));
                }
            }
        }
    }
    close(&mut open, labels.len(), &mut chunks);
    Ok(chunks)
}

/// Renders chunks of one sentence back to BIO labels.
pub fn chunks_to_bio(chunks: &[Chunk], len: usize) -> Result<Vec<String>> {
    let mut out = vec!["O".to_string(); len];
    for c in chunks {
        if c.start >= c.end || c.end > len {
            return Err(Error::IndexOutOfRange { index: c.end, size: len });
        }
        out[c.start] = format!("B-{}", c.class);
        for l in &mut out[c.start + 1..c.end] {
            *l = format!("I-{}", c.class);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores { tp, fp, fn_, precision, recall, f1 }
    }

    fn add(&mut self, tp: usize, fp: usize, fn_: usize) {
        *self = Scores::from_counts(self.tp + tp, self.fp + fp, self.fn_ + fn_);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub overall: Scores,
    pub per_class: BTreeMap<String, Scores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv: Option<Box<EvalReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oov: Option<Box<EvalReport>>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// conlleval-style summary followed by one row per class.
    pub fn conll_table(&self) -> String {
        let o = &self.overall;
        let mut s = format!(
            "processed {} sentences; found: {} phrases; correct: {}.\n",
            self.sentences,
            o.tp + o.fp,
            o.tp
        );
        let row = |s: &mut String, name: &str, x: &Scores| {
            let _ = writeln!(
                s,
                "{name:>17}: precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}  {}",
                100.0 * x.precision,
                100.0 * x.recall,
                100.0 * x.f1,
                x.tp + x.fp
            );
        };
        row(&mut s, "overall", o);
        for (class, x) in &self.per_class {
            row(&mut s, class, x);
        }
        s
    }
}

/// Micro-averaged exact-match scores over aligned per-sentence chunk lists.
pub fn prf1(gold: &[Vec<Chunk>], pred: &[Vec<Chunk>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut report = EvalReport {
        sentences: gold.len(),
        ..EvalReport::default()
    };
    for (g, p) in gold.iter().zip(pred) {
        let gs: HashSet<&Chunk> = g.iter().collect();
        let ps: HashSet<&Chunk> = p.iter().collect();
        for c in &ps {
            let hit = gs.contains(c);
            report.per_class.entry(c.class.clone()).or_default().add(hit as usize, !hit as usize, 0);
            report.overall.add(hit as usize, !hit as usize, 0);
        }
        for c in gs.difference(&ps) {
            report.per_class.entry(c.class.clone()).or_default().add(0, 0, 1);
            report.overall.add(0, 0, 1);
        }
    }
    Ok(report)
}

fn chunk_all(labels: &[Vec<String>], level: Level, mode: ChunkMode) -> Result<Vec<Vec<Chunk>>> {
    labels.iter().map(|l| extract_chunks_with(l, level, mode)).collect()
}

fn check_aligned(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "sentence {i}: {} gold labels but {} predicted",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Scores aligned label sequences.
pub fn evaluate_labels(gold: &[Vec<String>], pred: &[Vec<String>], mode: ChunkMode) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    prf1(&chunk_all(gold, Level::Outer, mode)?, &chunk_all(pred, Level::Outer, mode)?)
}

/// How the two GermEval levels are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    /// Pool TP/FP/FN over both levels, then score.
    #[default]
    Micro,
    /// Score each level and average P, R and F1.
    Average,
}

pub fn germeval_combined(
    gold_outer: &[Vec<String>],
    gold_inner: &[Vec<String>],
    pred_outer: &[Vec<String>],
    pred_inner: &[Vec<String>],
) -> Result<EvalReport> {
    germeval_combined_with(gold_outer, gold_inner, pred_outer, pred_inner, Pooling::Micro)
}

pub fn germeval_combined_with(
    gold_outer: &[Vec<String>],
    gold_inner: &[Vec<String>],
    pred_outer: &[Vec<String>],
    pred_inner: &[Vec<String>],
    pooling: Pooling,
) -> Result<EvalReport> {
    check_aligned(gold_outer, pred_outer)?;
    check_aligned(gold_inner, pred_inner)?;
    check_aligned(gold_outer, gold_inner)?;
    let mode = ChunkMode::Lenient;
    match pooling {
        Pooling::Micro => {
            let mut gold = chunk_all(gold_outer, Level::Outer, mode)?;
            let mut pred = chunk_all(pred_outer, Level::Outer, mode)?;
            for (g, inner) in gold.iter_mut().zip(chunk_all(gold_inner, Level::Inner, mode)?) {
                g.extend(inner);
            }
            for (p, inner) in pred.iter_mut().zip(chunk_all(pred_inner, Level::Inner, mode)?) {
                p.extend(inner);
            }
            prf1(&gold, &pred)
        }
        Pooling::Average => {
            let outer = evaluate_labels(gold_outer, pred_outer, mode)?;
            let inner = evaluate_labels(gold_inner, pred_inner, mode)?;
            let mut report = prf1(&[], &[])?;
            report.sentences = outer.sentences;
            let (a, b) = (&outer.overall, &inner.overall);
            report.overall = Scores {
                tp: a.tp + b.tp,
                fp: a.fp + b.fp,
                fn_: a.fn_ + b.fn_,
                precision: (a.precision + b.precision) / 2.0,
                recall: (a.recall + b.recall) / 2.0,
                f1: (a.f1 + b.f1) / 2.0,
            };
            report.per_class = outer.per_class;
            for (class, s) in inner.per_class {
                report.per_class.entry(class).or_default().add(s.tp, s.fp, s.fn_);
            }
            Ok(report)
        }
    }
}

/// Splits sentences into those whose every token is in the store's word
/// list and those with at least one out-of-vocabulary token.
pub fn split_oov_iv(test: &[Sentence], store: &EmbeddingStore) -> (Vec<Sentence>, Vec<Sentence>) {
    test.iter()
        .cloned()
        .partition(|s| s.tokens.iter().all(|t| store.vocab_contains(t)))
}
