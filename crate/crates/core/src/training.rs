//! Two-stage mini-batch training with Nesterov-accelerated Adam.
//!
//! Stage 1 trains with small batches and keeps the epoch with the best
//! development F1; stage 2 continues from that checkpoint with large
//! batches and again keeps the best epoch. Word vectors are inputs, not
//! parameters, so they never change.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::corpus::{make_batches, Sentence};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_labels, ChunkMode, EvalReport};
use crate::layers::Mode;
use crate::model::NerModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NadamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl NadamState {
    pub fn reset(&mut self) {
        *self = NadamState::default();
    }
}

/// One Nadam update:
///
/// ```text
/// m = β1·m + (1-β1)·g            v = β2·v + (1-β2)·g²
/// m̂ = β1·m / (1-β1^(t+1)) + (1-β1)·g / (1-β1^t)
/// v̂ = v / (1-β2^t)
/// θ = θ - lr · m̂ / (√v̂ + ε)
/// ```
///
/// Parameters and gradients are matched by position and element count.
pub fn nadam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut NadamState, hyper: &NadamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("nadam", format!("{} gradients", params.len()), format!("{}", grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape("nadam", format!("param {i}: {} values", p.len()), format!("{}", g.len())));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let NadamConfig { lr, beta1: b1, beta2: b2, eps } = *hyper;
    let c_next = 1.0 - b1.powi(t + 1);
    let c_now = 1.0 - b1.powi(t);
    let c_v = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = b1 * *mi / c_next + (1.0 - b1) * gi / c_now;
            let v_hat = *vi / c_v;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage1_batch: usize,
    pub stage2_epochs: usize,
    pub stage2_batch: usize,
    pub optimizer: NadamConfig,
    pub seed: u64,
    /// Global gradient norm cap; `None` disables clipping.
    pub gradient_clip_norm: Option<f64>,
    /// Start stage 2 with fresh optimizer moments.
    pub reset_optimizer_stage2: bool,
    /// Where per-epoch checkpoints are written, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 10,
            stage1_batch: 16,
            stage2_epochs: 10,
            stage2_batch: 512,
            optimizer: NadamConfig::default(),
            seed: 1,
            gradient_clip_norm: Some(5.0),
            reset_optimizer_stage2: true,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self, stage: u8) -> usize {
        if stage == 1 {
            self.stage1_batch
        } else {
            self.stage2_batch
        }
    }
}

/// Per-epoch record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    /// Mean of the per-batch losses (each a mean over its sentences).
    pub train_loss: f64,
    pub batch_losses: Vec<f64>,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) selected in each stage.
    pub stage1_best: Option<usize>,
    pub stage2_best: Option<usize>,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.stage == stage)
    }

    /// The report with all timing fields zeroed, for comparing runs.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        r.wall_clock_seconds = 0.0;
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }

    /// One JSON object per epoch, then a summary line.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
            writeln!(w)?;
        }
        let summary = serde_json::json!({
            "summary": true,
            "stage1_best": self.stage1_best,
            "stage2_best": self.stage2_best,
            "wall_clock_seconds": self.wall_clock_seconds,
        });
        writeln!(w, "{summary}")
    }
}

/// Training sentences paired with their gold label indices.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub sentences: &'a [Sentence],
    pub gold: Vec<Vec<usize>>,
}

impl<'a> TrainData<'a> {
    /// Indexes `outer_labels` against the model's schema.
    pub fn new(model: &NerModel, sentences: &'a [Sentence]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("no training sentences".into()));
        }
        let gold = sentences
            .iter()
            .map(|s| {
                if s.is_empty() || s.outer_labels.len() != s.len() {
                    return Err(Error::InvalidArgument(format!("malformed sentence `{}`", s.source_id)));
                }
                model.label_indices(&s.outer_labels)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainData { sentences, gold })
    }
}

fn epoch_seed(seed: u64, stage: u8, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((stage as u64) << 32) ^ epoch as u64
}

/// Gradient of the mean batch loss for every parameter, in canonical order.
pub fn batch_gradients(
    model: &NerModel,
    store: &EmbeddingStore,
    sentences: &[&[String]],
    gold: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let batch = model.features(store, sentences)?;
    let mut g = Graph::new();
    let nodes = model.bind(&mut g);
    let loss = model.loss_graph(&mut g, &nodes, &batch, gold, Mode::Train, rng)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let grads = g.backward(loss)?;
    Ok((value, nodes.all.iter().map(|&id| grads.get_or_zeros(&g, id)).collect()))
}

/// One pass over all training batches. Returns the per-batch losses.
pub fn train_epoch(
    model: &mut NerModel,
    data: &TrainData,
    store: &EmbeddingStore,
    config: &TrainConfig,
    stage: u8,
    epoch: usize,
    state: &mut NadamState,
) -> Result<Vec<f64>> {
    if !(1..=2).contains(&stage) {
        return Err(Error::InvalidArgument(format!("stage must be 1 or 2, got {stage}")));
    }
    if data.sentences.is_empty() {
        return Err(Error::InvalidArgument("no training sentences".into()));
    }
    let seed = epoch_seed(config.seed, stage, epoch);
    let batches = make_batches(data.sentences, config.batch_size(stage), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut losses = Vec::with_capacity(batches.len());
    for b in &batches {
        let tokens: Vec<&[String]> = b.indices.iter().map(|&i| data.sentences[i].tokens.as_slice()).collect();
        let gold: Vec<Vec<usize>> = b.indices.iter().map(|&i| data.gold[i].clone()).collect();
        let (loss, mut grads) = batch_gradients(model, store, &tokens, &gold, &mut rng)?;
        if let Some(max) = config.gradient_clip_norm {
            clip_global_norm(&mut grads, max);
        }
        nadam_step(&mut model.tensors_mut(), &grads, state, &config.optimizer)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Scores a model's outer-level predictions against gold labels.
pub fn evaluate_model(model: &NerModel, store: &EmbeddingStore, sentences: &[Sentence]) -> Result<EvalReport> {
    let tokens: Vec<&[String]> = sentences.iter().map(|s| s.tokens.as_slice()).collect();
    let pred = model.predict_batch(store, &tokens)?;
    let gold: Vec<Vec<String>> = sentences.iter().map(|s| s.outer_labels.clone()).collect();
    evaluate_labels(&gold, &pred, ChunkMode::Lenient)
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    model: NerModel,
    data: &TrainData,
    dev: &[Sentence],
    store: &EmbeddingStore,
    config: &TrainConfig,
    stage: u8,
    state: &mut NadamState,
    report: &mut TrainReport,
) -> Result<NerModel> {
    let epochs = if stage == 1 { config.stage1_epochs } else { config.stage2_epochs };
    let mut current = model;
    let mut best: Option<(f64, usize, NerModel)> = None;
    for epoch in 1..=epochs {
        let start = Instant::now();
        let losses = train_epoch(&mut current, data, store, config, stage, epoch, state)?;
        let dev_report = evaluate_model(&current, store, dev)?;
        let record = EpochRecord {
            stage,
            epoch,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            batch_losses: losses,
            dev_precision: dev_report.overall.precision,
            dev_recall: dev_report.overall.recall,
            dev_f1: dev_report.overall.f1,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "stage {stage} epoch {epoch}: loss {:.4}, dev F1 {:.4} ({:.1}s)",
            record.train_loss,
            record.dev_f1,
            record.seconds
        );
        if let Some(dir) = &config.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mut snapshot = current.clone();
            snapshot.round_to_f32();
            snapshot.save(dir.join(format!("stage{stage}-epoch{epoch:02}.mner")))?;
        }
        if best.as_ref().is_none_or(|(f1, _, _)| record.dev_f1 > *f1) {
            best = Some((record.dev_f1, epoch, current.clone()));
        }
        report.epochs.push(record);
    }
    match best {
        Some((_, epoch, m)) => {
            if stage == 1 {
                report.stage1_best = Some(epoch);
            } else {
                report.stage2_best = Some(epoch);
            }
            Ok(m)
        }
        None => Ok(current),
    }
}

/// Runs both stages and returns the stage-2 model with the best
/// development F1 (the stage-1 selection if stage 2 has no epochs).
pub fn train_two_stage(
    model: NerModel,
    train: &[Sentence],
    dev: &[Sentence],
    store: &EmbeddingStore,
    config: &TrainConfig,
) -> Result<(NerModel, TrainReport)> {
    let start = Instant::now();
    let data = TrainData::new(&model, train)?;
    if dev.is_empty() {
        return Err(Error::InvalidArgument("no development sentences".into()));
    }
    let mut report = TrainReport::default();
    let mut state = NadamState::default();
    let m = run_stage(model, &data, dev, store, config, 1, &mut state, &mut report)?;
    if config.reset_optimizer_stage2 {
        state.reset();
    }
    let m = run_stage(m, &data, dev, store, config, 2, &mut state, &mut report)?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((m, report))
}
