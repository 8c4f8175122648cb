//! The full tagger: character features, a token BiLSTM, a linear layer
//! producing per-label scores, and a CRF on top.
//!
//! Each token's BiLSTM input is its fixed word vector, a 7-way casing
//! one-hot and (except for [`CharVariant::None`]) a learned character
//! feature vector. Word vectors are looked up from an [`EmbeddingStore`]
//! and are not model parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::corpus::{build_char_sequences, decorated_len, extract_casing_feature, CharMode, CharVocab, LabelSchema};
use crate::crf::{batch_nll, viterbi_decode, CrfNodes, CrfParams};
use crate::embeddings::{EmbeddingKind, EmbeddingStore};
use crate::error::{Error, Result};
use crate::layers::{
    bilstm_sequence, conv1d_globalmaxpool, dense, dropout_mask, embed_lookup, glorot_uniform, Conv1dNodes,
    Conv1dParams, EmbeddingTable, LstmNodes, LstmParams, Mode, RecurrentDropout,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CharVariant {
    None,
    Cnn,
    Cnn3,
    Bilstm,
    Bilstm2,
}

impl CharVariant {
    pub const ALL: [CharVariant; 5] = [
        CharVariant::None,
        CharVariant::Cnn,
        CharVariant::Cnn3,
        CharVariant::Bilstm,
        CharVariant::Bilstm2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CharVariant::None => "none",
            CharVariant::Cnn => "cnn",
            CharVariant::Cnn3 => "cnn3",
            CharVariant::Bilstm => "bilstm",
            CharVariant::Bilstm2 => "bilstm2",
        }
    }

    /// Character sequence layout this variant consumes.
    pub fn char_mode(self) -> Option<CharMode> {
        match self {
            CharVariant::None => None,
            CharVariant::Cnn | CharVariant::Cnn3 => Some(CharMode::Cnn),
            CharVariant::Bilstm | CharVariant::Bilstm2 => Some(CharMode::Rnn),
        }
    }
}

impl FromStr for CharVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CharVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown char variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub char_variant: CharVariant,
    pub word_dim: usize,
    pub casing_dim: usize,
    pub char_emb_dim: usize,
    pub char_cnn_filters: usize,
    pub char_cnn_kernels: Vec<usize>,
    pub char_lstm_cells: usize,
    pub token_lstm_cells: usize,
    /// Input dropout on the token BiLSTM.
    pub dropout: f64,
    /// Dropout on the token BiLSTM's recurrent connections.
    pub recurrent_dropout: f64,
    pub label_schema: LabelSchema,
    pub embedding_kind: EmbeddingKind,
}

impl ModelConfig {
    pub fn new(char_variant: CharVariant, label_schema: LabelSchema) -> Self {
        let char_cnn_kernels = match char_variant {
            CharVariant::Cnn => vec![3],
            CharVariant::Cnn3 => vec![3, 4, 5],
            _ => Vec::new(),
        };
        ModelConfig {
            char_variant,
            word_dim: 300,
            casing_dim: 7,
            char_emb_dim: 32,
            char_cnn_filters: 32,
            char_cnn_kernels,
            char_lstm_cells: 50,
            token_lstm_cells: 200,
            dropout: 0.5,
            recurrent_dropout: 0.5,
            label_schema,
            embedding_kind: EmbeddingKind::FastText,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.casing_dim != 7 {
            return bad(format!("casing_dim must be 7, got {}", self.casing_dim));
        }
        if self.word_dim == 0 || self.token_lstm_cells == 0 {
            return bad("word_dim and token_lstm_cells must be positive".into());
        }
        for (name, rate) in [("dropout", self.dropout), ("recurrent_dropout", self.recurrent_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must be in [0, 1), got {rate}"));
            }
        }
        match self.char_variant {
            CharVariant::None => {}
            CharVariant::Cnn | CharVariant::Cnn3 => {
                if self.char_cnn_kernels.is_empty() || self.char_cnn_kernels.contains(&0) {
                    return bad(format!("invalid kernel sizes {:?}", self.char_cnn_kernels));
                }
                if self.char_cnn_filters == 0 || self.char_emb_dim == 0 {
                    return bad("char_cnn_filters and char_emb_dim must be positive".into());
                }
            }
            CharVariant::Bilstm | CharVariant::Bilstm2 => {
                if self.char_lstm_cells == 0 || self.char_emb_dim == 0 {
                    return bad("char_lstm_cells and char_emb_dim must be positive".into());
                }
            }
        }
        if self.label_schema.is_empty() {
            return bad("empty label schema".into());
        }
        Ok(())
    }

    pub fn char_feature_dim(&self) -> usize {
        match self.char_variant {
            CharVariant::None => 0,
            CharVariant::Cnn | CharVariant::Cnn3 => self.char_cnn_filters * self.char_cnn_kernels.len(),
            CharVariant::Bilstm | CharVariant::Bilstm2 => 2 * self.char_lstm_cells,
        }
    }

    /// Width of the token BiLSTM input.
    pub fn input_width(&self) -> usize {
        self.word_dim + self.casing_dim + self.char_feature_dim()
    }

    /// Shortest character padding the variant accepts.
    pub fn min_char_pad(&self) -> usize {
        self.char_cnn_kernels.iter().copied().max().unwrap_or(1).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NerModel {
    pub config: ModelConfig,
    pub char_vocab: CharVocab,
    pub char_table: Option<EmbeddingTable>,
    pub char_cnns: Vec<Conv1dParams>,
    /// Forward and backward LSTMs per stacked character layer.
    pub char_lstms: Vec<(LstmParams, LstmParams)>,
    pub token_fwd: LstmParams,
    pub token_bwd: LstmParams,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
    pub crf: CrfParams,
}

/// Initializes a model. The character vocabulary fixes the size of the
/// character embedding table.
pub fn build_model(config: ModelConfig, char_vocab: CharVocab, seed: u64) -> Result<NerModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = config.label_schema.len();
    let char_table = (config.char_variant != CharVariant::None)
        .then(|| EmbeddingTable::new(char_vocab.len(), config.char_emb_dim, &mut rng));
    let char_cnns = config
        .char_cnn_kernels
        .iter()
        .filter(|_| config.char_variant.char_mode() == Some(CharMode::Cnn))
        .map(|&k| Conv1dParams::new(k, config.char_emb_dim, config.char_cnn_filters, &mut rng))
        .collect();
    let layers = match config.char_variant {
        CharVariant::Bilstm => 1,
        CharVariant::Bilstm2 => 2,
        _ => 0,
    };
    let char_lstms = (0..layers)
        .map(|l| {
            let input = if l == 0 { config.char_emb_dim } else { 2 * config.char_lstm_cells };
            (
                LstmParams::new(input, config.char_lstm_cells, &mut rng),
                LstmParams::new(input, config.char_lstm_cells, &mut rng),
            )
        })
        .collect();
    let width = config.input_width();
    let cells = config.token_lstm_cells;
    let token_fwd = LstmParams::new(width, cells, &mut rng);
    let token_bwd = LstmParams::new(width, cells, &mut rng);
    let dense_w = glorot_uniform(2 * cells, labels, &mut rng);
    Ok(NerModel {
        config,
        char_vocab,
        char_table,
        char_cnns,
        char_lstms,
        token_fwd,
        token_bwd,
        dense_w,
        dense_b: Tensor::zeros(&[labels]),
        crf: CrfParams::zeros(labels),
    })
}

/// Graph handles for every parameter of a bound model.
#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub char_table: Option<NodeId>,
    pub char_cnns: Vec<Conv1dNodes>,
    pub char_lstms: Vec<(LstmNodes, LstmNodes)>,
    pub token_fwd: LstmNodes,
    pub token_bwd: LstmNodes,
    pub dense_w: NodeId,
    pub dense_b: NodeId,
    pub crf: CrfNodes,
    /// All parameter nodes in canonical order.
    pub all: Vec<NodeId>,
}

/// Word, casing and character inputs for a padded batch of sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub lengths: Vec<usize>,
    pub max_len: usize,
    /// `[B, word_dim]` per position, zero beyond each sentence.
    pub words: Vec<Tensor>,
    /// `[B, 7]` per position.
    pub casing: Vec<Tensor>,
    pub chars: Option<CharFeatures>,
}

/// Character sequences for every real token of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CharFeatures {
    pub mode: CharMode,
    pub pad_len: usize,
    /// Sequence per token, sentence by sentence.
    pub sequences: Vec<Vec<usize>>,
    /// Unpadded length of each sequence.
    pub lengths: Vec<usize>,
}

impl FeatureBatch {
    /// `chars` selects the vocabulary, layout and minimum padding of the
    /// character input, or omits it.
    pub fn build<S: AsRef<str>>(
        sentences: &[&[S]],
        store: &EmbeddingStore,
        word_dim: usize,
        chars: Option<(&CharVocab, CharMode, usize)>,
    ) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if store.dim() != word_dim {
            return Err(Error::shape("word embeddings", format!("dim {word_dim}"), format!("dim {}", store.dim())));
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!("sentence {i} is empty")));
            }
            if let Some(t) = s.iter().find(|t| t.as_ref().is_empty()) {
                let _ = t;
                return Err(Error::InvalidArgument(format!("sentence {i} contains an empty token")));
            }
        }
        let b = sentences.len();
        let lengths: Vec<usize> = sentences.iter().map(|s| s.len()).collect();
        let max_len = *lengths.iter().max().unwrap();
        let mut words = vec![Tensor::zeros(&[b, word_dim]); max_len];
        let mut casing = vec![Tensor::zeros(&[b, 7]); max_len];
        for (bi, s) in sentences.iter().enumerate() {
            for (t, tok) in s.iter().enumerate() {
                let (v, _) = store.lookup_word(tok.as_ref());
                words[t].row_mut(bi).copy_from_slice(&v);
                casing[t].row_mut(bi).copy_from_slice(&extract_casing_feature(tok.as_ref()).one_hot());
            }
        }
        let chars = match chars {
            None => None,
            Some((vocab, mode, min_pad)) => {
                let mut lens = Vec::new();
                for s in sentences {
                    for (i, tok) in s.iter().enumerate() {
                        lens.push(decorated_len(tok.as_ref(), i, s.len(), mode));
                    }
                }
                let pad_len = lens.iter().copied().max().unwrap_or(0).max(min_pad);
                let mut sequences = Vec::with_capacity(lens.len());
                for s in sentences {
                    sequences.extend(build_char_sequences(s, vocab, mode, pad_len)?);
                }
                Some(CharFeatures {
                    mode,
                    pad_len,
                    sequences,
                    lengths: lens,
                })
            }
        };
        Ok(FeatureBatch {
            lengths,
            max_len,
            words,
            casing,
            chars,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    /// `mask[t][b]`: whether position `t` of sentence `b` is a real token.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        (0..self.max_len)
            .map(|t| self.lengths.iter().map(|&l| t < l).collect())
            .collect()
    }
}

/// Nodes produced by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// `[T, B, L]` label scores.
    pub emissions: NodeId,
    /// Token BiLSTM input per position, `[B, input_width]`, before dropout.
    pub inputs: Vec<NodeId>,
}

impl NerModel {
    pub fn labels(&self) -> &[String] {
        self.config.label_schema.labels()
    }

    /// Parameters in canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        if let Some(t) = &self.char_table {
            out.push(("char_embeddings".into(), &t.rows));
        }
        for (i, c) in self.char_cnns.iter().enumerate() {
            out.push((format!("char_cnn{i}.kernels"), &c.kernels));
            out.push((format!("char_cnn{i}.bias"), &c.bias));
        }
        let lstm_names = ["w_input", "w_recurrent", "bias"];
        for (l, (f, b)) in self.char_lstms.iter().enumerate() {
            for (dir, p) in [("fwd", f), ("bwd", b)] {
                for (n, t) in lstm_names.iter().zip(p.tensors()) {
                    out.push((format!("char_lstm{l}.{dir}.{n}"), t));
                }
            }
        }
        for (dir, p) in [("fwd", &self.token_fwd), ("bwd", &self.token_bwd)] {
            for (n, t) in lstm_names.iter().zip(p.tensors()) {
                out.push((format!("token_lstm.{dir}.{n}"), t));
            }
        }
        out.push(("dense.w".into(), &self.dense_w));
        out.push(("dense.b".into(), &self.dense_b));
        out.push(("crf.transitions".into(), &self.crf.transitions));
        out.push(("crf.start".into(), &self.crf.start));
        out.push(("crf.end".into(), &self.crf.end));
        out
    }

    /// Mutable parameters in the order of [`NerModel::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(t) = &mut self.char_table {
            out.push(&mut t.rows);
        }
        for c in &mut self.char_cnns {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        for (f, b) in &mut self.char_lstms {
            out.extend(f.tensors_mut());
            out.extend(b.tensors_mut());
        }
        out.extend(self.token_fwd.tensors_mut());
        out.extend(self.token_bwd.tensors_mut());
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out.push(&mut self.crf.transitions);
        out.push(&mut self.crf.start);
        out.push(&mut self.crf.end);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Parameter values in the shapes used inside the graph (convolution
    /// kernels flattened to `[kernel_size · in_dim, filters]`).
    pub fn bound_tensors(&self) -> Vec<Tensor> {
        self.named_tensors()
            .into_iter()
            .map(|(_, t)| match *t.shape() {
                [k, i, f] => t.clone().reshape(vec![k * i, f]).expect("kernel shape"),
                _ => t.clone(),
            })
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> ModelNodes {
        let ids: Vec<NodeId> = self.bound_tensors().into_iter().map(|t| g.param(t)).collect();
        self.nodes_from_ids(&ids).expect("canonical parameter count")
    }

    /// Interprets `ids` (one per parameter, canonical order) as this
    /// model's parameter nodes.
    pub fn nodes_from_ids(&self, ids: &[NodeId]) -> Result<ModelNodes> {
        let expected = self.named_tensors().len();
        if ids.len() != expected {
            return Err(Error::shape("bind", format!("{expected} parameters"), format!("{}", ids.len())));
        }
        let mut it = ids.iter().copied();
        let mut next = || it.next().unwrap();
        let char_table = self.char_table.as_ref().map(|_| next());
        let char_cnns = self
            .char_cnns
            .iter()
            .map(|c| Conv1dNodes {
                kernels: next(),
                bias: next(),
                kernel_size: c.kernel_size,
            })
            .collect();
        let mut lstm = |cells: usize| LstmNodes {
            w_input: next(),
            w_recurrent: next(),
            bias: next(),
            cells,
        };
        let char_lstms = self
            .char_lstms
            .iter()
            .map(|(f, b)| (lstm(f.cells), lstm(b.cells)))
            .collect();
        let token_fwd = lstm(self.token_fwd.cells);
        let token_bwd = lstm(self.token_bwd.cells);
        let dense_w = next();
        let dense_b = next();
        let crf = CrfNodes {
            transitions: next(),
            start: next(),
            end: next(),
        };
        Ok(ModelNodes {
            char_table,
            char_cnns,
            char_lstms,
            token_fwd,
            token_bwd,
            dense_w,
            dense_b,
            crf,
            all: ids.to_vec(),
        })
    }

    /// Builds a [`FeatureBatch`] with the character layout this model needs.
    pub fn features<S: AsRef<str>>(&self, store: &EmbeddingStore, sentences: &[&[S]]) -> Result<FeatureBatch> {
        let chars = self
            .config
            .char_variant
            .char_mode()
            .map(|mode| (&self.char_vocab, mode, self.config.min_char_pad()));
        FeatureBatch::build(sentences, store, self.config.word_dim, chars)
    }

    /// Character feature per real token, `[N, char_feature_dim]`.
    fn char_features(&self, g: &mut Graph, nodes: &ModelNodes, chars: &CharFeatures) -> Result<NodeId> {
        let table = nodes.char_table.expect("char table for char variant");
        let xs = (0..chars.pad_len)
            .map(|p| {
                let idx: Vec<usize> = chars.sequences.iter().map(|s| s[p]).collect();
                embed_lookup(g, table, &idx)
            })
            .collect::<Result<Vec<_>>>()?;
        match chars.mode {
            CharMode::Cnn => {
                let mut feats = Vec::with_capacity(nodes.char_cnns.len());
                for conv in &nodes.char_cnns {
                    let k = conv.kernel_size;
                    let windows = chars.pad_len + 1 - k;
                    let ok: Vec<Vec<bool>> = (0..windows)
                        .map(|w| chars.lengths.iter().map(|&l| w <= l.saturating_sub(k)).collect())
                        .collect();
                    feats.push(conv1d_globalmaxpool(g, conv, &xs, Some(&ok))?);
                }
                g.concat(&feats)
            }
            CharMode::Rnn => {
                let mask: Vec<Vec<bool>> = (0..chars.pad_len)
                    .map(|p| chars.lengths.iter().map(|&l| p >= chars.pad_len - l).collect())
                    .collect();
                let mut layer_in = xs;
                let mut out = None;
                for (f, b) in &nodes.char_lstms {
                    let o = bilstm_sequence(g, f, b, &layer_in, &mask, RecurrentDropout::default())?;
                    layer_in = o.outputs.clone();
                    out = Some(o);
                }
                let o = out.expect("at least one char layer");
                g.concat(&[o.final_forward, o.final_backward])
            }
        }
    }

    /// Records the network on `g` and returns the emission node.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        nodes: &ModelNodes,
        batch: &FeatureBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<ForwardNodes> {
        let b = batch.size();
        let variant = self.config.char_variant;
        let char_per_step = match (variant.char_mode(), &batch.chars) {
            (None, _) => None,
            (Some(want), Some(chars)) if chars.mode == want => {
                let feat = self.char_features(g, nodes, chars)?;
                let mut offsets = Vec::with_capacity(b);
                let mut acc = 0;
                for &l in &batch.lengths {
                    offsets.push(acc);
                    acc += l;
                }
                let steps = (0..batch.max_len)
                    .map(|t| {
                        let rows: Vec<Option<usize>> = (0..b)
                            .map(|bi| (t < batch.lengths[bi]).then(|| offsets[bi] + t))
                            .collect();
                        g.gather_rows(feat, &rows)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(steps)
            }
            (Some(want), got) => {
                return Err(Error::InvalidArgument(format!(
                    "variant {} needs {want:?} character input, batch has {:?}",
                    variant.as_str(),
                    got.as_ref().map(|c| c.mode)
                )))
            }
        };

        let mut inputs = Vec::with_capacity(batch.max_len);
        for t in 0..batch.max_len {
            let w = g.constant(batch.words[t].clone());
            let c = g.constant(batch.casing[t].clone());
            let mut parts = vec![w, c];
            if let Some(steps) = &char_per_step {
                parts.push(steps[t]);
            }
            inputs.push(g.concat(&parts)?);
        }

        let train = mode == Mode::Train;
        let cells = self.config.token_lstm_cells;
        let mut xs = inputs.clone();
        if train && self.config.dropout > 0.0 {
            let m = dropout_mask(&[b, self.config.input_width()], self.config.dropout, rng)?;
            let m = g.constant(m);
            for x in &mut xs {
                *x = g.mul(*x, m)?;
            }
        }
        let rec = if train && self.config.recurrent_dropout > 0.0 {
            let rate = self.config.recurrent_dropout;
            let f = dropout_mask(&[b, cells], rate, rng)?;
            let bw = dropout_mask(&[b, cells], rate, rng)?;
            RecurrentDropout {
                forward: Some(g.constant(f)),
                backward: Some(g.constant(bw)),
            }
        } else {
            RecurrentDropout::default()
        };
        let out = bilstm_sequence(g, &nodes.token_fwd, &nodes.token_bwd, &xs, &batch.mask(), rec)?;
        let scores = out
            .outputs
            .iter()
            .map(|&h| dense(g, nodes.dense_w, nodes.dense_b, h))
            .collect::<Result<Vec<_>>>()?;
        let emissions = g.stack(&scores)?;
        Ok(ForwardNodes { emissions, inputs })
    }

    /// Mean CRF negative log-likelihood per sentence.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        nodes: &ModelNodes,
        batch: &FeatureBatch,
        gold: &[Vec<usize>],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        let fwd = self.forward_graph(g, nodes, batch, mode, rng)?;
        let total = batch_nll(g, nodes.crf, fwd.emissions, &batch.lengths, gold)?;
        Ok(g.scale(total, 1.0 / batch.size() as f64))
    }

    /// Label scores `[B, T, L]`.
    pub fn forward_emissions(&self, batch: &FeatureBatch, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g);
        let fwd = self.forward_graph(&mut g, &nodes, batch, mode, rng)?;
        let e = g.value(fwd.emissions);
        let (t, b, l) = (e.shape()[0], e.shape()[1], e.shape()[2]);
        let mut out = vec![0.0; t * b * l];
        for ti in 0..t {
            for bi in 0..b {
                let src = (ti * b + bi) * l;
                let dst = (bi * t + ti) * l;
                out[dst..dst + l].copy_from_slice(&e.data()[src..src + l]);
            }
        }
        Tensor::new(vec![b, t, l], out)
    }

    /// Label indices for a sentence's labels.
    pub fn label_indices<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| self.config.label_schema.index_of(l.as_ref()))
            .collect()
    }

    /// Most likely label sequence for one sentence.
    pub fn predict<S: AsRef<str>>(&self, store: &EmbeddingStore, tokens: &[S]) -> Result<Vec<String>> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot tag an empty sentence".into()));
        }
        Ok(self.predict_batch(store, &[tokens])?.pop().unwrap())
    }

    /// Tags several sentences, batched internally.
    pub fn predict_batch<S: AsRef<str>>(&self, store: &EmbeddingStore, sentences: &[&[S]]) -> Result<Vec<Vec<String>>> {
        const CHUNK: usize = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(CHUNK) {
            let batch = self.features(store, chunk)?;
            let em = self.forward_emissions(&batch, Mode::Eval, &mut rng)?;
            let (t_max, l) = (em.shape()[1], em.shape()[2]);
            for (bi, &len) in batch.lengths.iter().enumerate() {
                let start = bi * t_max * l;
                let rows = Tensor::new(vec![len, l], em.data()[start..start + len * l].to_vec())?;
                let (path, _) = viterbi_decode(&self.crf, &rows)?;
                out.push(path.into_iter().map(|i| self.labels()[i].clone()).collect());
            }
        }
        Ok(out)
    }

    /// Rounds every parameter to the nearest `f32`, the precision of the
    /// saved format, so that a saved and reloaded model behaves identically.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NerModel> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        NerModel::read_from(BufReader::new(file))
    }

    /// Loads a model and checks that it was trained for `schema`.
    pub fn load_for_schema(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<NerModel> {
        let m = NerModel::load(path)?;
        if &m.config.label_schema != schema {
            return Err(Error::ModelFormat(format!(
                "model was trained for label schema `{}`, expected `{}`",
                m.config.label_schema.name(),
                schema.name()
            )));
        }
        Ok(m)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let params: Vec<ParamHeader> = self
            .named_tensors()
            .into_iter()
            .map(|(name, t)| ParamHeader {
                name,
                shape: t.shape().to_vec(),
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            char_vocab: self.char_vocab.chars().iter().collect(),
            params,
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (name, t) in self.named_tensors() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<NerModel> {
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(match (magic.starts_with(b"MNER"), magic[5]) {
                (true, b'\n') => Error::ModelFormat(format!(
                    "unsupported model format version `{}` (expected 1)",
                    magic[4] as char
                )),
                _ => Error::ModelFormat("not a model file (bad magic)".into()),
            });
        }
        let header_len = read_u32(&mut r, "header length")? as usize;
        let mut json = vec![0u8; header_len];
        read_exact(&mut r, &mut json, "header")?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;
        let vocab = CharVocab::from_chars(header.char_vocab.chars());
        let mut model = build_model(header.config, vocab, 0)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let declared: Vec<(String, Vec<usize>)> = header.params.into_iter().map(|p| (p.name, p.shape)).collect();
        if declared != expected {
            return Err(Error::ModelFormat("parameter list does not match the configuration".into()));
        }
        for ((name, shape), t) in expected.into_iter().zip(model.tensors_mut()) {
            let len = read_u32(&mut r, &name)? as usize;
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf, &name)?;
            if buf != name.as_bytes() {
                return Err(Error::ModelFormat(format!("expected block `{name}`")));
            }
            let ndim = read_u32(&mut r, &name)? as usize;
            let dims = (0..ndim)
                .map(|_| read_u32(&mut r, &name).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != shape {
                return Err(Error::ModelFormat(format!("block `{name}` has shape {dims:?}, expected {shape:?}")));
            }
            let mut bytes = vec![0u8; 4 * t.len()];
            read_exact(&mut r, &mut bytes, &name)?;
            for (x, c) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::ModelFormat(e.to_string()))? != 0 {
            return Err(Error::ModelFormat("trailing data after last parameter block".into()));
        }
        Ok(model)
    }
}

const MAGIC: &[u8; 6] = b"MNER1\n";

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    char_vocab: String,
    params: Vec<ParamHeader>,
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::ModelFormat(format!("truncated model file while reading {what}")),
        _ => Error::ModelFormat(e.to_string()),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}
