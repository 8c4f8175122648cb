//! Parameterized layers built on the autodiff graph.
//!
//! All layers work on batches: a "vector" input is a `[B, dim]` node
//! holding one row per batch element. Weight matrices use the row-vector
//! convention, so a dense layer computes `x · W + b` with `W: [in, out]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Glorot-uniform matrix `[fan_in, fan_out]`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

/// `[rows, cols]` matrix whose rows (if `rows <= cols`) or columns are
/// orthonormal, via Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vs.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= d * b;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            vs.push(v);
        }
    }
    let mut t = Tensor::zeros(&[rows, cols]);
    for (i, v) in vs.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            if rows <= cols {
                t.set2(i, j, x);
            } else {
                t.set2(j, i, x);
            }
        }
    }
    t
}

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// LSTM weights. Gates are laid out in the order
/// (input, forget, cell candidate, output) along the `4 · cells` axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_recurrent: Tensor,
    pub bias: Tensor,
    pub cells: usize,
}

impl LstmParams {
    /// Glorot input weights, orthogonal recurrent weights, zero bias
    /// except a forget-gate bias of 1.
    pub fn new(input_dim: usize, cells: usize, rng: &mut impl Rng) -> Self {
        let mut bias = Tensor::zeros(&[4 * cells]);
        bias.data_mut()[cells..2 * cells].fill(1.0);
        LstmParams {
            w_input: glorot_uniform(input_dim, 4 * cells, rng),
            w_recurrent: orthogonal(cells, 4 * cells, rng),
            bias,
            cells,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph) -> LstmNodes {
        LstmNodes {
            w_input: g.param(self.w_input.clone()),
            w_recurrent: g.param(self.w_recurrent.clone()),
            bias: g.param(self.bias.clone()),
            cells: self.cells,
        }
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w_input, &self.w_recurrent, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_input, &mut self.w_recurrent, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub w_input: NodeId,
    pub w_recurrent: NodeId,
    pub bias: NodeId,
    pub cells: usize,
}

impl LstmNodes {
    pub fn ids(&self) -> [NodeId; 3] {
        [self.w_input, self.w_recurrent, self.bias]
    }
}

/// One LSTM step over a batch.
///
/// `rec_mask`, when given, multiplies `h_prev` before the recurrent product
/// only; the carried state is left untouched.
pub fn lstm_cell_step(
    g: &mut Graph,
    p: &LstmNodes,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    rec_mask: Option<NodeId>,
) -> Result<(NodeId, NodeId)> {
    let h = p.cells;
    let h_in = match rec_mask {
        Some(m) => g.mul(h_prev, m)?,
        None => h_prev,
    };
    let xw = g.matmul(x_t, p.w_input)?;
    let hw = g.matmul(h_in, p.w_recurrent)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add(pre, p.bias)?;
    let i_pre = g.slice(pre, 0, h)?;
    let f_pre = g.slice(pre, h, h)?;
    let c_pre = g.slice(pre, 2 * h, h)?;
    let o_pre = g.slice(pre, 3 * h, h)?;
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let cand = g.tanh(c_pre);
    let o = g.sigmoid(o_pre);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c);
    let h_t = g.mul(o, c_act)?;
    Ok((h_t, c))
}

/// Per-sequence recurrent dropout masks for the two directions.
#[derive(Clone, Copy, Debug, Default)]
pub struct RecurrentDropout {
    pub forward: Option<NodeId>,
    pub backward: Option<NodeId>,
}

/// Result of running a BiLSTM over a sequence.
#[derive(Clone, Debug)]
pub struct BiLstmOutput {
    /// One `[B, 2 · cells]` node per position: forward and backward hidden
    /// states concatenated, zero at masked positions.
    pub outputs: Vec<NodeId>,
    /// Forward state after the last unmasked position.
    pub final_forward: NodeId,
    /// Backward state after the first unmasked position.
    pub final_backward: NodeId,
}

fn run_direction(
    g: &mut Graph,
    p: &LstmNodes,
    xs: &[NodeId],
    masks: &[Option<(NodeId, NodeId)>],
    order: impl Iterator<Item = usize>,
    rec_mask: Option<NodeId>,
) -> Result<(Vec<Option<NodeId>>, NodeId)> {
    let batch = g.shape(xs[0])[0];
    let mut h = g.constant(Tensor::zeros(&[batch, p.cells]));
    let mut c = g.constant(Tensor::zeros(&[batch, p.cells]));
    let mut outs = vec![None; xs.len()];
    for t in order {
        let (h_new, c_new) = lstm_cell_step(g, p, xs[t], h, c, rec_mask)?;
        match masks[t] {
            None => {
                outs[t] = Some(h_new);
                h = h_new;
                c = c_new;
            }
            Some((keep, hold)) => {
                let out = g.mul(h_new, keep)?;
                outs[t] = Some(out);
                let h_hold = g.mul(h, hold)?;
                h = g.add(out, h_hold)?;
                let c_keep = g.mul(c_new, keep)?;
                let c_hold = g.mul(c, hold)?;
                c = g.add(c_keep, c_hold)?;
            }
        }
    }
    Ok((outs, h))
}

/// Bidirectional LSTM over `xs` (each `[B, input_dim]`).
///
/// `mask[t][b]` marks real positions. Masked positions neither advance the
/// state nor emit output, so the backward direction effectively starts at
/// the last real element of each row.
pub fn bilstm_sequence(
    g: &mut Graph,
    fwd: &LstmNodes,
    bwd: &LstmNodes,
    xs: &[NodeId],
    mask: &[Vec<bool>],
    dropout: RecurrentDropout,
) -> Result<BiLstmOutput> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("bilstm over an empty sequence".into()));
    }
    if mask.len() != xs.len() {
        return Err(Error::shape("bilstm", format!("{} mask steps", xs.len()), format!("{}", mask.len())));
    }
    let batch = g.shape(xs[0])[0];
    if fwd.cells != bwd.cells {
        return Err(Error::shape("bilstm", format!("{} backward cells", fwd.cells), format!("{}", bwd.cells)));
    }
    let cells = fwd.cells;
    let masks = mask
        .iter()
        .map(|m| -> Result<Option<(NodeId, NodeId)>> {
            if m.len() != batch {
                return Err(Error::shape("bilstm", format!("{batch} mask entries"), format!("{}", m.len())));
            }
            if m.iter().all(|&x| x) {
                return Ok(None);
            }
            let mut keep = Tensor::zeros(&[batch, cells]);
            let mut hold = Tensor::zeros(&[batch, cells]);
            for (b, &real) in m.iter().enumerate() {
                let row = if real { keep.row_mut(b) } else { hold.row_mut(b) };
                row.fill(1.0);
            }
            Ok(Some((g.constant(keep), g.constant(hold))))
        })
        .collect::<Result<Vec<_>>>()?;

    let (f_out, f_final) = run_direction(g, fwd, xs, &masks, 0..xs.len(), dropout.forward)?;
    let (b_out, b_final) = run_direction(g, bwd, xs, &masks, (0..xs.len()).rev(), dropout.backward)?;
    let outputs = f_out
        .into_iter()
        .zip(b_out)
        .map(|(f, b)| g.concat(&[f.unwrap(), b.unwrap()]))
        .collect::<Result<Vec<_>>>()?;
    Ok(BiLstmOutput {
        outputs,
        final_forward: f_final,
        final_backward: b_final,
    })
}

/// 1D convolution weights: `kernels` is `[kernel_size, in_dim, filters]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1dParams {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub kernel_size: usize,
    pub filters: usize,
}

impl Conv1dParams {
    pub fn new(kernel_size: usize, in_dim: usize, filters: usize, rng: &mut impl Rng) -> Self {
        let w = glorot_uniform(kernel_size * in_dim, filters, rng);
        Conv1dParams {
            kernels: w.reshape(vec![kernel_size, in_dim, filters]).expect("kernel shape"),
            bias: Tensor::zeros(&[filters]),
            kernel_size,
            filters,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph) -> Conv1dNodes {
        let flat = self
            .kernels
            .clone()
            .reshape(vec![self.kernel_size * self.in_dim(), self.filters])
            .expect("kernel shape");
        Conv1dNodes {
            kernels: g.param(flat),
            bias: g.param(self.bias.clone()),
            kernel_size: self.kernel_size,
        }
    }
}

/// Bound convolution; `kernels` is flattened to `[kernel_size · in_dim, filters]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1dNodes {
    pub kernels: NodeId,
    pub bias: NodeId,
    pub kernel_size: usize,
}

/// Valid convolution with ReLU followed by a per-filter max over windows.
///
/// `xs` holds one `[B, in_dim]` node per position. `window_ok[w][b]`, when
/// given, excludes window `w` of row `b` from the pooling; every row must
/// keep at least window 0.
pub fn conv1d_globalmaxpool(
    g: &mut Graph,
    p: &Conv1dNodes,
    xs: &[NodeId],
    window_ok: Option<&[Vec<bool>]>,
) -> Result<NodeId> {
    let k = p.kernel_size;
    if xs.len() < k {
        return Err(Error::InvalidArgument(format!(
            "convolution with kernel {k} over {} positions",
            xs.len()
        )));
    }
    let windows = xs.len() - k + 1;
    let mut acts = Vec::with_capacity(windows);
    for w in 0..windows {
        let win = g.concat(&xs[w..w + k])?;
        let pre = g.matmul(win, p.kernels)?;
        let pre = g.add(pre, p.bias)?;
        let mut act = g.relu(pre);
        if let Some(ok) = window_ok {
            let row_ok = &ok[w];
            if row_ok.iter().any(|&x| !x) {
                let shape = g.shape(act).to_vec();
                let mut offset = Tensor::zeros(&shape);
                for (b, &keep) in row_ok.iter().enumerate() {
                    if !keep {
                        offset.row_mut(b).fill(-1e9);
                    }
                }
                let off = g.constant(offset);
                act = g.add(act, off)?;
            }
        }
        acts.push(act);
    }
    let stacked = g.stack(&acts)?;
    g.max_over_axis(stacked, 0)
}

/// `x · W + b`, no activation.
pub fn dense(g: &mut Graph, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is `0` or `1 / (1 - rate)`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Result<Tensor> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = if rng.gen::<f64>() >= rate { keep } else { 0.0 };
    }
    Ok(t)
}

/// Inverted dropout. Identity in eval mode or when `rate == 0`.
pub fn dropout(g: &mut Graph, x: NodeId, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<NodeId> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.shape(x), rate, rng)?;
    let m = g.constant(mask);
    g.mul(x, m)
}

/// Lookup table with row 0 reserved for padding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Uniform `(-0.05, 0.05)` rows with a zero padding row.
    pub fn new(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut rows = Tensor::zeros(&[vocab_size, dim]);
        for x in rows.data_mut()[dim..].iter_mut() {
            *x = rng.gen_range(-0.05..0.05);
        }
        EmbeddingTable { rows, trainable: true }
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph) -> NodeId {
        if self.trainable {
            g.param(self.rows.clone())
        } else {
            g.constant(self.rows.clone())
        }
    }
}

/// Padding index: looked up as a zero row that never receives gradient.
pub const PAD_INDEX: usize = 0;

/// Looks up `indices` in a bound table (`[vocab, dim]`), returning
/// `[len, dim]`. Index [`PAD_INDEX`] yields the padding row without
/// routing gradient to it.
pub fn embed_lookup(g: &mut Graph, table: NodeId, indices: &[usize]) -> Result<NodeId> {
    let vocab = g.shape(table)[0];
    let rows = indices
        .iter()
        .map(|&i| {
            if i >= vocab {
                Err(Error::IndexOutOfRange { index: i, size: vocab })
            } else if i == PAD_INDEX {
                Ok(None)
            } else {
                Ok(Some(i))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    g.gather_rows(table, &rows)
}
