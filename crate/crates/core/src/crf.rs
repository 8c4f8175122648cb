//! Linear-chain CRF output layer.
//!
//! A label sequence `y` over emission scores `E[t, l]` scores
//!
//! ```text
//! score(y) = start[y₀] + Σₜ E[t, yₜ] + Σₜ trans[yₜ, yₜ₊₁] + end[y_{T-1}]
//! ```
//!
//! and the negative log-likelihood of the gold path is `log Z − score(gold)`,
//! with `log Z` from the forward recursion in log space. Exhaustive
//! enumeration oracles are provided for cross-checking small instances.
#![allow(clippy::needless_range_loop)]

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Transition, start and end scores for `L` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    /// `[L, L]`, entry `(i, j)` scores label `i` followed by label `j`.
    pub transitions: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

/// Gradients of the negative log-likelihood.
#[derive(Clone, Debug)]
pub struct CrfGrads {
    pub emissions: Tensor,
    pub transitions: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

/// Upper bound on `L^T` for the enumeration oracles.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

impl CrfParams {
    pub fn zeros(labels: usize) -> Self {
        CrfParams {
            transitions: Tensor::zeros(&[labels, labels]),
            start: Tensor::zeros(&[labels]),
            end: Tensor::zeros(&[labels]),
        }
    }

    pub fn random(labels: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = CrfParams::zeros(labels);
        for t in [&mut p.transitions, &mut p.start, &mut p.end] {
            for x in t.data_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
        p
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    fn trans(&self, i: usize, j: usize) -> f64 {
        self.transitions.get2(i, j)
    }

    fn check(&self, emissions: &Tensor) -> Result<(usize, usize)> {
        let l = self.num_labels();
        if self.transitions.shape() != [l, l] || self.end.len() != l {
            return Err(Error::shape(
                "crf",
                format!("transitions [{l}, {l}], end [{l}]"),
                format!("{:?}, {:?}", self.transitions.shape(), self.end.shape()),
            ));
        }
        let s = emissions.shape();
        if s.len() != 2 || s[1] != l {
            return Err(Error::shape("crf", format!("emissions [T, {l}]"), format!("{s:?}")));
        }
        if !emissions.all_finite() {
            return Err(Error::NonFinite("crf emissions".into()));
        }
        if !(self.transitions.all_finite() && self.start.all_finite() && self.end.all_finite()) {
            return Err(Error::NonFinite("crf parameters".into()));
        }
        Ok((s[0], l))
    }

    /// Score of one complete label path.
    pub fn path_score(&self, emissions: &Tensor, path: &[usize]) -> Result<f64> {
        let (t_len, l) = self.check(emissions)?;
        if path.len() != t_len {
            return Err(Error::shape("crf path", format!("{t_len} labels"), format!("{}", path.len())));
        }
        if let Some(&bad) = path.iter().find(|&&y| y >= l) {
            return Err(Error::IndexOutOfRange { index: bad, size: l });
        }
        let mut s = self.start.data()[path[0]] + self.end.data()[path[t_len - 1]];
        for (t, &y) in path.iter().enumerate() {
            s += emissions.get2(t, y);
            if t + 1 < t_len {
                s += self.trans(y, path[t + 1]);
            }
        }
        Ok(s)
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Forward log-messages `alpha[t][j]`: log-sum of all prefixes ending in `j`.
fn forward(params: &CrfParams, e: &Tensor, t_len: usize, l: usize) -> Vec<Vec<f64>> {
    let mut alpha = vec![vec![0.0; l]; t_len];
    for j in 0..l {
        alpha[0][j] = params.start.data()[j] + e.get2(0, j);
    }
    for t in 1..t_len {
        for j in 0..l {
            let prev = &alpha[t - 1];
            alpha[t][j] = logsumexp((0..l).map(|i| prev[i] + params.trans(i, j))) + e.get2(t, j);
        }
    }
    alpha
}

/// Backward log-messages `beta[t][i]`: log-sum of all suffixes after `i`.
fn backward(params: &CrfParams, e: &Tensor, t_len: usize, l: usize) -> Vec<Vec<f64>> {
    let mut beta = vec![vec![0.0; l]; t_len];
    beta[t_len - 1].copy_from_slice(params.end.data());
    for t in (0..t_len - 1).rev() {
        for i in 0..l {
            let next = &beta[t + 1];
            beta[t][i] = logsumexp((0..l).map(|j| params.trans(i, j) + e.get2(t + 1, j) + next[j]));
        }
    }
    beta
}

/// `log Z` by the forward algorithm.
pub fn log_partition(params: &CrfParams, emissions: &Tensor) -> Result<f64> {
    let (t_len, l) = params.check(emissions)?;
    let alpha = forward(params, emissions, t_len, l);
    Ok(logsumexp((0..l).map(|j| alpha[t_len - 1][j] + params.end.data()[j])))
}

/// Negative log-likelihood of `gold`.
pub fn negative_log_likelihood(params: &CrfParams, emissions: &Tensor, gold: &[usize]) -> Result<f64> {
    let log_z = log_partition(params, emissions)?;
    Ok(log_z - params.path_score(emissions, gold)?)
}

/// Negative log-likelihood and its gradients, from forward-backward
/// marginals: `∂/∂E[t, j] = P(yₜ = j) − [goldₜ = j]`.
pub fn nll_with_grads(params: &CrfParams, emissions: &Tensor, gold: &[usize]) -> Result<(f64, CrfGrads)> {
    let (t_len, l) = params.check(emissions)?;
    let gold_score = params.path_score(emissions, gold)?;
    let alpha = forward(params, emissions, t_len, l);
    let beta = backward(params, emissions, t_len, l);
    let log_z = logsumexp((0..l).map(|j| alpha[t_len - 1][j] + params.end.data()[j]));

    let mut g_e = Tensor::zeros(&[t_len, l]);
    let mut g_tr = Tensor::zeros(&[l, l]);
    let mut g_start = Tensor::zeros(&[l]);
    let mut g_end = Tensor::zeros(&[l]);
    for t in 0..t_len {
        for j in 0..l {
            let p = (alpha[t][j] + beta[t][j] - log_z).exp();
            g_e.set2(t, j, p);
            if t == 0 {
                g_start.data_mut()[j] = p;
            }
            if t == t_len - 1 {
                g_end.data_mut()[j] = p;
            }
        }
        if t + 1 < t_len {
            for i in 0..l {
                for j in 0..l {
                    let p = (alpha[t][i] + params.trans(i, j) + emissions.get2(t + 1, j) + beta[t + 1][j] - log_z).exp();
                    let cur = g_tr.get2(i, j);
                    g_tr.set2(i, j, cur + p);
                }
            }
        }
    }
    for (t, &y) in gold.iter().enumerate() {
        let cur = g_e.get2(t, y);
        g_e.set2(t, y, cur - 1.0);
        if t + 1 < t_len {
            let cur = g_tr.get2(y, gold[t + 1]);
            g_tr.set2(y, gold[t + 1], cur - 1.0);
        }
    }
    g_start.data_mut()[gold[0]] -= 1.0;
    g_end.data_mut()[gold[t_len - 1]] -= 1.0;

    Ok((
        log_z - gold_score,
        CrfGrads {
            emissions: g_e,
            transitions: g_tr,
            start: g_start,
            end: g_end,
        },
    ))
}

/// Highest-scoring path and its score. Among equal scores the lowest label
/// index wins at every backtrack step, starting from the final position.
pub fn viterbi_decode(params: &CrfParams, emissions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let (t_len, l) = params.check(emissions)?;
    let mut delta: Vec<f64> = (0..l).map(|j| params.start.data()[j] + emissions.get2(0, j)).collect();
    let mut back = vec![vec![0usize; l]; t_len];
    for t in 1..t_len {
        let mut next = vec![0.0; l];
        for j in 0..l {
            let mut best = 0;
            let mut best_score = delta[0] + params.trans(0, j);
            for i in 1..l {
                let s = delta[i] + params.trans(i, j);
                if s > best_score {
                    best_score = s;
                    best = i;
                }
            }
            back[t][j] = best;
            next[j] = best_score + emissions.get2(t, j);
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_score = delta[0] + params.end.data()[0];
    for j in 1..l {
        let s = delta[j] + params.end.data()[j];
        if s > best_score {
            best_score = s;
            last = j;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, best_score))
}

fn enumerate_paths(t_len: usize, l: usize) -> Result<impl Iterator<Item = Vec<usize>>> {
    if (l as f64).powi(t_len as i32) > BRUTE_FORCE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "brute force over {l}^{t_len} paths exceeds {BRUTE_FORCE_LIMIT}"
        )));
    }
    let total = l.pow(t_len as u32);
    Ok((0..total).map(move |mut code| {
        let mut path = vec![0; t_len];
        for slot in path.iter_mut().rev() {
            *slot = code % l;
            code /= l;
        }
        path
    }))
}

/// `log Z` by enumerating every path.
pub fn brute_force_log_z(params: &CrfParams, emissions: &Tensor) -> Result<f64> {
    let (t_len, l) = params.check(emissions)?;
    let scores = enumerate_paths(t_len, l)?
        .map(|p| params.path_score(emissions, &p))
        .collect::<Result<Vec<_>>>()?;
    Ok(logsumexp(scores.into_iter()))
}

/// Best path by enumeration, with ties resolved like [`viterbi_decode`]:
/// the smallest path when compared from the last position backwards.
pub fn brute_force_best_path(params: &CrfParams, emissions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let (t_len, l) = params.check(emissions)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for path in enumerate_paths(t_len, l)? {
        let s = params.path_score(emissions, &path)?;
        let better = match &best {
            None => true,
            Some((bp, bs)) => s > *bs || (s == *bs && path.iter().rev().lt(bp.iter().rev())),
        };
        if better {
            best = Some((path, s));
        }
    }
    Ok(best.expect("at least one path"))
}

/// Graph nodes for a bound set of CRF parameters.
#[derive(Clone, Copy, Debug)]
pub struct CrfNodes {
    pub transitions: NodeId,
    pub start: NodeId,
    pub end: NodeId,
}

/// Summed negative log-likelihood of a padded batch, recorded as a single
/// graph node.
///
/// `emissions` is `[T, B, L]` (time-major). Sentence `b` occupies the first
/// `lengths[b]` steps and `gold[b]` holds its label indices.
pub fn batch_nll(
    g: &mut Graph,
    crf: CrfNodes,
    emissions: NodeId,
    lengths: &[usize],
    gold: &[Vec<usize>],
) -> Result<NodeId> {
    let shape = g.shape(emissions).to_vec();
    if shape.len() != 3 || shape[1] != lengths.len() || gold.len() != lengths.len() {
        return Err(Error::shape(
            "crf batch_nll",
            format!("[T, {}, L]", lengths.len()),
            format!("{shape:?}"),
        ));
    }
    let (t_max, b_len, l) = (shape[0], shape[1], shape[2]);
    let params = CrfParams {
        transitions: g.value(crf.transitions).clone(),
        start: g.value(crf.start).clone(),
        end: g.value(crf.end).clone(),
    };
    let all = g.value(emissions);
    let mut g_e = Tensor::zeros(&shape);
    let mut g_tr = Tensor::zeros(&[l, l]);
    let mut g_start = Tensor::zeros(&[l]);
    let mut g_end = Tensor::zeros(&[l]);
    let mut total = 0.0;
    for b in 0..b_len {
        let len = lengths[b];
        if len == 0 || len > t_max || gold[b].len() != len {
            return Err(Error::InvalidArgument(format!(
                "sentence {b}: length {len}, {} gold labels, {t_max} steps",
                gold[b].len()
            )));
        }
        let mut rows = Vec::with_capacity(len * l);
        for t in 0..len {
            let off = (t * b_len + b) * l;
            rows.extend_from_slice(&all.data()[off..off + l]);
        }
        let em = Tensor::new(vec![len, l], rows)?;
        let (loss, grads) = nll_with_grads(&params, &em, &gold[b])?;
        total += loss;
        for t in 0..len {
            let off = (t * b_len + b) * l;
            g_e.data_mut()[off..off + l].copy_from_slice(grads.emissions.row(t));
        }
        g_tr.add_assign(&grads.transitions);
        g_start.add_assign(&grads.start);
        g_end.add_assign(&grads.end);
    }
    g.fused_scalar(
        total,
        vec![emissions, crf.transitions, crf.start, crf.end],
        vec![g_e, g_tr, g_start, g_end],
    )
}
