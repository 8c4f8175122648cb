use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use super::tensor::{gemm, gemm_strided, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable operator set.
///
/// Shape rules:
///
/// | operator | inputs | output |
/// |---|---|---|
/// | `MatMul` | `[m, k]`, `[k, n]` | `[m, n]` |
/// | `Add` | equal shapes, or `x` and a bias vector `[last_dim(x)]` | `shape(x)` |
/// | `Mul` | equal shapes | same |
/// | `ConcatLastAxis` | ≥ 1 inputs agreeing on all but the last axis | last axes summed |
/// | `Sigmoid`, `Tanh`, `Relu` | any | same |
/// | `Slice { start, len }` | `[.., d]` with `start + len <= d` | `[.., len]` |
/// | `MaxOverAxis { axis: 0 }` | `[p, ..rest]` | `[..rest]` |
/// | `Sum` | any | scalar `[]` |
/// | `Stack` | ≥ 1 inputs of equal shape `s` | `[n, ..s]` |
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operator {
    MatMul,
    Add,
    Mul,
    ConcatLastAxis,
    Sigmoid,
    Tanh,
    Relu,
    Slice { start: usize, len: usize },
    MaxOverAxis { axis: usize },
    Sum,
    Stack,
}

impl FromStr for Operator {
    type Err = Error;

    /// Parses tags such as `tanh`, `slice(2,3)` or `max_over_axis(0)`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.find('(') {
            Some(p) if s.ends_with(')') => (&s[..p], Some(&s[p + 1..s.len() - 1])),
            _ => (s, None),
        };
        let nums = |args: Option<&str>, n: usize| -> Result<Vec<usize>> {
            let v: Vec<usize> = args
                .unwrap_or("")
                .split(',')
                .map(|a| a.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::UnknownOp(s.to_string()))?;
            if v.len() != n {
                return Err(Error::UnknownOp(s.to_string()));
            }
            Ok(v)
        };
        let op = match (name, args) {
            ("matmul", None) => Operator::MatMul,
            ("add", None) => Operator::Add,
            ("mul_elementwise", None) => Operator::Mul,
            ("concat_last_axis", None) => Operator::ConcatLastAxis,
            ("sigmoid", None) => Operator::Sigmoid,
            ("tanh", None) => Operator::Tanh,
            ("relu", None) => Operator::Relu,
            ("sum", None) => Operator::Sum,
            ("stack", None) => Operator::Stack,
            ("slice", a) => {
                let v = nums(a, 2)?;
                Operator::Slice { start: v[0], len: v[1] }
            }
            ("max_over_axis", a) => Operator::MaxOverAxis { axis: nums(a, 1)?[0] },
            _ => return Err(Error::UnknownOp(s.to_string())),
        };
        Ok(op)
    }
}

/// Recorded operation with whatever the backward pass needs.
enum Op {
    Leaf,
    MatMul,
    Add { bias: bool },
    Mul,
    Concat { widths: Vec<usize> },
    Sigmoid,
    Tanh,
    Relu,
    Slice { start: usize },
    Max { argmax: Vec<usize> },
    Sum,
    Stack,
    Scale(f64),
    Gather { rows: Vec<Option<usize>> },
    /// Scalar-valued op whose local gradients were computed during the
    /// forward pass, one per parent.
    Fused { grads: Vec<Tensor> },
}

struct NodeData {
    value: Tensor,
    op: Op,
    parents: Vec<NodeId>,
    requires_grad: bool,
}

/// Define-by-run computation graph for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the insertion order is
/// already a topological order and the backward pass simply walks the
/// node list in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.len())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, Vec::new(), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, Vec::new(), false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    fn push(&mut self, value: Tensor, op: Op, parents: Vec<NodeId>, requires_grad: bool) -> NodeId {
        self.nodes.push(NodeData {
            value,
            op,
            parents,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: Vec<NodeId>) -> NodeId {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, parents, rg)
    }

    fn arity(op: &'static str, inputs: &[NodeId], n: usize) -> Result<()> {
        if inputs.len() != n {
            return Err(Error::shape(op, format!("{n} inputs"), format!("{} inputs", inputs.len())));
        }
        Ok(())
    }

    /// Applies a tagged operator to `inputs`.
    pub fn apply(&mut self, op: Operator, inputs: &[NodeId]) -> Result<NodeId> {
        match op {
            Operator::MatMul => {
                Self::arity("matmul", inputs, 2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Operator::Add => {
                Self::arity("add", inputs, 2)?;
                self.add(inputs[0], inputs[1])
            }
            Operator::Mul => {
                Self::arity("mul_elementwise", inputs, 2)?;
                self.mul(inputs[0], inputs[1])
            }
            Operator::ConcatLastAxis => self.concat(inputs),
            Operator::Sigmoid => {
                Self::arity("sigmoid", inputs, 1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            Operator::Tanh => {
                Self::arity("tanh", inputs, 1)?;
                Ok(self.tanh(inputs[0]))
            }
            Operator::Relu => {
                Self::arity("relu", inputs, 1)?;
                Ok(self.relu(inputs[0]))
            }
            Operator::Slice { start, len } => {
                Self::arity("slice", inputs, 1)?;
                self.slice(inputs[0], start, len)
            }
            Operator::MaxOverAxis { axis } => {
                Self::arity("max_over_axis", inputs, 1)?;
                self.max_over_axis(inputs[0], axis)
            }
            Operator::Sum => {
                Self::arity("sum", inputs, 1)?;
                Ok(self.sum(inputs[0]))
            }
            Operator::Stack => self.stack(inputs),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", "[m, k] x [k, n]", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), out.data_mut());
        Ok(self.derived(out, Op::MatMul, vec![a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bias = if sa == sb {
            false
        } else if sb.len() == 1 && sb[0] == self.value(a).last_dim() {
            true
        } else {
            return Err(Error::shape(
                "add",
                format!("{sa:?} or [{}]", self.value(a).last_dim()),
                format!("{sb:?}"),
            ));
        };
        let mut out = self.value(a).clone();
        if bias {
            let bv = self.value(b).data();
            for chunk in out.data_mut().chunks_mut(bv.len()) {
                for (x, y) in chunk.iter_mut().zip(bv) {
                    *x += y;
                }
            }
        } else {
            out.add_assign(self.value(b));
        }
        Ok(self.derived(out, Op::Add { bias }, vec![a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mul_elementwise", format!("{sa:?}"), format!("{sb:?}")));
        }
        let mut out = self.value(a).clone();
        for (x, y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        Ok(self.derived(out, Op::Mul, vec![a, b]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|x| x * c);
        self.derived(out, Op::Scale(c), vec![a])
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat_last_axis", "at least one input", "none"))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let s = self.shape(id);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat_last_axis",
                    format!("leading dims {lead:?}"),
                    format!("{s:?}"),
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &id in inputs {
                data.extend_from_slice(self.value(id).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::Concat { widths }, inputs.to_vec()))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.derived(out, Op::Sigmoid, vec![a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        self.derived(out, Op::Tanh, vec![a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.derived(out, Op::Relu, vec![a])
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        let w = v.last_dim();
        if v.shape().is_empty() || len == 0 || start + len > w {
            return Err(Error::shape(
                "slice",
                format!("start + len <= {w}, len > 0"),
                format!("start {start}, len {len}"),
            ));
        }
        let rows = v.outer_len();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::Slice { start }, vec![a]))
    }

    /// Maximum over the leading axis; ties resolve to the first position.
    pub fn max_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if axis != 0 || s.len() < 2 {
            return Err(Error::shape(
                "max_over_axis",
                "axis 0 of a tensor with rank >= 2",
                format!("axis {axis} of {s:?}"),
            ));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(a).data();
        let mut best = data[..inner].to_vec();
        let mut argmax = vec![0usize; inner];
        for p in 1..s[0] {
            let slab = &data[p * inner..(p + 1) * inner];
            for j in 0..inner {
                if slab[j] > best[j] {
                    best[j] = slab[j];
                    argmax[j] = p;
                }
            }
        }
        let out = Tensor::new(s[1..].to_vec(), best)?;
        Ok(self.derived(out, Op::Max { argmax }, vec![a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        self.derived(out, Op::Sum, vec![a])
    }

    pub fn stack(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("stack", "at least one input", "none"))?;
        let s = self.shape(first).to_vec();
        let mut data = Vec::with_capacity(inputs.len() * self.value(first).len());
        for &id in inputs {
            if self.shape(id) != s.as_slice() {
                return Err(Error::shape("stack", format!("{s:?}"), format!("{:?}", self.shape(id))));
            }
            data.extend_from_slice(self.value(id).data());
        }
        let mut shape = vec![inputs.len()];
        shape.extend_from_slice(&s);
        let out = Tensor::new(shape, data)?;
        Ok(self.derived(out, Op::Stack, inputs.to_vec()))
    }

    /// Selects rows of a matrix; `None` yields a zero row that routes no
    /// gradient. Repeated rows accumulate gradient.
    pub fn gather_rows(&mut self, table: NodeId, rows: &[Option<usize>]) -> Result<NodeId> {
        let v = self.value(table);
        if v.shape().len() != 2 {
            return Err(Error::shape("gather_rows", "[rows, dim]", format!("{:?}", v.shape())));
        }
        let (n, dim) = (v.shape()[0], v.shape()[1]);
        if rows.is_empty() {
            return Err(Error::shape("gather_rows", "at least one index", "none"));
        }
        let mut data = vec![0.0; rows.len() * dim];
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                if r >= n {
                    return Err(Error::IndexOutOfRange { index: r, size: n });
                }
                data[i * dim..(i + 1) * dim].copy_from_slice(v.row(r));
            }
        }
        let out = Tensor::new(vec![rows.len(), dim], data)?;
        Ok(self.derived(out, Op::Gather { rows: rows.to_vec() }, vec![table]))
    }

    /// Records a scalar-valued operation whose gradient with respect to
    /// each parent has already been computed.
    pub fn fused_scalar(&mut self, value: f64, parents: Vec<NodeId>, grads: Vec<Tensor>) -> Result<NodeId> {
        if parents.len() != grads.len() {
            return Err(Error::shape(
                "fused_scalar",
                format!("{} gradients", parents.len()),
                format!("{}", grads.len()),
            ));
        }
        for (p, g) in parents.iter().zip(&grads) {
            if self.shape(*p) != g.shape() {
                return Err(Error::shape(
                    "fused_scalar",
                    format!("{:?}", self.shape(*p)),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        Ok(self.derived(Tensor::scalar(value), Op::Fused { grads }, parents))
    }

    /// Fingerprint of every non-differentiable decision taken in the
    /// forward pass: relu input signs and max-pooling winners. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu => {
                    let input = &self.nodes[node.parents[0].0].value;
                    for &x in input.data() {
                        (x > 0.0).hash(&mut h);
                    }
                }
                Op::Max { argmax } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(rv.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                let contribs = self.local_grads(node, &g);
                for (p, pg) in node.parents.iter().zip(contribs) {
                    if let Some(pg) = pg {
                        match &mut grads[p.0] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        // Constants keep no gradient.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &NodeData, g: &Tensor) -> Vec<Option<Tensor>> {
        let want = |k: usize| self.nodes[node.parents[k].0].requires_grad;
        let val = |k: usize| &self.nodes[node.parents[k].0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let ga = want(0).then(|| {
                    // g [m,n] · bᵀ [n,k]
                    let mut out = Tensor::zeros(&[m, k]);
                    gemm_strided(m, n, k, g.data(), (n as isize, 1), b.data(), (1, n as isize), out.data_mut(), 0.0);
                    out
                });
                let gb = want(1).then(|| {
                    // aᵀ [k,m] · g [m,n]
                    let mut out = Tensor::zeros(&[k, n]);
                    gemm_strided(k, m, n, a.data(), (1, k as isize), g.data(), (n as isize, 1), out.data_mut(), 0.0);
                    out
                });
                vec![ga, gb]
            }
            Op::Add { bias } => {
                let ga = want(0).then(|| g.clone());
                let gb = want(1).then(|| {
                    if *bias {
                        let w = g.last_dim();
                        let mut acc = vec![0.0; w];
                        for chunk in g.data().chunks(w) {
                            for (a, x) in acc.iter_mut().zip(chunk) {
                                *a += x;
                            }
                        }
                        Tensor::vector(acc)
                    } else {
                        g.clone()
                    }
                });
                vec![ga, gb]
            }
            Op::Mul => {
                let prod = |other: &Tensor| {
                    let mut out = g.clone();
                    for (x, y) in out.data_mut().iter_mut().zip(other.data()) {
                        *x *= y;
                    }
                    out
                };
                vec![want(0).then(|| prod(val(1))), want(1).then(|| prod(val(0)))]
            }
            Op::Scale(c) => vec![want(0).then(|| g.map(|x| x * c))],
            Op::Concat { widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                let mut out = Vec::with_capacity(widths.len());
                for (k, &w) in widths.iter().enumerate() {
                    if want(k) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        out.push(Some(Tensor::new(val(k).shape().to_vec(), data).expect("concat grad")));
                    } else {
                        out.push(None);
                    }
                    offset += w;
                }
                out
            }
            Op::Sigmoid => {
                let y = &node.value;
                vec![want(0).then(|| zip_map(g, y, |g, y| g * y * (1.0 - y)))]
            }
            Op::Tanh => {
                let y = &node.value;
                vec![want(0).then(|| zip_map(g, y, |g, y| g * (1.0 - y * y)))]
            }
            Op::Relu => vec![want(0).then(|| zip_map(g, val(0), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Slice { start } => vec![want(0).then(|| {
                let input = val(0);
                let (w, len) = (input.last_dim(), g.last_dim());
                let mut out = Tensor::zeros(input.shape());
                for r in 0..input.outer_len() {
                    out.data_mut()[r * w + start..r * w + start + len].copy_from_slice(g.row(r));
                }
                out
            })],
            Op::Max { argmax } => vec![want(0).then(|| {
                let input = val(0);
                let inner = argmax.len();
                let mut out = Tensor::zeros(input.shape());
                for (j, &p) in argmax.iter().enumerate() {
                    out.data_mut()[p * inner + j] = g.data()[j];
                }
                out
            })],
            Op::Sum => vec![want(0).then(|| Tensor::filled(val(0).shape(), g.item()))],
            Op::Stack => {
                let n = node.parents.len();
                let chunk = g.len() / n;
                (0..n)
                    .map(|k| {
                        want(k).then(|| {
                            Tensor::new(val(k).shape().to_vec(), g.data()[k * chunk..(k + 1) * chunk].to_vec())
                                .expect("stack grad")
                        })
                    })
                    .collect()
            }
            Op::Gather { rows } => vec![want(0).then(|| {
                let table = val(0);
                let mut out = Tensor::zeros(table.shape());
                for (i, r) in rows.iter().enumerate() {
                    if let Some(r) = *r {
                        for (o, x) in out.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                }
                out
            })],
            Op::Fused { grads } => {
                let s = g.item();
                grads
                    .iter()
                    .enumerate()
                    .map(|(k, local)| want(k).then(|| local.map(|x| x * s)))
                    .collect()
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shapes")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`; `None` for constants and
    /// nodes the root does not depend on.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materializes zeros for unreached nodes.
    pub fn get_or_zeros(&self, graph: &Graph, id: NodeId) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(id)))
    }
}
