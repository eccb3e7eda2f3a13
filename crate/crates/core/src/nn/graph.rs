//! Tape-style reverse-mode automatic differentiation over [`Tensor2`] values.
//!
//! Nodes are appended in evaluation order and may only read earlier nodes, so
//! the node list is its own topological order. [`Graph::backward`] walks it in
//! reverse.

use std::sync::Arc;

use super::kernels::{self, AttentionProbs, NormStats, SeqLayout};
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulBt(NodeId, NodeId),
    /// `x · w + b` with `b` broadcast over rows.
    Linear(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        stats: NormStats<T>,
    },
    Attention {
        qkv: NodeId,
        layout: Arc<SeqLayout>,
        n_heads: usize,
        probs: AttentionProbs<T>,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    SoftmaxRows(NodeId),
    /// Mean cross-entropy of row-wise softmax against target column indices.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(NodeId),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Linear(x, w, b) => vec![*x, *w, *b],
            Op::Scale(a, _) | Op::Gelu(a) | Op::SoftmaxRows(a) | Op::Sum(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Attention { qkv, .. } => vec![*qkv],
            Op::Gather { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor2<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor2<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros of `shape` when `id` did not influence the loss.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: (usize, usize)) -> Tensor2<T> {
        self.grads
            .get_mut(id.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor2::zeros(shape.0, shape.1))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2<T> {
        &self.nodes[id.0].value
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor2<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A constant leaf; no gradient is accumulated for it.
    pub fn input(&mut self, value: Tensor2<T>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    fn push(&mut self, op: Op<T>, value: Tensor2<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, op: Op<T>, value: Tensor2<T>) -> NodeId {
        let rg = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(op, value, rg)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} · {k2}x{n}")));
        }
        let mut out = Tensor2::zeros(m, n);
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, out.data_mut());
        Ok(self.derived(Op::MatMul(a, b), out))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul_bt {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = Tensor2::zeros(m, n);
        kernels::matmul_a_bt(self.value(a).data(), self.value(b).data(), m, k, n, out.data_mut());
        Ok(self.derived(Op::MatMulBt(a, b), out))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(x);
        let (k2, n) = self.shape(w);
        if k != k2 || self.shape(b) != (1, n) {
            return Err(Error::Shape(format!(
                "linear {m}x{k} · {k2}x{n} + {:?}",
                self.shape(b)
            )));
        }
        let mut out = Tensor2::zeros(m, n);
        kernels::matmul(self.value(x).data(), self.value(w).data(), m, k, n, out.data_mut());
        kernels::add_row_bias(out.data_mut(), self.value(b).data());
        Ok(self.derived(Op::Linear(x, w, b), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.derived(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let (r, c) = self.shape(a);
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let out = Tensor2::from_vec(r, c, va.iter().zip(vb).map(|(&x, &y)| x * y).collect())?;
        Ok(self.derived(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let out = self.value(a).map(|x| x * s);
        self.derived(Op::Scale(a, s), out)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(kernels::gelu);
        self.derived(Op::Gelu(a), out)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(Error::Shape(format!("layer_norm over {c} columns")));
        }
        let mut out = Tensor2::zeros(r, c);
        let stats = kernels::layer_norm(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            c,
            out.data_mut(),
        );
        Ok(self.derived(Op::LayerNorm { x, gain, bias, stats }, out))
    }

    pub fn causal_attention(
        &mut self,
        qkv: NodeId,
        layout: Arc<SeqLayout>,
        n_heads: usize,
    ) -> Result<NodeId> {
        let (r, c) = self.shape(qkv);
        if c % 3 != 0 || (c / 3) % n_heads != 0 || r != layout.total_rows() {
            return Err(Error::Shape(format!(
                "attention over {r}x{c} with {n_heads} heads and {} rows in layout",
                layout.total_rows()
            )));
        }
        let d = c / 3;
        let mut out = Tensor2::zeros(r, d);
        let probs = kernels::causal_attention(self.value(qkv).data(), &layout, d, n_heads, out.data_mut());
        Ok(self.derived(
            Op::Attention {
                qkv,
                layout,
                n_heads,
                probs,
            },
            out,
        ))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        let (r, c) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::TokenOutOfRange { id: bad, vocab: r });
        }
        let t = self.value(table);
        let mut out = Tensor2::zeros(ids.len(), c);
        for (o, &i) in ids.iter().enumerate() {
            out.row_mut(o).copy_from_slice(t.row(i));
        }
        Ok(self.derived(Op::Gather { table, ids }, out))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let out = super::softmax_rows(self.value(a))?;
        Ok(self.derived(Op::SoftmaxRows(a), out))
    }

    /// Mean over rows of `-ln softmax(logits)[row, target]`; a 1×1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return Err(Error::Shape(format!("{} targets for {r} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::TokenOutOfRange { id: bad, vocab: c });
        }
        let mut probs = self.value(logits).data().to_vec();
        kernels::softmax_rows_in_place(&mut probs, c);
        let mut loss = T::zero();
        for (row, &t) in targets.iter().enumerate() {
            loss -= probs[row * c + t].max(T::min_positive_value()).ln();
        }
        loss /= T::lit(r as f64);
        Ok(self.derived(
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            Tensor2::filled(1, 1, loss),
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.derived(Op::Sum(a), Tensor2::filled(1, 1, s))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Checks that every node only reads earlier nodes.
    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            for p in node.op.parents() {
                if p.0 >= i {
                    return Err(Error::CyclicGraph { node: i, parent: p.0 });
                }
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`. `d loss / d loss = 1`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.validate()?;
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Tensor2<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor2<T>, grads: &mut [Option<Tensor2<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.wants(*a) {
                    let mut ga = Tensor2::zeros(m, k);
                    kernels::matmul_a_bt(g.data(), self.value(*b).data(), m, n, k, ga.data_mut());
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor2::zeros(k, n);
                    kernels::matmul_at_b_acc(self.value(*a).data(), g.data(), m, k, n, gb.data_mut());
                    accumulate(grads, *b, gb);
                }
            }
            Op::MatMulBt(a, b) => {
                // out = a·bᵀ ; da = g·b ; db = gᵀ·a
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).0;
                if self.wants(*a) {
                    let mut ga = Tensor2::zeros(m, k);
                    kernels::matmul(g.data(), self.value(*b).data(), m, n, k, ga.data_mut());
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor2::zeros(n, k);
                    kernels::matmul_at_b_acc(g.data(), self.value(*a).data(), m, n, k, gb.data_mut());
                    accumulate(grads, *b, gb);
                }
            }
            Op::Linear(x, w, b) => {
                let (m, k) = self.shape(*x);
                let n = self.shape(*w).1;
                if self.wants(*x) {
                    let mut gx = Tensor2::zeros(m, k);
                    kernels::matmul_a_bt(g.data(), self.value(*w).data(), m, n, k, gx.data_mut());
                    accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = Tensor2::zeros(k, n);
                    kernels::matmul_at_b_acc(self.value(*x).data(), g.data(), m, k, n, gw.data_mut());
                    accumulate(grads, *w, gw);
                }
                if self.wants(*b) {
                    let mut gb = Tensor2::zeros(1, n);
                    for row in g.data().chunks_exact(n) {
                        kernels::axpy(T::one(), row, gb.data_mut());
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if self.wants(p) {
                        accumulate(grads, p, g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.wants(*a) {
                    let ga = elementwise(g, vb, |x, y| x * y);
                    accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = elementwise(g, va, |x, y| x * y);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    let s = *s;
                    accumulate(grads, *a, g.map(|x| x * s));
                }
            }
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let ga = elementwise(g, self.value(*a), |gv, x| gv * kernels::gelu_grad(x));
                    accumulate(grads, *a, ga);
                }
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let (rows, cols) = self.shape(*x);
                let xv = self.value(*x).data();
                let gamma = self.value(*gain).data();
                let gd = g.data();
                let n = T::lit(cols as f64);
                let mut gx = Tensor2::zeros(rows, cols);
                let mut ggain = Tensor2::zeros(1, cols);
                let mut gbias = Tensor2::zeros(1, cols);
                let mut xhat = vec![T::zero(); cols];
                let mut dxhat = vec![T::zero(); cols];
                for r in 0..rows {
                    let mean = stats.mean[r];
                    let rstd = stats.rstd[r];
                    let xr = &xv[r * cols..(r + 1) * cols];
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..cols {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gamma[j];
                        sum_d += dxhat[j];
                        sum_dx += dxhat[j] * xhat[j];
                        ggain.data_mut()[j] += gr[j] * xhat[j];
                        gbias.data_mut()[j] += gr[j];
                    }
                    let out = gx.row_mut(r);
                    for j in 0..cols {
                        out[j] = rstd * (dxhat[j] - sum_d / n - xhat[j] * sum_dx / n);
                    }
                }
                if self.wants(*x) {
                    accumulate(grads, *x, gx);
                }
                if self.wants(*gain) {
                    accumulate(grads, *gain, ggain);
                }
                if self.wants(*bias) {
                    accumulate(grads, *bias, gbias);
                }
            }
            Op::Attention {
                qkv,
                layout,
                n_heads,
                probs,
            } => {
                if self.wants(*qkv) {
                    let (r, c) = self.shape(*qkv);
                    let mut gq = Tensor2::zeros(r, c);
                    kernels::causal_attention_backward(
                        self.value(*qkv).data(),
                        probs,
                        g.data(),
                        layout,
                        c / 3,
                        *n_heads,
                        gq.data_mut(),
                    );
                    accumulate(grads, *qkv, gq);
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let (r, c) = self.shape(*table);
                    let mut gt = Tensor2::zeros(r, c);
                    for (o, &i) in ids.iter().enumerate() {
                        kernels::axpy(T::one(), g.row(o), gt.row_mut(i));
                    }
                    accumulate(grads, *table, gt);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut ga = Tensor2::zeros(y.rows(), cols);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dotv = kernels::dot(yr, gr);
                        for (o, (&yv, &gv)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dotv);
                        }
                    }
                    accumulate(grads, *a, ga);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.wants(*logits) {
                    let (r, c) = self.shape(*logits);
                    let scale = g.get(0, 0) / T::lit(r as f64);
                    let mut gl = Tensor2::from_vec(r, c, probs.clone()).expect("cached shape");
                    for (row, &t) in targets.iter().enumerate() {
                        let v = gl.get(row, t);
                        gl.set(row, t, v - T::one());
                    }
                    let gl = gl.map(|x| x * scale);
                    accumulate(grads, *logits, gl);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let (r, c) = self.shape(*a);
                    accumulate(grads, *a, Tensor2::filled(r, c, g.get(0, 0)));
                }
            }
        }
    }
}

fn elementwise<T: Scalar>(a: &Tensor2<T>, b: &Tensor2<T>, f: impl Fn(T, T) -> T) -> Tensor2<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("matching shapes")
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor2<T>>], id: NodeId, g: Tensor2<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
