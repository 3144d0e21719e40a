//! Reverse-mode autodiff on a flat, append-only tape of 2-D `f64` tensors.
//!
//! `backward` emits gradients as new tape nodes rather than raw arrays, so a
//! second `backward` over the extended tape differentiates through the first.
//! The critic's gradient-penalty term needs exactly that: the penalty is a
//! function of an input-gradient, and its own gradient with respect to the
//! critic weights is obtained by running backward twice.
//!
//! Tapes are short-lived: one optimizer step builds a tape, reads its
//! gradients, and drops it.

use std::rc::Rc;

use ndarray::{Array2, Axis};

pub type NodeId = usize;

type Blocks = Rc<[(usize, usize)]>;

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    /// `[m,n] + [1,n]` row broadcast.
    AddRow(NodeId, NodeId),
    /// `[m,n] * [1,n]` row broadcast.
    MulRow(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    /// Elementwise slope of leaky-relu; its own derivative is zero a.e.
    LeakyGate(NodeId),
    Tanh(NodeId),
    Sqrt(NodeId),
    /// Row softmax within each column block, zero outside all blocks.
    SoftmaxBlocks(NodeId, Blocks),
    /// Within each block every entry becomes the row sum over that block;
    /// zero outside. Linear and self-adjoint.
    BlockRowSum(NodeId, Blocks),
    SumAll(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    BroadcastFull(NodeId),
    BroadcastRows(NodeId),
    BroadcastCols(NodeId),
    /// Mean softmax cross-entropy of (logits, one-hot targets) -> [1,1].
    SoftmaxXent(NodeId, NodeId),
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax_blocks_value(x: &Array2<f64>, blocks: &[(usize, usize)]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for &(start, end) in blocks {
        for i in 0..x.nrows() {
            let mut max = f64::NEG_INFINITY;
            for j in start..end {
                max = max.max(x[[i, j]]);
            }
            let mut sum = 0.0;
            for j in start..end {
                let e = (x[[i, j]] - max).exp();
                out[[i, j]] = e;
                sum += e;
            }
            for j in start..end {
                out[[i, j]] /= sum;
            }
        }
    }
    out
}

fn block_row_sum_value(x: &Array2<f64>, blocks: &[(usize, usize)]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for &(start, end) in blocks {
        for i in 0..x.nrows() {
            let s: f64 = (start..end).map(|j| x[[i, j]]).sum();
            for j in start..end {
                out[[i, j]] = s;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id].value;
        (v.nrows(), v.ncols())
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a).1, self.shape(b).0, "matmul inner dims");
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "div shapes");
        let v = &self.nodes[a].value / &self.nodes[b].value;
        self.push(Op::Div(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value + c;
        self.push(Op::AddScalar(a), v)
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(b).0, 1, "add_row rhs must be [1,n]");
        assert_eq!(self.shape(a).1, self.shape(b).1, "add_row widths");
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(Op::AddRow(a, b), v)
    }

    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(b).0, 1, "mul_row rhs must be [1,n]");
        assert_eq!(self.shape(a).1, self.shape(b).1, "mul_row widths");
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(Op::MulRow(a, b), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    fn leaky_gate(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { slope });
        self.push(Op::LeakyGate(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn softmax_blocks(&mut self, a: NodeId, blocks: &[(usize, usize)]) -> NodeId {
        let blocks: Blocks = Rc::from(blocks);
        let v = softmax_blocks_value(&self.nodes[a].value, &blocks);
        self.push(Op::SoftmaxBlocks(a, blocks), v)
    }

    fn block_row_sum(&mut self, a: NodeId, blocks: Blocks) -> NodeId {
        let v = block_row_sum_value(&self.nodes[a].value, &blocks);
        self.push(Op::BlockRowSum(a, blocks), v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.sum();
        self.push(Op::SumAll(a), Array2::from_elem((1, 1), s))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(Op::SumRows(a), v)
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::SumCols(a), v)
    }

    pub fn broadcast_full(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.shape(a), (1, 1), "broadcast_full source must be [1,1]");
        let v = Array2::from_elem((rows, cols), self.nodes[a].value[[0, 0]]);
        self.push(Op::BroadcastFull(a), v)
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        assert_eq!(self.shape(a).0, 1, "broadcast_rows source must be [1,n]");
        let v = self.nodes[a]
            .value
            .broadcast((rows, self.shape(a).1))
            .expect("row broadcast")
            .to_owned();
        self.push(Op::BroadcastRows(a), v)
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> NodeId {
        assert_eq!(self.shape(a).1, 1, "broadcast_cols source must be [m,1]");
        let rows = self.shape(a).0;
        let mut v = Array2::zeros((rows, cols));
        for i in 0..rows {
            let x = self.nodes[a].value[[i, 0]];
            for j in 0..cols {
                v[[i, j]] = x;
            }
        }
        self.push(Op::BroadcastCols(a), v)
    }

    /// Mean of the per-row softmax cross-entropy between `logits` and a
    /// constant one-hot target matrix.
    pub fn softmax_xent(&mut self, logits: NodeId, onehot: NodeId) -> NodeId {
        assert_eq!(self.shape(logits), self.shape(onehot), "xent shapes");
        let z = &self.nodes[logits].value;
        let t = &self.nodes[onehot].value;
        let m = z.nrows() as f64;
        let mut total = 0.0;
        for (zr, tr) in z.rows().into_iter().zip(t.rows()) {
            let max = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + zr.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            let picked: f64 = zr.iter().zip(tr).map(|(&v, &w)| v * w).sum();
            total += lse - picked;
        }
        self.push(
            Op::SoftmaxXent(logits, onehot),
            Array2::from_elem((1, 1), total / m),
        )
    }

    /// Mean over all entries (used for critic means over `[m,1]` outputs).
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (m * n) as f64)
    }

    fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::SoftmaxXent(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::LeakyRelu(a, _)
            | Op::LeakyGate(a)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::SoftmaxBlocks(a, _)
            | Op::BlockRowSum(a, _)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastFull(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a) => vec![*a],
        }
    }

    /// Reverse pass from the scalar node `root`, returning one gradient node
    /// per target (zeros when the target does not influence the root). The
    /// gradients are ordinary tape nodes, so they can be composed further and
    /// differentiated again.
    pub fn backward(&mut self, root: NodeId, targets: &[NodeId]) -> Vec<NodeId> {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");

        // Only walk nodes that lie between a target and the root.
        let mut reaches = vec![false; root + 1];
        for &t in targets {
            assert!(t <= root, "targets must precede the root on the tape");
            reaches[t] = true;
        }
        for id in 0..=root {
            if !reaches[id] {
                reaches[id] = self.inputs(id).iter().any(|&i| reaches[i]);
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; root + 1];
        adjoint[root] = Some(self.leaf(Array2::ones((1, 1))));

        for id in (0..=root).rev() {
            if !reaches[id] {
                continue;
            }
            let Some(g) = adjoint[id] else { continue };
            let op = self.nodes[id].op.clone();
            let accumulate = |tape: &mut Tape, adjoint: &mut Vec<Option<NodeId>>, input: NodeId, contrib: NodeId| {
                adjoint[input] = Some(match adjoint[input] {
                    None => contrib,
                    Some(prev) => tape.add(prev, contrib),
                });
            };
            match op {
                Op::Leaf | Op::LeakyGate(_) => {}
                Op::MatMul(a, b) => {
                    if reaches[a] {
                        let bt = self.transpose(b);
                        let da = self.matmul(g, bt);
                        accumulate(self, &mut adjoint, a, da);
                    }
                    if reaches[b] {
                        let at = self.transpose(a);
                        let db = self.matmul(at, g);
                        accumulate(self, &mut adjoint, b, db);
                    }
                }
                Op::Transpose(a) => {
                    if reaches[a] {
                        let da = self.transpose(g);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::Add(a, b) => {
                    if reaches[a] {
                        accumulate(self, &mut adjoint, a, g);
                    }
                    if reaches[b] {
                        accumulate(self, &mut adjoint, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if reaches[a] {
                        accumulate(self, &mut adjoint, a, g);
                    }
                    if reaches[b] {
                        let db = self.scale(g, -1.0);
                        accumulate(self, &mut adjoint, b, db);
                    }
                }
                Op::Mul(a, b) => {
                    if reaches[a] {
                        let da = self.mul(g, b);
                        accumulate(self, &mut adjoint, a, da);
                    }
                    if reaches[b] {
                        let db = self.mul(g, a);
                        accumulate(self, &mut adjoint, b, db);
                    }
                }
                Op::Div(a, b) => {
                    if reaches[a] {
                        let da = self.div(g, b);
                        accumulate(self, &mut adjoint, a, da);
                    }
                    if reaches[b] {
                        let q = self.div(id, b); // a / b^2
                        let gq = self.mul(g, q);
                        let db = self.scale(gq, -1.0);
                        accumulate(self, &mut adjoint, b, db);
                    }
                }
                Op::Scale(a, c) => {
                    if reaches[a] {
                        let da = self.scale(g, c);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::AddScalar(a) => {
                    if reaches[a] {
                        accumulate(self, &mut adjoint, a, g);
                    }
                }
                Op::AddRow(a, b) => {
                    if reaches[a] {
                        accumulate(self, &mut adjoint, a, g);
                    }
                    if reaches[b] {
                        let db = self.sum_rows(g);
                        accumulate(self, &mut adjoint, b, db);
                    }
                }
                Op::MulRow(a, b) => {
                    if reaches[a] {
                        let da = self.mul_row(g, b);
                        accumulate(self, &mut adjoint, a, da);
                    }
                    if reaches[b] {
                        let ga = self.mul(g, a);
                        let db = self.sum_rows(ga);
                        accumulate(self, &mut adjoint, b, db);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    if reaches[a] {
                        let gate = self.leaky_gate(a, slope);
                        let da = self.mul(g, gate);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::Tanh(a) => {
                    if reaches[a] {
                        let yy = self.mul(id, id);
                        let neg = self.scale(yy, -1.0);
                        let sech2 = self.add_scalar(neg, 1.0);
                        let da = self.mul(g, sech2);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::Sqrt(a) => {
                    if reaches[a] {
                        let two_y = self.scale(id, 2.0);
                        let da = self.div(g, two_y);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::SoftmaxBlocks(a, blocks) => {
                    if reaches[a] {
                        let gy = self.mul(g, id);
                        let srow = self.block_row_sum(gy, blocks);
                        let inner = self.sub(g, srow);
                        let da = self.mul(id, inner);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::BlockRowSum(a, blocks) => {
                    if reaches[a] {
                        let da = self.block_row_sum(g, blocks);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::SumAll(a) => {
                    if reaches[a] {
                        let (m, n) = self.shape(a);
                        let da = self.broadcast_full(g, m, n);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::SumRows(a) => {
                    if reaches[a] {
                        let m = self.shape(a).0;
                        let da = self.broadcast_rows(g, m);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::SumCols(a) => {
                    if reaches[a] {
                        let n = self.shape(a).1;
                        let da = self.broadcast_cols(g, n);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::BroadcastFull(a) => {
                    if reaches[a] {
                        let da = self.sum_all(g);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::BroadcastRows(a) => {
                    if reaches[a] {
                        let da = self.sum_rows(g);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::BroadcastCols(a) => {
                    if reaches[a] {
                        let da = self.sum_cols(g);
                        accumulate(self, &mut adjoint, a, da);
                    }
                }
                Op::SoftmaxXent(z, onehot) => {
                    if reaches[z] {
                        let (m, c) = self.shape(z);
                        let probs = self.softmax_blocks(z, &[(0, c)]);
                        let diff = self.sub(probs, onehot);
                        let scaled = self.scale(diff, 1.0 / m as f64);
                        let gb = self.broadcast_full(g, m, c);
                        let dz = self.mul(gb, scaled);
                        accumulate(self, &mut adjoint, z, dz);
                    }
                }
            }
        }

        targets
            .iter()
            .map(|&t| match adjoint[t] {
                Some(g) => g,
                None => {
                    let (m, n) = self.shape(t);
                    self.leaf(Array2::zeros((m, n)))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;
    use rand::Rng;

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from(seed, &[]);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of a scalar function of one matrix input.
    fn finite_diff(
        x: &Array2<f64>,
        f: &dyn Fn(&Array2<f64>) -> f64,
        h: f64,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                grad[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
            }
        }
        grad
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = (a - b).mapv(f64::abs).sum();
        let norm = a.mapv(f64::abs).sum().max(1e-12);
        diff / norm
    }

    /// Gradcheck harness: builds the scalar twice, once on a tape for the
    /// analytic gradient and once per finite-difference probe.
    fn check_grad(x0: Array2<f64>, build: impl Fn(&mut Tape, NodeId) -> NodeId) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let grads = tape.backward(y, &[x]);
        let analytic = tape.value(grads[0]).clone();

        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xi = t.leaf(x.clone());
            let yi = build(&mut t, xi);
            t.value(yi)[[0, 0]]
        };
        let numeric = finite_diff(&x0, &f, 1e-6);
        assert!(
            rel_err(&numeric, &analytic) < 1e-6,
            "grad mismatch:\nanalytic {analytic:?}\nnumeric {numeric:?}"
        );
    }

    #[test]
    fn gradcheck_matmul_chain() {
        let w = randn(3, 2, 7);
        check_grad(randn(4, 3, 1), move |t, x| {
            let wn = t.leaf(w.clone());
            let y = t.matmul(x, wn);
            let y2 = t.tanh(y);
            t.sum_all(y2)
        });
    }

    #[test]
    fn gradcheck_weight_side_of_matmul() {
        let x = randn(5, 3, 2);
        check_grad(randn(3, 2, 3), move |t, w| {
            let xn = t.leaf(x.clone());
            let y = t.matmul(xn, w);
            t.sum_all(y)
        });
    }

    #[test]
    fn gradcheck_bias_broadcast() {
        let x = randn(4, 3, 5);
        check_grad(randn(1, 3, 6), move |t, b| {
            let xn = t.leaf(x.clone());
            let y = t.add_row(xn, b);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
    }

    #[test]
    fn gradcheck_leaky_relu_away_from_kink() {
        // keep inputs away from 0 so finite differences stay valid
        let mut x = randn(4, 4, 8);
        x.mapv_inplace(|v| if v.abs() < 0.2 { v + 0.5 } else { v });
        check_grad(x, |t, x| {
            let y = t.leaky_relu(x, 0.2);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
    }

    #[test]
    fn gradcheck_softmax_blocks() {
        check_grad(randn(3, 5, 9), |t, x| {
            let s = t.softmax_blocks(x, &[(0, 3), (3, 5)]);
            let w = t.leaf(randn(3, 5, 10));
            let p = t.mul(s, w);
            t.sum_all(p)
        });
    }

    #[test]
    fn gradcheck_sqrt_norm() {
        let x0 = randn(4, 3, 11).mapv(|v| v + 3.0); // positive, away from 0
        check_grad(x0, |t, x| {
            let sq = t.mul(x, x);
            let rows = t.sum_cols(sq);
            let norm = t.sqrt(rows);
            let d = t.add_scalar(norm, -1.0);
            let p = t.mul(d, d);
            t.sum_all(p)
        });
    }

    #[test]
    fn gradcheck_div() {
        let b = randn(3, 3, 12).mapv(|v| v + 2.5);
        check_grad(randn(3, 3, 13), move |t, x| {
            let bn = t.leaf(b.clone());
            let y = t.div(x, bn);
            t.sum_all(y)
        });
    }

    #[test]
    fn gradcheck_div_denominator() {
        let a = randn(3, 3, 14);
        check_grad(randn(3, 3, 15).mapv(|v| v + 2.5), move |t, x| {
            let an = t.leaf(a.clone());
            let y = t.div(an, x);
            t.sum_all(y)
        });
    }

    #[test]
    fn gradcheck_softmax_xent() {
        let mut onehot = Array2::zeros((4, 3));
        for (i, c) in [0usize, 2, 1, 0].iter().enumerate() {
            onehot[[i, *c]] = 1.0;
        }
        check_grad(randn(4, 3, 16), move |t, z| {
            let oh = t.leaf(onehot.clone());
            t.softmax_xent(z, oh)
        });
    }

    #[test]
    fn gradcheck_mul_row_both_sides() {
        let m = randn(1, 4, 17);
        check_grad(randn(3, 4, 18), move |t, x| {
            let mn = t.leaf(m.clone());
            let y = t.mul_row(x, mn);
            t.sum_all(y)
        });
        let a = randn(3, 4, 19);
        check_grad(randn(1, 4, 20), move |t, m| {
            let an = t.leaf(a.clone());
            let y = t.mul_row(an, m);
            let y2 = t.mul(y, y);
            t.sum_all(y2)
        });
    }

    /// Second-order check: the gradient of a function of a first-order
    /// gradient must match finite differences of that (first-order) quantity.
    #[test]
    fn double_backward_matches_finite_differences() {
        let x = randn(3, 2, 21);

        // phi(w) = sum over rows of (||d/dx sum(tanh(x w))||_2 - 1)^2
        let phi = |w: &Array2<f64>| -> f64 {
            let mut t = Tape::new();
            let wn = t.leaf(w.clone());
            let xn = t.leaf(x.clone());
            let y = t.matmul(xn, wn);
            let act = t.tanh(y);
            let s = t.sum_all(act);
            let gx = t.backward(s, &[xn])[0];
            let sq = t.mul(gx, gx);
            let rows = t.sum_cols(sq);
            let norm = t.sqrt(rows);
            let d = t.add_scalar(norm, -1.0);
            let pen = t.mul(d, d);
            let out = t.sum_all(pen);
            t.value(out)[[0, 0]]
        };

        let w0 = randn(2, 2, 22);
        let numeric = finite_diff(&w0, &phi, 1e-6);

        let mut t = Tape::new();
        let wn = t.leaf(w0.clone());
        let xn = t.leaf(x.clone());
        let y = t.matmul(xn, wn);
        let act = t.tanh(y);
        let s = t.sum_all(act);
        let gx = t.backward(s, &[xn])[0];
        let sq = t.mul(gx, gx);
        let rows = t.sum_cols(sq);
        let norm = t.sqrt(rows);
        let d = t.add_scalar(norm, -1.0);
        let pen = t.mul(d, d);
        let out = t.sum_all(pen);
        let grads = t.backward(out, &[wn]);
        let analytic = t.value(grads[0]).clone();

        assert!(
            rel_err(&numeric, &analytic) < 1e-5,
            "double backward mismatch:\nanalytic {analytic:?}\nnumeric {numeric:?}"
        );
    }

    #[test]
    fn unreachable_target_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(randn(2, 2, 23));
        let b = t.leaf(randn(2, 2, 24));
        let s = t.sum_all(a);
        let grads = t.backward(s, &[b]);
        assert_eq!(t.value(grads[0]), &Array2::<f64>::zeros((2, 2)));
    }
}
