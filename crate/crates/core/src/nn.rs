//! Fully-connected network plumbing shared by the GAN and the classifier:
//! scaled-uniform initialization, tape and array forward passes, the encoded
//! output head (tanh on continuous slots, per-block softmax on categorical
//! blocks), cross-entropy gradients, and Adam.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::metadata::EncodingLayout;
use crate::seeding;
use crate::weights::{NamedTensor, WeightSet};

/// Negative-side slope of the hidden leaky-rectifier activations.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Output head applied after the last linear layer.
#[derive(Debug, Clone, Copy)]
pub enum Head<'a> {
    /// Raw logits / critic score.
    Linear,
    /// Generator head matching the encoded feature geometry.
    Encoded(&'a EncodingLayout),
}

/// Initialize an MLP with layer sizes `dims = [in, h1, ..., out]`. Weights
/// draw from U(-b, b) with b = sqrt(6 / (fan_in + fan_out)); biases start at
/// zero. Tensors are named `layer{i}.weight` ([in, out]) and `layer{i}.bias`
/// ([1, out]).
pub fn init_mlp(dims: &[usize], seed: u64) -> WeightSet {
    assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
    let mut rng = seeding::rng_from(seed, &[]);
    let mut tensors = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        tensors.push(NamedTensor {
            name: format!("layer{i}.weight"),
            array: weight,
        });
        tensors.push(NamedTensor {
            name: format!("layer{i}.bias"),
            array: Array2::zeros((1, fan_out)),
        });
    }
    WeightSet::new(tensors)
}

/// Input width of the first linear layer.
pub fn input_width(ws: &WeightSet) -> usize {
    ws.tensors()[0].array.nrows()
}

/// Output width of the last linear layer.
pub fn output_width(ws: &WeightSet) -> usize {
    ws.tensors()[ws.len() - 1].array.ncols()
}

/// Put every parameter tensor on the tape as a leaf, in set order.
pub fn params_on_tape(tape: &mut Tape, ws: &WeightSet) -> Vec<NodeId> {
    ws.tensors()
        .iter()
        .map(|t| tape.leaf(t.array.clone()))
        .collect()
}

fn encoded_head_masks(layout: &EncodingLayout) -> (Array2<f64>, Vec<(usize, usize)>) {
    let mut cont_mask = Array2::zeros((1, layout.width()));
    for off in layout.continuous_offsets() {
        cont_mask[[0, off]] = 1.0;
    }
    (cont_mask, layout.categorical_ranges())
}

/// Differentiable forward pass over parameter nodes laid out as
/// `[w0, b0, w1, b1, ...]`.
pub fn forward_tape(tape: &mut Tape, x: NodeId, params: &[NodeId], head: Head) -> NodeId {
    assert!(params.len() >= 2 && params.len() % 2 == 0);
    let n_layers = params.len() / 2;
    let mut h = x;
    for l in 0..n_layers {
        let z = tape.matmul(h, params[2 * l]);
        let z = tape.add_row(z, params[2 * l + 1]);
        h = if l + 1 < n_layers {
            tape.leaky_relu(z, LEAKY_SLOPE)
        } else {
            z
        };
    }
    match head {
        Head::Linear => h,
        Head::Encoded(layout) => {
            let (cont_mask, cat_blocks) = encoded_head_masks(layout);
            let mask = tape.leaf(cont_mask);
            let th = tape.tanh(h);
            let cont_part = tape.mul_row(th, mask);
            let cat_part = tape.softmax_blocks(h, &cat_blocks);
            tape.add(cont_part, cat_part)
        }
    }
}

/// Inference-only forward pass (no tape). Must agree with [`forward_tape`].
pub fn forward_array(ws: &WeightSet, x: &Array2<f64>, head: Head) -> Array2<f64> {
    let n_layers = ws.len() / 2;
    let mut h = x.clone();
    for l in 0..n_layers {
        let w = &ws.tensors()[2 * l].array;
        let b = &ws.tensors()[2 * l + 1].array;
        let mut z = h.dot(w);
        z += b;
        h = if l + 1 < n_layers {
            z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
        } else {
            z
        };
    }
    match head {
        Head::Linear => h,
        Head::Encoded(layout) => {
            let mut out = Array2::zeros(h.raw_dim());
            for off in layout.continuous_offsets() {
                for i in 0..h.nrows() {
                    out[[i, off]] = h[[i, off]].tanh();
                }
            }
            for (start, end) in layout.categorical_ranges() {
                for i in 0..h.nrows() {
                    let max = (start..end).map(|j| h[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in start..end {
                        let e = (h[[i, j]] - max).exp();
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
    }
}

/// Mean softmax cross-entropy and its parameter gradients for one batch.
pub fn xent_loss_grads(
    ws: &WeightSet,
    x: &Array2<f64>,
    onehot: &Array2<f64>,
) -> (f64, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let params = params_on_tape(&mut tape, ws);
    let xn = tape.leaf(x.clone());
    let logits = forward_tape(&mut tape, xn, &params, Head::Linear);
    let target = tape.leaf(onehot.clone());
    let loss = tape.softmax_xent(logits, target);
    let grads = tape.backward(loss, &params);
    let loss_v = tape.value(loss)[[0, 0]];
    let grad_v = grads.into_iter().map(|g| tape.value(g).clone()).collect();
    (loss_v, grad_v)
}

/// One-hot matrix for a batch of class indices.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), n_classes));
    for (i, &c) in labels.iter().enumerate() {
        out[[i, c]] = 1.0;
    }
    out
}

/// Adam with bias correction; state lives alongside the weight set it updates.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(ws: &WeightSet, lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: ws.tensors().iter().map(|t| Array2::zeros(t.array.raw_dim())).collect(),
            v: ws.tensors().iter().map(|t| Array2::zeros(t.array.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, ws: &mut WeightSet, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), ws.len(), "one gradient per tensor");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((tensor, g), (m, v)) in ws
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(&mut tensor.array)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| {
                    let mh = m / bc1;
                    let vh = v / bc2;
                    *w -= self.lr * mh / (vh.sqrt() + self.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{BlockKind, LayoutBlock};
    use approx::assert_abs_diff_eq;

    fn toy_layout() -> EncodingLayout {
        // [cat block width 3][cont][cont]
        EncodingLayout::new(vec![
            LayoutBlock {
                column: "c".into(),
                offset: 0,
                kind: BlockKind::Categorical {
                    values: vec!["a".into(), "b".into(), "c".into()],
                },
            },
            LayoutBlock {
                column: "x0".into(),
                offset: 3,
                kind: BlockKind::Continuous { min: 0.0, max: 1.0, degenerate: false },
            },
            LayoutBlock {
                column: "x1".into(),
                offset: 4,
                kind: BlockKind::Continuous { min: 0.0, max: 1.0, degenerate: false },
            },
        ])
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_mlp(&[4, 8, 2], 99);
        let b = init_mlp(&[4, 8, 2], 99);
        assert_eq!(a, b);
        assert_eq!(a.tensors()[0].array.dim(), (4, 8));
        assert_eq!(a.tensors()[1].array.dim(), (1, 8));
        assert_eq!(a.tensors()[2].array.dim(), (8, 2));
        assert_ne!(a, init_mlp(&[4, 8, 2], 100));
    }

    #[test]
    fn tape_and_array_forward_agree() {
        let ws = init_mlp(&[5, 7, 5], 3);
        let x = Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 - j as f64) / 3.0);
        let layout = toy_layout();
        for head in [Head::Linear, Head::Encoded(&layout)] {
            let plain = forward_array(&ws, &x, head);
            let mut tape = Tape::new();
            let params = params_on_tape(&mut tape, &ws);
            let xn = tape.leaf(x.clone());
            let out = forward_tape(&mut tape, xn, &params, head);
            let taped = tape.value(out);
            assert_abs_diff_eq!(
                plain.as_slice().unwrap(),
                taped.as_slice().unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn encoded_head_respects_geometry() {
        let layout = toy_layout();
        let ws = init_mlp(&[3, 8, 5], 17);
        let x = Array2::from_shape_fn((9, 3), |(i, j)| (i * 3 + j) as f64 / 5.0 - 1.0);
        let out = forward_array(&ws, &x, Head::Encoded(&layout));
        for i in 0..out.nrows() {
            let block_sum: f64 = (0..3).map(|j| out[[i, j]]).sum();
            assert!((block_sum - 1.0).abs() < 1e-6, "block sum {block_sum}");
            for j in 0..3 {
                assert!(out[[i, j]] >= 0.0);
            }
            for j in 3..5 {
                assert!((-1.0..=1.0).contains(&out[[i, j]]));
            }
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize ||w||^2 via its gradient 2w
        let mut ws = WeightSet::new(vec![NamedTensor {
            name: "w".into(),
            array: Array2::from_elem((2, 2), 5.0),
        }]);
        let mut adam = Adam::new(&ws, 0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g = ws.tensors()[0].array.mapv(|w| 2.0 * w);
            adam.step(&mut ws, &[g]);
        }
        assert!(ws.tensors()[0].array.iter().all(|w| w.abs() < 1e-2));
    }

    #[test]
    fn xent_gradients_reduce_loss() {
        let ws0 = init_mlp(&[4, 6, 3], 5);
        let mut ws = ws0.clone();
        let x = Array2::from_shape_fn((12, 4), |(i, j)| ((i + j) % 5) as f64 / 2.0 - 1.0);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let t = one_hot(&labels, 3);
        let (l0, _) = xent_loss_grads(&ws, &x, &t);
        let mut adam = Adam::new(&ws, 1e-2, 0.9, 0.999);
        for _ in 0..50 {
            let (_, grads) = xent_loss_grads(&ws, &x, &t);
            adam.step(&mut ws, &grads);
        }
        let (l1, _) = xent_loss_grads(&ws, &x, &t);
        assert!(l1 < l0, "loss did not drop: {l0} -> {l1}");
    }
}
