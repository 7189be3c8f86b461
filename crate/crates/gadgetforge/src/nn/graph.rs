//! Eager reverse-mode autodiff tape.
//!
//! Each builder method computes its result immediately and records the
//! operation; [`Graph::backward`] then walks the tape once in reverse,
//! accumulating exact gradients for every node. The op set is exactly what
//! the classifiers in [`crate::nn::models`] need — nothing speculative.
//!
//! Shape agreement between tape inputs is a programming error here, not a
//! user-facing condition, so the builders panic via the tensor kernels
//! rather than returning errors; model constructors validate configuration
//! before any tape is built.

use rand_chacha::ChaCha20Rng;

use super::ops::softmax_rows;
use super::tensor::Tensor;
use crate::rng;

pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ` (used for attention scores).
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Matrix plus a 1×cols row vector broadcast over rows.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `mul·x + add` with scalar constants.
    Affine(NodeId, f64),
    /// Addition of a constant tensor (no gradient into the constant).
    AddFixed(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    /// Per-row normalization with learnable 1×d gain and bias.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    ConcatCols(NodeId, NodeId),
    /// Gather rows of an embedding table; backward scatter-adds.
    EmbedRows {
        table: NodeId,
        ids: Vec<u32>,
    },
    /// Extract row `r` as a 1×d vector.
    SelectRow(NodeId, usize),
    /// Inverted dropout with a frozen mask of factors (0 or 1/(1-p)).
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
}

pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    /// Record an input or parameter tensor.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].matmul(&self.values[b]);
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].matmul_bt(&self.values[b]);
        self.push(Op::MatMulBt(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].add(&self.values[b]);
        self.push(Op::Add(a, b), v)
    }

    /// Broadcast-add a 1×cols row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.values[a].add_row(&self.values[row]);
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].mul(&self.values[b]);
        self.push(Op::Mul(a, b), v)
    }

    /// Scalar affine map `mul·x + add`.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let v = self.values[x].map(|v| mul * v + add);
        self.push(Op::Affine(x, mul), v)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        self.affine(x, k, 0.0)
    }

    /// Add a constant tensor (e.g. position table or attention mask bias);
    /// gradients flow only into `x`.
    pub fn add_fixed(&mut self, x: NodeId, c: &Tensor) -> NodeId {
        let v = self.values[x].add(c);
        self.push(Op::AddFixed(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].map(|v| v.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let v = softmax_rows(&self.values[x]);
        self.push(Op::SoftmaxRows(x), v)
    }

    /// Per-row layer normalization with learnable gain and bias rows.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = &self.values[x];
        let g = &self.values[gain];
        let b = &self.values[bias];
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let (mean, inv_std) = row_moments(xv.row(r));
            for c in 0..xv.cols() {
                let xh = (xv.at(r, c) - mean) * inv_std;
                out.set(r, c, g.at(0, c) * xh + b.at(0, c));
            }
        }
        self.push(Op::LayerNorm { x, gain, bias }, out)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].concat_cols(&self.values[b]);
        self.push(Op::ConcatCols(a, b), v)
    }

    /// Gather `ids` rows from an embedding table into a len×d matrix.
    pub fn embed_rows(&mut self, table: NodeId, ids: &[u32]) -> NodeId {
        let t = &self.values[table];
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            let src = t.row(id as usize);
            out.data_mut()[r * src.len()..(r + 1) * src.len()].copy_from_slice(src);
        }
        self.push(
            Op::EmbedRows {
                table,
                ids: ids.to_vec(),
            },
            out,
        )
    }

    /// Extract row `r` of a matrix as a 1×d vector.
    pub fn select_row(&mut self, x: NodeId, r: usize) -> NodeId {
        let v = Tensor::row_vec(self.values[x].row(r));
        self.push(Op::SelectRow(x, r), v)
    }

    /// Inverted dropout. With an rng the mask is sampled element-wise (zero
    /// with probability `p`, otherwise 1/(1-p)); without one this is the
    /// identity and records nothing.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: Option<&mut ChaCha20Rng>) -> NodeId {
        let Some(r) = rng else { return x };
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.values[x].len())
            .map(|_| {
                if rng::uniform(r, 0.0, 1.0) < p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mut v = self.values[x].clone();
        for (o, m) in v.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(Op::Dropout { x, mask }, v)
    }

    /// Walk the tape backwards from `root`, seeded with `seed` (the loss
    /// gradient with respect to the root value), and return per-node
    /// gradients.
    pub fn backward(&self, root: NodeId, seed: Tensor) -> Gradients {
        self.backward_multi(vec![(root, seed)])
    }

    /// Backward pass seeded at several roots at once — one tape walk for a
    /// whole batch of per-sample losses.
    pub fn backward_multi(&self, seeds: Vec<(NodeId, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        if grads.is_empty() {
            return Gradients { grads };
        }
        let mut start = 0;
        for (root, seed) in seeds {
            let rv = &self.values[root];
            assert_eq!(
                (seed.rows(), seed.cols()),
                (rv.rows(), rv.cols()),
                "seed shape must match the root value"
            );
            start = start.max(root);
            accumulate(&mut grads, root, seed);
        }
        for id in (0..=start).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.ops[id] {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(&self.values[*b]);
                    let db = self.values[*a].transpose().matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = g.matmul(&self.values[*b]);
                    let db = g.transpose().matmul(&self.values[*a]);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.col_sum());
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.mul(&self.values[*b]);
                    let db = g.mul(&self.values[*a]);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Affine(x, mul) => {
                    accumulate(&mut grads, *x, g.scale(*mul));
                }
                Op::AddFixed(x) => {
                    accumulate(&mut grads, *x, g);
                }
                Op::Sigmoid(x) => {
                    let y = &self.values[id];
                    accumulate(&mut grads, *x, g.mul(&y.map(|v| v * (1.0 - v))));
                }
                Op::Tanh(x) => {
                    let y = &self.values[id];
                    accumulate(&mut grads, *x, g.mul(&y.map(|v| 1.0 - v * v)));
                }
                Op::Relu(x) => {
                    let xv = &self.values[*x];
                    accumulate(
                        &mut grads,
                        *x,
                        g.zip_map(xv, |gv, v| if v > 0.0 { gv } else { 0.0 }),
                    );
                }
                Op::SoftmaxRows(x) => {
                    let y = &self.values[id];
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = y
                            .row(r)
                            .iter()
                            .zip(g.row(r))
                            .map(|(&yv, &gv)| yv * gv)
                            .sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, y.at(r, c) * (g.at(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (dx, dgain, dbias) =
                        layer_norm_backward(&self.values[*x], &self.values[*gain], &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::ConcatCols(a, b) => {
                    let wa = self.values[*a].cols();
                    let wb = self.values[*b].cols();
                    let mut da = Tensor::zeros(g.rows(), wa);
                    let mut db = Tensor::zeros(g.rows(), wb);
                    for r in 0..g.rows() {
                        da.data_mut()[r * wa..(r + 1) * wa].copy_from_slice(&g.row(r)[..wa]);
                        db.data_mut()[r * wb..(r + 1) * wb].copy_from_slice(&g.row(r)[wa..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::EmbedRows { table, ids } => {
                    let t = &self.values[*table];
                    let mut dt = Tensor::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut dt.data_mut()
                            [id as usize * t.cols()..(id as usize + 1) * t.cols()];
                        for (d, &gv) in dst.iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::SelectRow(x, r) => {
                    let xv = &self.values[*x];
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    dx.data_mut()[r * xv.cols()..(r + 1) * xv.cols()].copy_from_slice(g.row(0));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g.clone();
                    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id] {
        Some(g) => *g = g.add(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn layer_norm_backward(x: &Tensor, gain: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (rows, cols) = (x.rows(), x.cols());
    let n = cols as f64;
    let mut dx = Tensor::zeros(rows, cols);
    let mut dgain = Tensor::zeros(1, cols);
    let mut dbias = Tensor::zeros(1, cols);
    for r in 0..rows {
        let (mean, inv_std) = row_moments(x.row(r));
        // dxh = g ⊙ gain; reduce to the two row sums the chain rule needs.
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        let xh: Vec<f64> = x.row(r).iter().map(|&v| (v - mean) * inv_std).collect();
        let dxh: Vec<f64> = g
            .row(r)
            .iter()
            .zip(gain.row(0))
            .map(|(&gv, &gn)| gv * gn)
            .collect();
        for c in 0..cols {
            sum_dxh += dxh[c];
            sum_dxh_xh += dxh[c] * xh[c];
            dgain.set(0, c, dgain.at(0, c) + g.at(r, c) * xh[c]);
            dbias.set(0, c, dbias.at(0, c) + g.at(r, c));
        }
        for c in 0..cols {
            let v = inv_std * (dxh[c] - sum_dxh / n - xh[c] * sum_dxh_xh / n);
            dx.set(r, c, v);
        }
    }
    (dx, dgain, dbias)
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic pseudo-random weights so "sum of outputs" losses do not
    /// hide gradients (e.g. softmax rows always sum to one).
    fn probe_weights(rows: usize, cols: usize) -> Tensor {
        let mut r = crate::rng::seeded(9001, (rows * 31 + cols) as u64);
        Tensor::uniform(rows, cols, 1.0, &mut r)
    }

    fn weighted_loss(t: &Tensor, w: &Tensor) -> f64 {
        t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    /// Central-difference check of d(weighted loss)/d(inputs[k]) for every
    /// input, against one backward pass.
    fn check_gradients(inputs: &[Tensor], build: impl Fn(&mut Graph, &[NodeId]) -> NodeId) {
        let eps = 1e-5;
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let root = build(&mut g, &ids);
        let w = probe_weights(g.value(root).rows(), g.value(root).cols());
        let grads = g.backward(root, w.clone());
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(ids[k])
                .unwrap_or_else(|| panic!("no gradient for input {k}"));
            for j in 0..input.len() {
                let mut lo = inputs.to_vec();
                let mut hi = inputs.to_vec();
                lo[k].data_mut()[j] -= eps;
                hi[k].data_mut()[j] += eps;
                let eval = |ts: &[Tensor]| {
                    let mut g = Graph::new();
                    let ids: Vec<NodeId> = ts.iter().map(|t| g.leaf(t.clone())).collect();
                    let root = build(&mut g, &ids);
                    weighted_loss(g.value(root), &w)
                };
                let fd = (eval(&hi) - eval(&lo)) / (2.0 * eps);
                let an = analytic.data()[j];
                let rel = (an - fd).abs() / f64::max(1.0, an.abs().max(fd.abs()));
                assert!(
                    rel < 1e-4,
                    "input {k} element {j}: analytic {an} vs central difference {fd}"
                );
            }
        }
    }

    fn rand_t(rows: usize, cols: usize, salt: u64) -> Tensor {
        let mut r = crate::rng::seeded(77, salt);
        Tensor::uniform(rows, cols, 1.0, &mut r)
    }

    #[test]
    fn matmul_gradients_match_central_differences() {
        check_gradients(&[rand_t(2, 3, 1), rand_t(3, 2, 2)], |g, ids| {
            g.matmul(ids[0], ids[1])
        });
    }

    #[test]
    fn matmul_bt_gradients_match_central_differences() {
        check_gradients(&[rand_t(2, 3, 3), rand_t(4, 3, 4)], |g, ids| {
            g.matmul_bt(ids[0], ids[1])
        });
    }

    #[test]
    fn elementwise_and_broadcast_gradients_match_central_differences() {
        check_gradients(
            &[rand_t(2, 3, 5), rand_t(2, 3, 6), rand_t(1, 3, 7)],
            |g, ids| {
                let m = g.mul(ids[0], ids[1]);
                let s = g.add_row(m, ids[2]);
                g.affine(s, -1.7, 0.3)
            },
        );
    }

    #[test]
    fn activation_gradients_match_central_differences() {
        check_gradients(&[rand_t(2, 4, 8)], |g, ids| {
            let a = g.sigmoid(ids[0]);
            let b = g.tanh(a);
            let c = g.scale(b, 2.0);
            g.relu(c)
        });
    }

    #[test]
    fn softmax_gradients_match_central_differences() {
        check_gradients(&[rand_t(3, 4, 9)], |g, ids| g.softmax_rows(ids[0]));
    }

    #[test]
    fn layer_norm_gradients_match_central_differences() {
        check_gradients(
            &[rand_t(3, 4, 10), rand_t(1, 4, 11), rand_t(1, 4, 12)],
            |g, ids| g.layer_norm(ids[0], ids[1], ids[2]),
        );
    }

    #[test]
    fn concat_select_and_embed_gradients_match_central_differences() {
        check_gradients(&[rand_t(4, 3, 13), rand_t(2, 3, 14)], |g, ids| {
            // Reuse a row twice through the embedding gather so the
            // scatter-add path accumulates.
            let e = g.embed_rows(ids[0], &[2, 0, 2]);
            let top = g.select_row(e, 0);
            let mid = g.select_row(ids[1], 1);
            g.concat_cols(top, mid)
        });
    }

    #[test]
    fn attention_shaped_composite_gradients_match_central_differences() {
        // A miniature attention block exercising matmul_bt + scale +
        // add_fixed + softmax + matmul end to end.
        let bias = {
            let mut b = Tensor::zeros(3, 3);
            for r in 0..3 {
                b.set(r, 2, -1e9);
            }
            b
        };
        check_gradients(
            &[rand_t(3, 4, 15), rand_t(3, 4, 16), rand_t(3, 2, 17)],
            |g, ids| {
                let scores = g.matmul_bt(ids[0], ids[1]);
                let scaled = g.scale(scores, 0.5);
                let masked = g.add_fixed(scaled, &bias);
                let probs = g.softmax_rows(masked);
                g.matmul(probs, ids[2])
            },
        );
    }

    #[test]
    fn fanout_accumulates_gradients_from_every_use() {
        // y = x ⊙ x: dy/dx = 2x only if both uses accumulate.
        let x = rand_t(2, 2, 18);
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let y = g.mul(xid, xid);
        let seed = Tensor::filled(2, 2, 1.0);
        let grads = g.backward(y, seed);
        let dx = grads.get(xid).unwrap();
        for (d, v) in dx.data().iter().zip(x.data()) {
            assert!((d - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_backward_reuses_the_forward_mask() {
        let x = rand_t(1, 16, 19);
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let mut r = crate::rng::seeded(5, 5);
        let y = g.dropout(xid, 0.5, Some(&mut r));
        let grads = g.backward(y, Tensor::filled(1, 16, 1.0));
        let dx = grads.get(xid).unwrap();
        // Wherever the output was zeroed the gradient is zero; elsewhere it
        // is the 1/(1-p) factor.
        for j in 0..16 {
            let out = g.value(y).data()[j];
            if out == 0.0 {
                assert_eq!(dx.data()[j], 0.0);
            } else {
                assert!((dx.data()[j] - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_root_backward_sums_both_loss_paths() {
        // Two heads read the same leaf; seeding both roots at once must
        // give the same gradient as adding two single-root passes.
        let x = rand_t(2, 2, 21);
        let mut g = Graph::new();
        let xid = g.leaf(x);
        let a = g.tanh(xid);
        let b = g.sigmoid(xid);
        let seed_a = Tensor::filled(2, 2, 0.5);
        let seed_b = Tensor::filled(2, 2, -1.25);
        let combined = g.backward_multi(vec![(a, seed_a.clone()), (b, seed_b.clone())]);
        let ga = g.backward(a, seed_a);
        let gb = g.backward(b, seed_b);
        let expect = ga.get(xid).unwrap().add(gb.get(xid).unwrap());
        let got = combined.get(xid).unwrap();
        for (u, v) in got.data().iter().zip(expect.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_without_rng_is_the_identity() {
        let x = rand_t(2, 3, 20);
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let y = g.dropout(xid, 0.9, None);
        assert_eq!(y, xid);
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn tape_forward_matches_pure_ops() {
        use super::super::ops;
        let mut r = crate::rng::seeded(99, 0);
        let x = Tensor::uniform(3, 4, 1.0, &mut r);
        let p = ops::AttentionParams::init(4, 2, &mut r).unwrap();
        let pure = ops::multi_head_attention(&x, &p).unwrap();

        let mut g = Graph::new();
        let xid = g.leaf(x);
        let scale = 1.0 / (p.d_k() as f64).sqrt();
        let mut heads = Vec::new();
        for i in 0..2 {
            let wq = g.leaf(p.wq[i].clone());
            let wk = g.leaf(p.wk[i].clone());
            let wv = g.leaf(p.wv[i].clone());
            let q = g.matmul(xid, wq);
            let k = g.matmul(xid, wk);
            let v = g.matmul(xid, wv);
            let scores = g.matmul_bt(q, k);
            let scaled = g.scale(scores, scale);
            let probs = g.softmax_rows(scaled);
            heads.push(g.matmul(probs, v));
        }
        let cat = g.concat_cols(heads[0], heads[1]);
        let wo = g.leaf(p.wo.clone());
        let out = g.matmul(cat, wo);
        for (a, b) in g.value(out).data().iter().zip(pure.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
