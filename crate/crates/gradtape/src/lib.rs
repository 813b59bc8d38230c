//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records an eager forward computation as a flat list of nodes;
//! [`Tape::backward`] replays it in reverse and accumulates gradients for
//! every node, including leaves. The op set is the minimum needed for a
//! small transformer stack: matrix products, broadcasts, GELU, layer norm,
//! row gather/concat, fused multi-head attention, and masked cross-entropy.
//!
//! Everything is generic over [`Real`] so the same code runs at f32 for
//! training and at f64 for finite-difference verification.

use ndarray::{s, Array1, Array2, Axis};
use num_traits::Float;
use std::fmt::{Debug, Display};

/// Element type the tape can differentiate through.
pub trait Real:
    Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op<T: Real> {
    Leaf,
    /// a[m,k] · b[k,n]
    MatMul(NodeId, NodeId),
    /// a[m,k] · b[n,k]^T
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// a[m,n] + row[1,n] broadcast over rows
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    GatherRows {
        src: NodeId,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    /// Scaled dot-product attention over `heads` column groups.
    /// Scores and probabilities are recomputed in backward rather than
    /// stored, so memory stays O(len·dim) per node.
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        causal: bool,
    },
    /// Mean negative log-likelihood over masked positions; value is 1x1.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
}

struct Node<T: Real> {
    value: Array2<T>,
    op: Op<T>,
}

/// Gradient tape. Nodes are appended by the op methods and never mutated.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e9;

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dims");
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b))
    }

    /// a · b^T without materializing the transpose as a node.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.ncols(), vb.ncols(), "matmul_nt inner dims");
        let out = va.dot(&vb.t());
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.dim(), vb.dim(), "add shapes");
        let out = va + vb;
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(vr.nrows(), 1, "row operand must be 1xN");
        assert_eq!(va.ncols(), vr.ncols(), "add_row widths");
        let out = va + &vr.row(0);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.dim(), vb.dim(), "mul shapes");
        let out = va * vb;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let out = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a.0].value.mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer norm with affine gain/bias (both 1xN).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let vx = &self.nodes[x.0].value;
        let vg = &self.nodes[gain.0].value;
        let vb = &self.nodes[bias.0].value;
        assert_eq!(vg.nrows(), 1);
        assert_eq!(vb.nrows(), 1);
        assert_eq!(vx.ncols(), vg.ncols());
        assert_eq!(vx.ncols(), vb.ncols());
        let eps = T::from_f64(LN_EPS);
        let n = T::from_f64(vx.ncols() as f64);
        let mut out = Array2::zeros(vx.dim());
        for (i, row) in vx.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let inv = (var + eps).sqrt().recip();
            for j in 0..vx.ncols() {
                out[[i, j]] = (row[j] - mean) * inv * vg[[0, j]] + vb[[0, j]];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias })
    }

    pub fn gather_rows(&mut self, src: NodeId, idx: &[usize]) -> NodeId {
        let vs = &self.nodes[src.0].value;
        let mut out = Array2::zeros((idx.len(), vs.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < vs.nrows(), "gather index out of range");
            out.row_mut(i).assign(&vs.row(r));
        }
        self.push(
            out,
            Op::GatherRows {
                src,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let ncols = self.nodes[parts[0].0].value.ncols();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.nrows()).sum();
        let mut out = Array2::zeros((total, ncols));
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.ncols(), ncols, "concat_rows widths");
            out.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// Multi-head scaled dot-product attention. `q` is [Lq, D], `k`/`v` are
    /// [Lk, D]; D must divide into `heads`. With `causal`, Lq must equal Lk
    /// and position i attends to j <= i.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        causal: bool,
    ) -> NodeId {
        let (vq, vk, vv) = (
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
        );
        let d = vq.ncols();
        assert_eq!(vk.ncols(), d);
        assert_eq!(vv.ncols(), d);
        assert_eq!(vk.nrows(), vv.nrows());
        assert_eq!(d % heads, 0, "dim must divide heads");
        if causal {
            assert_eq!(vq.nrows(), vk.nrows(), "causal attention is self-attention");
        }
        let out = attention_forward(vq, vk, vv, heads, causal).0;
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
            },
        )
    }

    /// Mean cross-entropy of `logits[i]` against `targets[i]` over positions
    /// with `mask[i]` set. At least one position must be masked in.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> NodeId {
        let vl = &self.nodes[logits.0].value;
        assert_eq!(vl.nrows(), targets.len());
        assert_eq!(vl.nrows(), mask.len());
        let m = mask.iter().filter(|&&b| b).count();
        assert!(m > 0, "cross_entropy needs at least one unmasked position");
        let mut total = T::zero();
        for (i, row) in vl.rows().into_iter().enumerate() {
            if !mask[i] {
                continue;
            }
            assert!(targets[i] < vl.ncols(), "target id out of vocab");
            let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = row.fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln() + max;
            total = total + lse - row[targets[i]];
        }
        let val = total / T::from_f64(m as f64);
        let out = Array2::from_elem((1, 1), val);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
        )
    }

    /// Sum of all entries, as a 1x1 node. Mostly useful in tests.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let ones_row = Array2::from_elem((1, self.nodes[a.0].value.nrows()), T::one());
        let ones_col = Array2::from_elem((self.nodes[a.0].value.ncols(), 1), T::one());
        let l = self.leaf(ones_row);
        let r = self.leaf(ones_col);
        let la = self.matmul(l, a);
        self.matmul(la, r)
    }

    /// Runs the reverse pass seeded with d(root)=1 and returns per-node
    /// gradients. `root` must be 1x1.
    pub fn backward(&self, root: NodeId) -> Grads<T> {
        assert_eq!(
            self.nodes[root.0].value.dim(),
            (1, 1),
            "backward root must be a scalar node"
        );
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), T::one()));

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, g.dot(&vb.t()));
                    accumulate(&mut grads, *b, va.t().dot(&g));
                }
                Op::MatMulNT(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, g.dot(vb));
                    accumulate(&mut grads, *b, g.t().dot(va));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, grow);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, &g * vb);
                    accumulate(&mut grads, *b, &g * va);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.mapv(|x| x * *c));
                }
                Op::Gelu(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut dx = g;
                    dx.zip_mut_with(va, |gv, &x| *gv = *gv * gelu_grad(x));
                    accumulate(&mut grads, *a, dx);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (dx, dg, db) = layer_norm_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[gain.0].value,
                        &g,
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dg);
                    accumulate(&mut grads, *bias, db);
                }
                Op::GatherRows { src, idx } => {
                    let vs = &self.nodes[src.0].value;
                    let mut ds = Array2::zeros(vs.dim());
                    for (i, &r) in idx.iter().enumerate() {
                        let mut dst = ds.row_mut(r);
                        dst += &g.row(i);
                    }
                    accumulate(&mut grads, *src, ds);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.nrows();
                        let piece = g.slice(s![at..at + rows, ..]).to_owned();
                        accumulate(&mut grads, *p, piece);
                        at += rows;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    causal,
                } => {
                    let (dq, dk, dv) = attention_backward(
                        &self.nodes[q.0].value,
                        &self.nodes[k.0].value,
                        &self.nodes[v.0].value,
                        *heads,
                        *causal,
                        &g,
                    );
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    mask,
                } => {
                    let vl = &self.nodes[logits.0].value;
                    let m = mask.iter().filter(|&&b| b).count();
                    let scale = g[[0, 0]] / T::from_f64(m as f64);
                    let mut dl = Array2::zeros(vl.dim());
                    for (i, row) in vl.rows().into_iter().enumerate() {
                        if !mask[i] {
                            continue;
                        }
                        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
                        let denom = row.fold(T::zero(), |acc, &x| acc + (x - max).exp());
                        for j in 0..vl.ncols() {
                            let p = (row[j] - max).exp() / denom;
                            let delta = if j == targets[i] { T::one() } else { T::zero() };
                            dl[[i, j]] = (p - delta) * scale;
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        Grads { grads }
    }
}

/// Per-node gradients from a backward pass.
pub struct Grads<T: Real> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient for `id`; zero-shaped nodes that never received a gradient
    /// return None.
    pub fn get(&self, id: NodeId) -> Option<&Array2<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array2<T>> {
        self.grads[id.0].take()
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Array2<T>>], id: NodeId, g: Array2<T>) {
    match &mut grads[id.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// tanh-approximation GELU; smooth everywhere, which keeps central
/// finite differences well-behaved.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let a = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654);
    let a = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

fn layer_norm_backward<T: Real>(
    x: &Array2<T>,
    gain: &Array2<T>,
    g: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let eps = T::from_f64(LN_EPS);
    let n = T::from_f64(x.ncols() as f64);
    let mut dx = Array2::zeros(x.dim());
    let mut dgain = Array2::zeros((1, x.ncols()));
    let mut dbias = Array2::zeros((1, x.ncols()));
    for i in 0..x.nrows() {
        let row = x.row(i);
        let mean = row.sum() / n;
        let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
        let inv = (var + eps).sqrt().recip();
        // gradient w.r.t. normalized row, plus affine parameter grads
        let mut sum_gh = T::zero();
        let mut sum_gh_xhat = T::zero();
        let mut xhat = Array1::zeros(x.ncols());
        let mut gh = Array1::zeros(x.ncols());
        for j in 0..x.ncols() {
            xhat[j] = (row[j] - mean) * inv;
            gh[j] = g[[i, j]] * gain[[0, j]];
            sum_gh = sum_gh + gh[j];
            sum_gh_xhat = sum_gh_xhat + gh[j] * xhat[j];
            dgain[[0, j]] = dgain[[0, j]] + g[[i, j]] * xhat[j];
            dbias[[0, j]] = dbias[[0, j]] + g[[i, j]];
        }
        for j in 0..x.ncols() {
            dx[[i, j]] = inv * (gh[j] - sum_gh / n - xhat[j] * sum_gh_xhat / n);
        }
    }
    (dx, dgain, dbias)
}

/// Forward attention over column-split heads; also returns nothing extra —
/// probabilities are recomputed on demand by [`attention_probs`].
fn attention_forward<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    causal: bool,
) -> (Array2<T>, ()) {
    let d = q.ncols();
    let dh = d / heads;
    let mut out = Array2::zeros((q.nrows(), d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = head_probs(&q.slice(cols).to_owned(), &k.slice(cols).to_owned(), causal);
        let oh = p.dot(&v.slice(cols).to_owned());
        out.slice_mut(cols).assign(&oh);
    }
    (out, ())
}

/// Softmax attention probabilities for one head group.
fn head_probs<T: Real>(qh: &Array2<T>, kh: &Array2<T>, causal: bool) -> Array2<T> {
    let scale = T::from_f64((qh.ncols() as f64).sqrt()).recip();
    let mut scores = qh.dot(&kh.t()).mapv(|x| x * scale);
    if causal {
        let neg = T::from_f64(MASK_NEG);
        for i in 0..scores.nrows() {
            for j in (i + 1)..scores.ncols() {
                scores[[i, j]] = neg;
            }
        }
    }
    softmax_rows_inplace(&mut scores);
    scores
}

/// Row-wise softmax probabilities for every head of an attention node's
/// inputs, in head order. Exposed so callers can verify normalization.
pub fn attention_probs<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    heads: usize,
    causal: bool,
) -> Vec<Array2<T>> {
    let dh = q.ncols() / heads;
    (0..heads)
        .map(|h| {
            let cols = s![.., h * dh..(h + 1) * dh];
            head_probs(&q.slice(cols).to_owned(), &k.slice(cols).to_owned(), causal)
        })
        .collect()
}

fn attention_backward<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    causal: bool,
    g: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = T::from_f64((dh as f64).sqrt()).recip();
    let mut dq = Array2::zeros(q.dim());
    let mut dk = Array2::zeros(k.dim());
    let mut dv = Array2::zeros(v.dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols).to_owned();
        let kh = k.slice(cols).to_owned();
        let vh = v.slice(cols).to_owned();
        let gh = g.slice(cols).to_owned();
        let p = head_probs(&qh, &kh, causal);
        // dv = p^T g ; dp = g v^T ; ds = p .* (dp - rowsum(dp .* p))
        dv.slice_mut(cols).assign(&p.t().dot(&gh));
        let dp = gh.dot(&vh.t());
        let mut ds = Array2::zeros(p.dim());
        for i in 0..p.nrows() {
            let mut dot = T::zero();
            for j in 0..p.ncols() {
                dot = dot + dp[[i, j]] * p[[i, j]];
            }
            for j in 0..p.ncols() {
                ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot);
            }
        }
        dq.slice_mut(cols).assign(&ds.dot(&kh).mapv(|x| x * scale));
        dk.slice_mut(cols)
            .assign(&ds.t().dot(&qh).mapv(|x| x * scale));
    }
    (dq, dk, dv)
}

/// Numerically stable in-place row softmax.
pub fn softmax_rows_inplace<T: Real>(m: &mut Array2<T>) {
    for mut row in m.rows_mut() {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum = sum + *x;
        }
        for x in row.iter_mut() {
            *x = *x / sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn matmul_values_and_grads() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.leaf(arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        let b = t.leaf(arr2(&[[5.0], [6.0]]));
        let c = t.matmul(a, b);
        assert_eq!(t.value(c), &arr2(&[[17.0], [39.0]]));
        let s = t.sum_all(c);
        let grads = t.backward(s);
        assert_eq!(grads.get(a).unwrap(), &arr2(&[[5.0, 6.0], [5.0, 6.0]]));
        assert_eq!(grads.get(b).unwrap(), &arr2(&[[4.0], [6.0]]));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_v() {
        let mut t: Tape<f64> = Tape::new();
        let logits = t.leaf(Array2::zeros((3, 8)));
        let ce = t.cross_entropy(logits, &[1, 2, 3], &[true, true, true]);
        let v = t.value(ce)[[0, 0]];
        assert!((v - (8f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_identical_values_average_out() {
        // all value rows equal => output equals that row for any queries
        let mut t: Tape<f64> = Tape::new();
        let q = t.leaf(arr2(&[[0.3, -1.0, 0.2, 0.9], [2.0, 0.1, -0.4, 0.0]]));
        let k = t.leaf(arr2(&[[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0], [
            0.5, 0.5, 0.5, 0.5,
        ]]));
        let v = t.leaf(arr2(&[[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0], [
            1.0, 2.0, 3.0, 4.0,
        ]]));
        let o = t.attention(q, k, v, 2, false);
        for i in 0..2 {
            for (j, want) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
                assert!((t.value(o)[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_attention_ignores_future() {
        let mut t: Tape<f64> = Tape::new();
        let mk = |x: f64| {
            arr2(&[
                [0.1, 0.2, -0.3, 0.4],
                [0.5, -0.6, 0.7, 0.8],
                [x, 0.1, 0.2, 0.3],
            ])
        };
        let q1 = t.leaf(mk(0.9));
        let k1 = t.leaf(mk(0.9));
        let v1 = t.leaf(mk(0.9));
        let o1 = t.attention(q1, k1, v1, 2, true);
        let first_rows = t.value(o1).slice(s![0..2, ..]).to_owned();

        let mut t2: Tape<f64> = Tape::new();
        let q2 = t2.leaf(mk(-5.0));
        let k2 = t2.leaf(mk(-5.0));
        let v2 = t2.leaf(mk(-5.0));
        let o2 = t2.attention(q2, k2, v2, 2, true);
        let first_rows2 = t2.value(o2).slice(s![0..2, ..]).to_owned();
        assert!(first_rows
            .iter()
            .zip(first_rows2.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut t: Tape<f64> = Tape::new();
        let src = t.leaf(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let g = t.gather_rows(src, &[0, 0, 1]);
        let s = t.sum_all(g);
        let grads = t.backward(s);
        assert_eq!(grads.get(src).unwrap(), &arr2(&[[2.0, 2.0], [1.0, 1.0]]));
    }
}
