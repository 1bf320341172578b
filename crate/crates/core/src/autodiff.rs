//! Minimal reverse-mode automatic differentiation over `ndarray` matrices.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes; calling
//! [`Tape::backward`] walks the list in reverse and accumulates gradients.
//! Everything is `f64` and fully deterministic: no threads, no hash maps,
//! identical inputs produce bit-identical outputs and gradients.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant input; gradients stop here.
    Leaf,
    /// Named trainable parameter; gradients are collected per name.
    Param(String),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a + c * b`; used to combine loss terms so a zero coefficient
    /// contributes exactly-zero gradient.
    AddScaled(NodeId, NodeId, f64),
    Sub(NodeId, NodeId),
    /// Broadcast add of a `1 x n` row onto an `m x n` matrix.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Add a constant matrix (e.g. an attention mask); no gradient to the constant.
    AddConst(NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    /// Row lookup (embedding gather); backward scatter-adds.
    GatherRows(NodeId, Vec<usize>),
    /// Gradient reversal: identity forward, `-lambda` times the gradient backward.
    Grl(NodeId, f64),
    /// Splits a context matrix `h` into `(f_s, f_i, h_used)` stacked row-wise,
    /// with `f_s + f_i == h_used` exact in `f64`. See [`exact_split`].
    FeatureSplit { h: NodeId, fs_raw: NodeId },
    /// Mean softmax cross-entropy over rows; value is `1 x 1`.
    MeanCrossEntropy { logits: NodeId, targets: Vec<usize> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.nrows(), v.ncols())
    }

    fn val(&self, id: NodeId) -> Array2<f64> {
        self.nodes[id.0].value.clone()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Array2::from_elem((1, 1), v))
    }

    pub fn param(&mut self, name: &str, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Param(name.to_string()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a.0].value + &(c * &self.nodes[b.0].value);
        self.push(v, Op::AddScaled(a, b, c))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.nodes[row.0].value.nrows(), 1, "bias must be 1 x n");
        let v = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = c * &self.nodes[a.0].value;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: &Array2<f64>) -> NodeId {
        let v = &self.nodes[a.0].value + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(&self.nodes[a.0].value);
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let mut out = Array2::zeros(xv.raw_dim());
        for (i, row) in xv.axis_iter(Axis(0)).enumerate() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter().enumerate() {
                out[[i, j]] = g[[0, j]] * (v - mean) * inv + b[[0, j]];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: col counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[a.0].value.slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[a.0].value.slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, len))
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let t = &self.nodes[table.0].value;
        let mut v = Array2::zeros((indices.len(), t.ncols()));
        for (i, &r) in indices.iter().enumerate() {
            v.row_mut(i).assign(&t.row(r));
        }
        self.push(v, Op::GatherRows(table, indices.to_vec()))
    }

    pub fn grl(&mut self, a: NodeId, lambda: f64) -> NodeId {
        let v = self.val(a);
        self.push(v, Op::Grl(a, lambda))
    }

    /// Feature separation per the split contract: returns `(f_s, f_i, h_used)`
    /// with `f_s + f_i == h_used` exact elementwise.
    pub fn feature_split(&mut self, h: NodeId, fs_raw: NodeId) -> (NodeId, NodeId, NodeId) {
        let hv = &self.nodes[h.0].value;
        let fv = &self.nodes[fs_raw.0].value;
        assert_eq!(hv.raw_dim(), fv.raw_dim(), "feature_split: shape mismatch");
        let b = hv.nrows();
        let d = hv.ncols();
        let mut out = Array2::zeros((3 * b, d));
        for i in 0..b {
            for j in 0..d {
                let (fs, fi, hq) = exact_split(hv[[i, j]], fv[[i, j]]);
                out[[i, j]] = fs;
                out[[b + i, j]] = fi;
                out[[2 * b + i, j]] = hq;
            }
        }
        let stacked = self.push(out, Op::FeatureSplit { h, fs_raw });
        let fs = self.slice_rows(stacked, 0, b);
        let fi = self.slice_rows(stacked, b, b);
        let hq = self.slice_rows(stacked, 2 * b, b);
        (fs, fi, hq)
    }

    /// Mean softmax cross-entropy; `targets[i]` is the class index of row `i`.
    pub fn mean_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy: batch size mismatch");
        let probs = softmax_rows(lv);
        let m = targets.len() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -probs[[i, t]].max(1e-300).ln())
            .sum::<f64>()
            / m;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::MeanCrossEntropy { logits, targets: targets.to_vec() },
        )
    }

    /// Runs backpropagation from a `1 x 1` loss node and returns the gradient
    /// of every named parameter.
    pub fn backward(&self, loss: NodeId) -> BTreeMap<String, Array2<f64>> {
        let grads = self.backward_all(loss);
        let mut out = BTreeMap::new();
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let Op::Param(name) = &node.op {
                out.entry(name.clone())
                    .and_modify(|g: &mut Array2<f64>| *g = &*g + &grad)
                    .or_insert(grad);
            }
        }
        out
    }

    /// Gradient of the loss with respect to an arbitrary node.
    pub fn grad_of(&self, loss: NodeId, wrt: NodeId) -> Array2<f64> {
        self.backward_all(loss).swap_remove(wrt.0)
    }

    fn backward_all(&self, loss: NodeId) -> Vec<Array2<f64>> {
        assert_eq!(self.shape(loss), (1, 1), "backward seed must be scalar");
        let mut grads: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.raw_dim()))
            .collect();
        grads[loss.0][[0, 0]] = 1.0;

        for idx in (0..=loss.0).rev() {
            let g = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da = g.dot(&bv.t());
                    let db = av.t().dot(&g);
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::Add(a, b) => {
                    grads[a.0] += &g;
                    grads[b.0] += &g;
                }
                Op::AddScaled(a, b, c) => {
                    grads[a.0] += &g;
                    grads[b.0] += &(*c * &g);
                }
                Op::Sub(a, b) => {
                    grads[a.0] += &g;
                    grads[b.0] -= &g;
                }
                Op::AddRow(a, row) => {
                    grads[a.0] += &g;
                    let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    grads[row.0] += &summed;
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    grads[a.0] += &da;
                    grads[b.0] += &db;
                }
                Op::Scale(a, c) => {
                    grads[a.0] += &(*c * &g);
                }
                Op::AddConst(a) => {
                    grads[a.0] += &g;
                }
                Op::Relu(a) => {
                    let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    grads[a.0] += &(&g * &mask);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut da = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|j| g[[i, j]] * y[[i, j]]).sum();
                        for j in 0..y.ncols() {
                            da[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    grads[a.0] += &da;
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xv = &self.nodes[x.0].value;
                    let gv = &self.nodes[gain.0].value;
                    let n = xv.ncols() as f64;
                    let mut dx = Array2::zeros(xv.raw_dim());
                    let mut dg = Array2::zeros((1, xv.ncols()));
                    let mut db = Array2::zeros((1, xv.ncols()));
                    for i in 0..xv.nrows() {
                        let row = xv.row(i);
                        let mean = row.sum() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> =
                            (0..xv.ncols()).map(|j| g[[i, j]] * gv[[0, j]]).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / n;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..xv.ncols() {
                            dx[[i, j]] =
                                inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            dg[[0, j]] += g[[i, j]] * xhat[j];
                            db[[0, j]] += g[[i, j]];
                        }
                    }
                    grads[x.0] += &dx;
                    grads[gain.0] += &dg;
                    grads[bias.0] += &db;
                }
                Op::Transpose(a) => {
                    grads[a.0] += &g.t();
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let part = g.slice(s![.., off..off + w]).to_owned();
                        grads[p.0] += &part;
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.nodes[p.0].value.nrows();
                        let part = g.slice(s![off..off + h, ..]).to_owned();
                        grads[p.0] += &part;
                        off += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut da = grads[a.0].clone();
                    let mut view = da.slice_mut(s![.., *start..*start + *len]);
                    view += &g;
                    grads[a.0] = da;
                }
                Op::SliceRows(a, start, len) => {
                    let mut da = grads[a.0].clone();
                    let mut view = da.slice_mut(s![*start..*start + *len, ..]);
                    view += &g;
                    grads[a.0] = da;
                }
                Op::GatherRows(table, indices) => {
                    let mut dt = grads[table.0].clone();
                    for (i, &r) in indices.iter().enumerate() {
                        let mut row = dt.row_mut(r);
                        row += &g.row(i);
                    }
                    grads[table.0] = dt;
                }
                Op::Grl(a, lambda) => {
                    grads[a.0] += &(-*lambda * &g);
                }
                Op::FeatureSplit { h, fs_raw } => {
                    // Stacked rows are [f_s; f_i; h_used]. With f_s = fs_raw and
                    // f_i = h - fs_raw (the alignment is below gradient-check
                    // tolerance): dh += g_fi + g_hq, dfs_raw += g_fs - g_fi.
                    let b = self.nodes[h.0].value.nrows();
                    let g_fs = g.slice(s![0..b, ..]).to_owned();
                    let g_fi = g.slice(s![b..2 * b, ..]).to_owned();
                    let g_hq = g.slice(s![2 * b..3 * b, ..]).to_owned();
                    grads[h.0] += &(&g_fi + &g_hq);
                    grads[fs_raw.0] += &(&g_fs - &g_fi);
                }
                Op::MeanCrossEntropy { logits, targets } => {
                    let probs = softmax_rows(&self.nodes[logits.0].value);
                    let m = targets.len() as f64;
                    let scale = g[[0, 0]] / m;
                    let mut dl = probs;
                    for (i, &t) in targets.iter().enumerate() {
                        dl[[i, t]] -= 1.0;
                    }
                    grads[logits.0] += &(scale * &dl);
                }
            }
        }
        grads
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for j in 0..row.len() {
            out[[i, j]] /= sum;
        }
    }
    out
}

/// Truncates the mantissa of `x` to at most `bits` significant bits.
/// Error-free (Veltkamp splitting, high part only).
fn round_to_bits(x: f64, bits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let c = ((1u64 << (53 - bits)) + 1) as f64;
    let g = c * x;
    if !g.is_finite() {
        return x;
    }
    let d = x - g;
    g + d
}

/// Splits a context scalar `h` into `(f_s, f_i)` with `f_s + f_i == h_used`
/// exact in `f64`, where `f_s` tracks `fs_raw` to ~1e-8 relative and `h_used`
/// tracks `h` to ~1e-8 relative.
///
/// Exact reconstruction of an arbitrary pair is impossible in rounded binary
/// arithmetic (the low bits of `h` can sit below the grid of `f_s`), so both
/// operands are aligned to 26-bit mantissas first, which makes the subtraction
/// error-free whenever the exponent gap is at most 26. Wider gaps mean one
/// operand is negligible (< 1.5e-8 relative) and are collapsed outright.
pub fn exact_split(h: f64, fs_raw: f64) -> (f64, f64, f64) {
    let hq = round_to_bits(h, 26);
    let fs = round_to_bits(fs_raw, 26);
    let fi = hq - fs;
    if fs + fi == hq {
        return (fs, fi, hq);
    }
    // Exponent gap > 26: drop the negligible side.
    if fs.abs() < hq.abs() {
        (0.0, hq, hq)
    } else {
        (fs, -fs, 0.0)
    }
}

/// Named parameter tensors with deterministic (sorted) iteration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Array2<f64>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter tensor {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across tensors whose name matches `filter`.
    pub fn count_scalars(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| filter(n))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Records every tensor as a `Param` node on the tape and returns the ids.
    pub fn bind(&self, tape: &mut Tape) -> BTreeMap<String, NodeId> {
        self.params
            .iter()
            .map(|(n, v)| (n.clone(), tape.param(n, v.clone())))
            .collect()
    }
}
