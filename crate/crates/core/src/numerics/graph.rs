//! Reverse-mode differentiation over an explicit computation graph.
//!
//! Nodes live in an append-only arena, so parents always precede children
//! and reverse insertion order is a valid reverse-topological order. Each
//! primitive checks its output for NaN/Inf; a non-finite value is an error
//! at the op that produced it, never a silently propagated poison.

use super::{check_finite, shape_err, NumArray, NumericsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node {
    value: NumArray,
    op: Op,
}

enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    AffineConst { x: NodeId, mul: f64 },
    Matmul { a: NodeId, b: NodeId },
    Transpose2 { x: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Abs { x: NodeId },
    EMin { a: NodeId, b: NodeId },
    EMax { a: NodeId, b: NodeId },
    Softmax { x: NodeId, axis: usize },
    SumAll { x: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize, cols: Vec<f64> },
    GroupNorm { x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, mean: Vec<f64>, inv_std: Vec<f64> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, inv_std: Vec<f64> },
    Bilinear { feat: NodeId, points: NodeId },
    SelectRows { x: NodeId, idx: Vec<usize> },
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize, end: usize },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    ToChw { x: NodeId, h: usize, w: usize },
    ToHwc { x: NodeId },
    RowScale { x: NodeId, s: NodeId },
    Reshape { x: NodeId },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, class_weights: Vec<f64>, probs: Vec<f64>, norm: f64 },
}

/// Per-node gradients produced by [`Graph::backward`]. Gradients of interior
/// nodes are consumed during the sweep; leaf gradients remain addressable.
pub struct Gradients {
    grads: Vec<Option<NumArray>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&NumArray> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<NumArray> {
        self.grads[id.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// ── matmul kernels ──────────────────────────────────────────────────────

fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}

/// a [m,k] × bᵀ where b is [n,k] → [m,n]
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *o = arow.iter().zip(brow.iter()).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// aᵀ × b where a is [k,m], b is [k,n] → [m,n]
fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

fn dims2(arr: &NumArray, op: &'static str) -> Result<(usize, usize)> {
    match arr.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(shape_err(op, format!("expected rank-2 array, got {s:?}"))),
    }
}

fn dims3(arr: &NumArray, op: &'static str) -> Result<(usize, usize, usize)> {
    match arr.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(shape_err(op, format!("expected rank-3 array, got {s:?}"))),
    }
}

fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &NumArray {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: NumArray, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: NumArray, op: Op, name: &'static str) -> Result<NodeId> {
        check_finite(value.data(), name)?;
        Ok(self.push(value, op))
    }

    /// Inserts an input/parameter/constant node.
    pub fn leaf(&mut self, value: NumArray) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = NumArray::from_raw(va.shape().to_vec(), data);
        self.push_checked(out, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("sub", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = NumArray::from_raw(va.shape().to_vec(), data);
        self.push_checked(out, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = NumArray::from_raw(va.shape().to_vec(), data);
        self.push_checked(out, Op::Mul { a, b }, "mul")
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("div", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x / y).collect();
        let out = NumArray::from_raw(va.shape().to_vec(), data);
        self.push_checked(out, Op::Div { a, b }, "div")
    }

    /// `mul * x + add`, elementwise with scalar constants.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| mul * v + add).collect();
        let out = NumArray::from_raw(vx.shape().to_vec(), data);
        self.push_checked(out, Op::AffineConst { x, mul }, "affine")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = dims2(self.value(a), "matmul")?;
        let (kb, n) = dims2(self.value(b), "matmul")?;
        if ka != kb {
            return Err(shape_err("matmul", format!("inner dims {ka} vs {kb}")));
        }
        let data = mm_nn(self.value(a).data(), self.value(b).data(), m, ka, n);
        let out = NumArray::from_raw(vec![m, n], data);
        self.push_checked(out, Op::Matmul { a, b }, "matmul")
    }

    /// Fully-connected layer `xW + b` with x `[N,Din]`, W `[Din,Dout]`, b `[Dout]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn transpose2(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, d) = dims2(self.value(x), "transpose2")?;
        let vx = self.value(x).data();
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                data[j * n + i] = vx[i * d + j];
            }
        }
        let out = NumArray::from_raw(vec![d, n], data);
        self.push_checked(out, Op::Transpose2 { x }, "transpose2")
    }

    /// `x[N,D] + b[D]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, d) = dims2(self.value(x), "add_bias")?;
        let vb = self.value(b);
        if vb.shape() != [d] {
            return Err(shape_err("add_bias", format!("bias {:?} for x [{n},{d}]", vb.shape())));
        }
        let bd = vb.data().to_vec();
        let vx = self.value(x).data();
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] = vx[i * d + j] + bd[j];
            }
        }
        let out = NumArray::from_raw(vec![n, d], data);
        self.push_checked(out, Op::AddBias { x, b }, "add_bias")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v.max(0.0)).collect();
        let out = NumArray::from_raw(vx.shape().to_vec(), data);
        self.push_checked(out, Op::Relu { x }, "relu")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx
            .data()
            .iter()
            .map(|v| {
                if *v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let out = NumArray::from_raw(vx.shape().to_vec(), data);
        self.push_checked(out, Op::Sigmoid { x }, "sigmoid")
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v.abs()).collect();
        let out = NumArray::from_raw(vx.shape().to_vec(), data);
        self.push_checked(out, Op::Abs { x }, "abs")
    }

    pub fn emin(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("emin", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x.min(*y)).collect();
        let out = NumArray::from_raw(va.shape().to_vec(), data);
        self.push_checked(out, Op::EMin { a, b }, "emin")
    }

    pub fn emax(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("emax", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x.max(*y)).collect();
        let out = NumArray::from_raw(va.shape().to_vec(), data);
        self.push_checked(out, Op::EMax { a, b }, "emax")
    }

    /// Max-subtracted softmax along `axis`; overflow-safe by construction.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let vx = self.value(x);
        let shape = vx.shape().to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let k = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = vx.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * k * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..k {
                    mx = mx.max(data[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..k {
                    let e = (data[base + j * inner] - mx).exp();
                    data[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..k {
                    data[base + j * inner] /= sum;
                }
            }
        }
        let out = NumArray::from_raw(shape, data);
        self.push_checked(out, Op::Softmax { x, axis }, "softmax")
    }

    /// Sum of all elements, as a `[1]` scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        let out = NumArray::from_raw(vec![1], vec![s]);
        self.push_checked(out, Op::SumAll { x }, "sum_all")
    }

    /// 2-D convolution: x `[Cin,H,W]`, w `[Cout,Cin,kh,kw]`, b `[Cout]`,
    /// zero padding, square stride. Implemented as im2col + matmul.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (cin, h, win) = dims3(self.value(x), "conv2d")?;
        let wshape = self.value(w).shape().to_vec();
        let (cout, wcin, kh, kw) = match wshape.as_slice() {
            [a, b2, c, d] => (*a, *b2, *c, *d),
            s => return Err(shape_err("conv2d", format!("weight rank {s:?}"))),
        };
        if wcin != cin {
            return Err(shape_err("conv2d", format!("input channels {cin} vs weight {wcin}")));
        }
        if self.value(b).shape() != [cout] {
            return Err(shape_err("conv2d", format!("bias {:?} for cout {cout}", self.value(b).shape())));
        }
        if stride == 0 || kh > h + 2 * pad || kw > win + 2 * pad {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} stride {stride} on {h}x{win} pad {pad}")));
        }
        let oh = conv_out_extent(h, kh, stride, pad);
        let ow = conv_out_extent(win, kw, stride, pad);
        let ckk = cin * kh * kw;
        let xs = self.value(x).data();
        let mut cols = vec![0.0; oh * ow * ckk];
        for oy in 0..oh {
            for ox in 0..ow {
                let col = &mut cols[(oy * ow + ox) * ckk..(oy * ow + ox + 1) * ckk];
                let mut ci = 0;
                for c in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            col[ci] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < win as isize {
                                xs[(c * h + iy as usize) * win + ix as usize]
                            } else {
                                0.0
                            };
                            ci += 1;
                        }
                    }
                }
            }
        }
        // cols [P, ckk] × wᵀ [ckk, cout] → [P, cout], then permute to [cout, oh, ow]
        let hwc = mm_nt(&cols, self.value(w).data(), oh * ow, ckk, cout);
        let bd = self.value(b).data();
        let mut data = vec![0.0; cout * oh * ow];
        for p in 0..oh * ow {
            for c in 0..cout {
                data[c * oh * ow + p] = hwc[p * cout + c] + bd[c];
            }
        }
        let out = NumArray::from_raw(vec![cout, oh, ow], data);
        self.push_checked(out, Op::Conv2d { x, w, b, stride, pad, cols }, "conv2d")
    }

    /// Group normalization over `[C,H,W]` with per-channel affine.
    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, eps: f64) -> Result<NodeId> {
        let (c, h, w) = dims3(self.value(x), "group_norm")?;
        if groups == 0 || c % groups != 0 {
            return Err(shape_err("group_norm", format!("{groups} groups for {c} channels")));
        }
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(shape_err("group_norm", "affine params must be [C]".into()));
        }
        let gsize = (c / groups) * h * w;
        let xs = self.value(x).data();
        let mut mean = vec![0.0; groups];
        let mut inv_std = vec![0.0; groups];
        let mut data = vec![0.0; c * h * w];
        for g in 0..groups {
            let lo = g * gsize;
            let hi = lo + gsize;
            let m: f64 = xs[lo..hi].iter().sum::<f64>() / gsize as f64;
            let var: f64 = xs[lo..hi].iter().map(|v| (v - m) * (v - m)).sum::<f64>() / gsize as f64;
            mean[g] = m;
            inv_std[g] = 1.0 / (var + eps).sqrt();
        }
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        for ch in 0..c {
            let g = ch / (c / groups);
            for p in 0..h * w {
                let i = ch * h * w + p;
                data[i] = (xs[i] - mean[g]) * inv_std[g] * gd[ch] + bd[ch];
            }
        }
        let out = NumArray::from_raw(vec![c, h, w], data);
        self.push_checked(out, Op::GroupNorm { x, gamma, beta, groups, mean, inv_std }, "group_norm")
    }

    /// Layer normalization of each row of `[N,D]` with affine params `[D]`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (n, d) = dims2(self.value(x), "layer_norm")?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(shape_err("layer_norm", "affine params must be [D]".into()));
        }
        let xs = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut mean = vec![0.0; n];
        let mut inv_std = vec![0.0; n];
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let m: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d as f64;
            mean[i] = m;
            inv_std[i] = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data[i * d + j] = (row[j] - m) * inv_std[i] * gd[j] + bd[j];
            }
        }
        let out = NumArray::from_raw(vec![n, d], data);
        self.push_checked(out, Op::LayerNorm { x, gamma, beta, mean, inv_std }, "layer_norm")
    }

    /// Samples `feat[C,H,W]` at continuous `(row, col)` points `[P,2]` with
    /// bilinear interpolation and zero padding outside the grid. Integer
    /// coordinates land exactly on grid nodes. Differentiable in both
    /// arguments.
    pub fn bilinear_sample(&mut self, feat: NodeId, points: NodeId) -> Result<NodeId> {
        let (c, h, w) = dims3(self.value(feat), "bilinear_sample")?;
        let (p, two) = dims2(self.value(points), "bilinear_sample")?;
        if two != 2 {
            return Err(shape_err("bilinear_sample", format!("points must be [P,2], got last dim {two}")));
        }
        let fs = self.value(feat).data();
        let ps = self.value(points).data();
        let mut data = vec![0.0; p * c];
        for pi in 0..p {
            let r = ps[pi * 2];
            let cc = ps[pi * 2 + 1];
            let r0 = r.floor();
            let c0 = cc.floor();
            let dr = r - r0;
            let dc = cc - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            for (cy, cx, wgt) in [
                (r0, c0, (1.0 - dr) * (1.0 - dc)),
                (r0, c0 + 1, (1.0 - dr) * dc),
                (r0 + 1, c0, dr * (1.0 - dc)),
                (r0 + 1, c0 + 1, dr * dc),
            ] {
                if cy >= 0 && cy < h as isize && cx >= 0 && cx < w as isize {
                    let base = (cy as usize) * w + cx as usize;
                    for ch in 0..c {
                        data[pi * c + ch] += wgt * fs[ch * h * w + base];
                    }
                }
            }
        }
        let out = NumArray::from_raw(vec![p, c], data);
        self.push_checked(out, Op::Bilinear { feat, points }, "bilinear_sample")
    }

    /// Gathers rows of `x[N,D]` by index; indices may repeat.
    pub fn select_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (n, d) = dims2(self.value(x), "select_rows")?;
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err("select_rows", format!("index {bad} out of {n} rows")));
        }
        let xs = self.value(x).data();
        let mut data = vec![0.0; idx.len() * d];
        for (o, &i) in idx.iter().enumerate() {
            data[o * d..(o + 1) * d].copy_from_slice(&xs[i * d..(i + 1) * d]);
        }
        let out = NumArray::from_raw(vec![idx.len(), d], data);
        self.push_checked(out, Op::SelectRows { x, idx: idx.to_vec() }, "select_rows")
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (n, d) = dims2(self.value(x), "slice_rows")?;
        if start >= end || end > n {
            return Err(shape_err("slice_rows", format!("range {start}..{end} of {n}")));
        }
        let xs = self.value(x).data();
        let data = xs[start * d..end * d].to_vec();
        let out = NumArray::from_raw(vec![end - start, d], data);
        self.push_checked(out, Op::SliceRows { x, start }, "slice_rows")
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (n, d) = dims2(self.value(x), "slice_cols")?;
        if start >= end || end > d {
            return Err(shape_err("slice_cols", format!("range {start}..{end} of {d}")));
        }
        let xs = self.value(x).data();
        let k = end - start;
        let mut data = vec![0.0; n * k];
        for i in 0..n {
            data[i * k..(i + 1) * k].copy_from_slice(&xs[i * d + start..i * d + end]);
        }
        let out = NumArray::from_raw(vec![n, k], data);
        self.push_checked(out, Op::SliceCols { x, start, end }, "slice_cols")
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no parts".into()));
        }
        let (_, d) = dims2(self.value(parts[0]), "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (np, dp) = dims2(self.value(p), "concat_rows")?;
            if dp != d {
                return Err(shape_err("concat_rows", format!("col mismatch {dp} vs {d}")));
            }
            rows += np;
            data.extend_from_slice(self.value(p).data());
        }
        let out = NumArray::from_raw(vec![rows, d], data);
        self.push_checked(out, Op::ConcatRows { parts: parts.to_vec() }, "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no parts".into()));
        }
        let (n, _) = dims2(self.value(parts[0]), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (np, dp) = dims2(self.value(p), "concat_cols")?;
            if np != n {
                return Err(shape_err("concat_cols", format!("row mismatch {np} vs {n}")));
            }
            widths.push(dp);
            total += dp;
        }
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &dp) in parts.iter().zip(&widths) {
            let ps = self.value(p).data();
            for i in 0..n {
                data[i * total + off..i * total + off + dp].copy_from_slice(&ps[i * dp..(i + 1) * dp]);
            }
            off += dp;
        }
        let out = NumArray::from_raw(vec![n, total], data);
        self.push_checked(out, Op::ConcatCols { parts: parts.to_vec() }, "concat_cols")
    }

    /// `[H·W, C]` → `[C, H, W]` permutation.
    pub fn to_chw(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let (n, c) = dims2(self.value(x), "to_chw")?;
        if n != h * w {
            return Err(shape_err("to_chw", format!("{n} rows vs {h}x{w}")));
        }
        let xs = self.value(x).data();
        let mut data = vec![0.0; c * h * w];
        for p in 0..n {
            for ch in 0..c {
                data[ch * n + p] = xs[p * c + ch];
            }
        }
        let out = NumArray::from_raw(vec![c, h, w], data);
        self.push_checked(out, Op::ToChw { x, h, w }, "to_chw")
    }

    /// `[C, H, W]` → `[H·W, C]` permutation.
    pub fn to_hwc(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = dims3(self.value(x), "to_hwc")?;
        let xs = self.value(x).data();
        let n = h * w;
        let mut data = vec![0.0; n * c];
        for ch in 0..c {
            for p in 0..n {
                data[p * c + ch] = xs[ch * n + p];
            }
        }
        let out = NumArray::from_raw(vec![n, c], data);
        self.push_checked(out, Op::ToHwc { x }, "to_hwc")
    }

    /// Scales each row of `x[N,D]` by `s[N]` (also accepts `[N,1]`).
    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (n, d) = dims2(self.value(x), "row_scale")?;
        let vs = self.value(s);
        let sn = vs.numel();
        if sn != n || (vs.shape().len() == 2 && vs.shape()[1] != 1) {
            return Err(shape_err("row_scale", format!("scale {:?} for x [{n},{d}]", vs.shape())));
        }
        let sd = vs.data();
        let xs = self.value(x).data();
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] = xs[i * d + j] * sd[i];
            }
        }
        let out = NumArray::from_raw(vec![n, d], data);
        self.push_checked(out, Op::RowScale { x, s }, "row_scale")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let vx = self.value(x);
        if shape.iter().product::<usize>() != vx.numel() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", vx.shape(), shape)));
        }
        let out = NumArray::from_raw(shape.to_vec(), vx.data().to_vec());
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Weighted-mean cross entropy over rows of `logits[N,K]` with integer
    /// targets and per-class weights: `Σᵢ w[tᵢ]·(−log softmax(xᵢ)[tᵢ]) / Σᵢ w[tᵢ]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], class_weights: &[f64]) -> Result<NodeId> {
        let (n, k) = dims2(self.value(logits), "cross_entropy")?;
        if targets.len() != n {
            return Err(shape_err("cross_entropy", format!("{} targets for {n} rows", targets.len())));
        }
        if class_weights.len() != k {
            return Err(shape_err("cross_entropy", format!("{} weights for {k} classes", class_weights.len())));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= k) {
            return Err(shape_err("cross_entropy", format!("target {bad} out of {k} classes")));
        }
        let xs = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut norm = 0.0;
        let mut loss = 0.0;
        for i in 0..n {
            let row = &xs[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..k {
                let e = (row[j] - mx).exp();
                probs[i * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                probs[i * k + j] /= sum;
            }
            let w = class_weights[targets[i]];
            norm += w;
            loss += w * (sum.ln() - (row[targets[i]] - mx));
        }
        if norm <= 0.0 {
            return Err(NumericsError::Contract("cross_entropy: total weight must be positive".into()));
        }
        let out = NumArray::from_raw(vec![1], vec![loss / norm]);
        self.push_checked(
            out,
            Op::CrossEntropy { logits, targets: targets.to_vec(), class_weights: class_weights.to_vec(), probs, norm },
            "cross_entropy",
        )
    }

    /// Reverse sweep from a scalar `root`. Returns gradients for leaf nodes;
    /// interior gradients are consumed during the sweep.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(NumericsError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<NumArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(NumArray::scalar(1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let g = if matches!(node.op, Op::Leaf) {
                continue;
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            self.backward_op(i, &g, &mut grads)?;
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if matches!(self.nodes[i].op, Op::Leaf) {
                    check_finite(g.data(), "backward")?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_op(&self, i: usize, g: &NumArray, grads: &mut [Option<NumArray>]) -> Result<()> {
        let accum = |grads: &mut [Option<NumArray>], id: NodeId, shape: &[usize], f: &mut dyn FnMut(&mut [f64])| {
            let slot = &mut grads[id.0];
            if slot.is_none() {
                *slot = Some(NumArray::zeros(shape));
            }
            f(slot.as_mut().unwrap().data_mut());
        };
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    accum(grads, id, self.value(id).shape(), &mut |dst| {
                        for (d, &gv) in dst.iter_mut().zip(gd) {
                            *d += gv;
                        }
                    });
                }
            }
            Op::Sub { a, b } => {
                accum(grads, *a, self.value(*a).shape(), &mut |dst| {
                    for (d, &gv) in dst.iter_mut().zip(gd) {
                        *d += gv;
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for (d, &gv) in dst.iter_mut().zip(gd) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                accum(grads, *a, self.value(*a).shape(), &mut |dst| {
                    for ((d, &gv), &bv) in dst.iter_mut().zip(gd).zip(vb) {
                        *d += gv * bv;
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for ((d, &gv), &av) in dst.iter_mut().zip(gd).zip(va) {
                        *d += gv * av;
                    }
                });
            }
            Op::Div { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                accum(grads, *a, self.value(*a).shape(), &mut |dst| {
                    for ((d, &gv), &bv) in dst.iter_mut().zip(gd).zip(vb) {
                        *d += gv / bv;
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d -= gd[j] * va[j] / (vb[j] * vb[j]);
                    }
                });
            }
            Op::AffineConst { x, mul } => {
                let m = *mul;
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (d, &gv) in dst.iter_mut().zip(gd) {
                        *d += m * gv;
                    }
                });
            }
            Op::Matmul { a, b } => {
                let (m, k) = dims2(self.value(*a), "matmul")?;
                let n = self.value(*b).shape()[1];
                let da = mm_nt(gd, self.value(*b).data(), m, n, k);
                let db = mm_tn(self.value(*a).data(), gd, m, k, n);
                accum(grads, *a, self.value(*a).shape(), &mut |dst| {
                    for (d, &v) in dst.iter_mut().zip(&da) {
                        *d += v;
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for (d, &v) in dst.iter_mut().zip(&db) {
                        *d += v;
                    }
                });
            }
            Op::Transpose2 { x } => {
                let (n, d) = dims2(self.value(*x), "transpose2")?;
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for i2 in 0..n {
                        for j in 0..d {
                            dst[i2 * d + j] += gd[j * n + i2];
                        }
                    }
                });
            }
            Op::AddBias { x, b } => {
                let (n, d) = dims2(self.value(*x), "add_bias")?;
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (dv, &gv) in dst.iter_mut().zip(gd) {
                        *dv += gv;
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for i2 in 0..n {
                        for j in 0..d {
                            dst[j] += gd[i2 * d + j];
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let vx = self.value(*x).data();
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        if vx[j] > 0.0 {
                            *d += gd[j];
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let vy = node.value.data();
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d += gd[j] * vy[j] * (1.0 - vy[j]);
                    }
                });
            }
            Op::Abs { x } => {
                let vx = self.value(*x).data();
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d += gd[j] * vx[j].signum() * if vx[j] == 0.0 { 0.0 } else { 1.0 };
                    }
                });
            }
            Op::EMin { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                accum(grads, *a, self.value(*a).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        if va[j] <= vb[j] {
                            *d += gd[j];
                        }
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        if vb[j] < va[j] {
                            *d += gd[j];
                        }
                    }
                });
            }
            Op::EMax { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                accum(grads, *a, self.value(*a).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        if va[j] >= vb[j] {
                            *d += gd[j];
                        }
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for (j, d) in dst.iter_mut().enumerate() {
                        if vb[j] > va[j] {
                            *d += gd[j];
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let shape = node.value.shape();
                let k = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for o in 0..outer {
                        for i2 in 0..inner {
                            let base = o * k * inner + i2;
                            let mut dot = 0.0;
                            for j in 0..k {
                                let idx = base + j * inner;
                                dot += gd[idx] * y[idx];
                            }
                            for j in 0..k {
                                let idx = base + j * inner;
                                dst[idx] += y[idx] * (gd[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                let gv = gd[0];
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad, cols } => {
                let (cin, h, win) = dims3(self.value(*x), "conv2d")?;
                let wsh = self.value(*w).shape();
                let (cout, kh, kw) = (wsh[0], wsh[2], wsh[3]);
                let oh = conv_out_extent(h, kh, *stride, *pad);
                let ow = conv_out_extent(win, kw, *stride, *pad);
                let ckk = cin * kh * kw;
                let np = oh * ow;
                // gradient in [P, Cout] layout
                let mut ghwc = vec![0.0; np * cout];
                for c in 0..cout {
                    for p in 0..np {
                        ghwc[p * cout + c] = gd[c * np + p];
                    }
                }
                let dw = mm_tn(&ghwc, cols, np, cout, ckk);
                accum(grads, *w, self.value(*w).shape(), &mut |dst| {
                    for (d, &v) in dst.iter_mut().zip(&dw) {
                        *d += v;
                    }
                });
                accum(grads, *b, self.value(*b).shape(), &mut |dst| {
                    for c in 0..cout {
                        let mut s = 0.0;
                        for p in 0..np {
                            s += ghwc[p * cout + c];
                        }
                        dst[c] += s;
                    }
                });
                let dcols = mm_nn(&ghwc, self.value(*w).data(), np, cout, ckk);
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let col = &dcols[(oy * ow + ox) * ckk..(oy * ow + ox + 1) * ckk];
                            let mut ci = 0;
                            for c in 0..cin {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - *pad as isize;
                                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < win as isize {
                                            dst[(c * h + iy as usize) * win + ix as usize] += col[ci];
                                        }
                                        ci += 1;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::GroupNorm { x, gamma, beta, groups, mean, inv_std } => {
                let (c, h, w) = dims3(self.value(*x), "group_norm")?;
                let hw = h * w;
                let cg = c / groups;
                let gsize = cg * hw;
                let xs = self.value(*x).data();
                let gam = self.value(*gamma).data();
                accum(grads, *gamma, self.value(*gamma).shape(), &mut |dst| {
                    for ch in 0..c {
                        let g2 = ch / cg;
                        let mut s = 0.0;
                        for p in 0..hw {
                            let idx = ch * hw + p;
                            s += gd[idx] * (xs[idx] - mean[g2]) * inv_std[g2];
                        }
                        dst[ch] += s;
                    }
                });
                accum(grads, *beta, self.value(*beta).shape(), &mut |dst| {
                    for ch in 0..c {
                        dst[ch] += gd[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                    }
                });
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for g2 in 0..*groups {
                        let lo = g2 * gsize;
                        // dxhat = gd * gamma (per channel); reduce within the group
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..gsize {
                            let idx = lo + j;
                            let ch = idx / hw;
                            let dxh = gd[idx] * gam[ch];
                            let xh = (xs[idx] - mean[g2]) * inv_std[g2];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                        let nf = gsize as f64;
                        for j in 0..gsize {
                            let idx = lo + j;
                            let ch = idx / hw;
                            let dxh = gd[idx] * gam[ch];
                            let xh = (xs[idx] - mean[g2]) * inv_std[g2];
                            dst[idx] += inv_std[g2] / nf * (nf * dxh - sum_dxh - xh * sum_dxh_xh);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, mean, inv_std } => {
                let (n, d) = dims2(self.value(*x), "layer_norm")?;
                let xs = self.value(*x).data();
                let gam = self.value(*gamma).data();
                accum(grads, *gamma, self.value(*gamma).shape(), &mut |dst| {
                    for i2 in 0..n {
                        for j in 0..d {
                            let idx = i2 * d + j;
                            dst[j] += gd[idx] * (xs[idx] - mean[i2]) * inv_std[i2];
                        }
                    }
                });
                accum(grads, *beta, self.value(*beta).shape(), &mut |dst| {
                    for i2 in 0..n {
                        for j in 0..d {
                            dst[j] += gd[i2 * d + j];
                        }
                    }
                });
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    let nf = d as f64;
                    for i2 in 0..n {
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            let idx = i2 * d + j;
                            let dxh = gd[idx] * gam[j];
                            let xh = (xs[idx] - mean[i2]) * inv_std[i2];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                        for j in 0..d {
                            let idx = i2 * d + j;
                            let dxh = gd[idx] * gam[j];
                            let xh = (xs[idx] - mean[i2]) * inv_std[i2];
                            dst[idx] += inv_std[i2] / nf * (nf * dxh - sum_dxh - xh * sum_dxh_xh);
                        }
                    }
                });
            }
            Op::Bilinear { feat, points } => {
                let (c, h, w) = dims3(self.value(*feat), "bilinear_sample")?;
                let fs = self.value(*feat).data();
                let ps = self.value(*points).data();
                let p = self.value(*points).shape()[0];
                accum(grads, *feat, self.value(*feat).shape(), &mut |dst| {
                    for pi in 0..p {
                        let r = ps[pi * 2];
                        let cc = ps[pi * 2 + 1];
                        let r0f = r.floor();
                        let c0f = cc.floor();
                        let dr = r - r0f;
                        let dc = cc - c0f;
                        let (r0, c0) = (r0f as isize, c0f as isize);
                        for (cy, cx, wgt) in [
                            (r0, c0, (1.0 - dr) * (1.0 - dc)),
                            (r0, c0 + 1, (1.0 - dr) * dc),
                            (r0 + 1, c0, dr * (1.0 - dc)),
                            (r0 + 1, c0 + 1, dr * dc),
                        ] {
                            if cy >= 0 && cy < h as isize && cx >= 0 && cx < w as isize {
                                let base = (cy as usize) * w + cx as usize;
                                for ch in 0..c {
                                    dst[ch * h * w + base] += wgt * gd[pi * c + ch];
                                }
                            }
                        }
                    }
                });
                accum(grads, *points, self.value(*points).shape(), &mut |dst| {
                    for pi in 0..p {
                        let r = ps[pi * 2];
                        let cc = ps[pi * 2 + 1];
                        let r0f = r.floor();
                        let c0f = cc.floor();
                        let dr = r - r0f;
                        let dc = cc - c0f;
                        let (r0, c0) = (r0f as isize, c0f as isize);
                        let fetch = |cy: isize, cx: isize, ch: usize| -> f64 {
                            if cy >= 0 && cy < h as isize && cx >= 0 && cx < w as isize {
                                fs[ch * h * w + (cy as usize) * w + cx as usize]
                            } else {
                                0.0
                            }
                        };
                        let mut grow = 0.0;
                        let mut gcol = 0.0;
                        for ch in 0..c {
                            let v00 = fetch(r0, c0, ch);
                            let v01 = fetch(r0, c0 + 1, ch);
                            let v10 = fetch(r0 + 1, c0, ch);
                            let v11 = fetch(r0 + 1, c0 + 1, ch);
                            let go = gd[pi * c + ch];
                            grow += go * (-(1.0 - dc) * v00 - dc * v01 + (1.0 - dc) * v10 + dc * v11);
                            gcol += go * (-(1.0 - dr) * v00 + (1.0 - dr) * v01 - dr * v10 + dr * v11);
                        }
                        dst[pi * 2] += grow;
                        dst[pi * 2 + 1] += gcol;
                    }
                });
            }
            Op::SelectRows { x, idx } => {
                let (_, d) = dims2(self.value(*x), "select_rows")?;
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (o, &i2) in idx.iter().enumerate() {
                        for j in 0..d {
                            dst[i2 * d + j] += gd[o * d + j];
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let (_, d) = dims2(self.value(*x), "slice_rows")?;
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (j, &gv) in gd.iter().enumerate() {
                        dst[start * d + j] += gv;
                    }
                });
            }
            Op::SliceCols { x, start, end } => {
                let (n, d) = dims2(self.value(*x), "slice_cols")?;
                let k = end - start;
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for i2 in 0..n {
                        for j in 0..k {
                            dst[i2 * d + start + j] += gd[i2 * k + j];
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut row = 0;
                for &pid in parts {
                    let (np, d) = dims2(self.value(pid), "concat_rows")?;
                    accum(grads, pid, self.value(pid).shape(), &mut |dst| {
                        for (j, dv) in dst.iter_mut().enumerate() {
                            *dv += gd[row * d + j];
                        }
                    });
                    row += np;
                }
            }
            Op::ConcatCols { parts } => {
                let n = self.value(parts[0]).shape()[0];
                let total = node.value.shape()[1];
                let mut off = 0;
                for &pid in parts {
                    let dp = self.value(pid).shape()[1];
                    accum(grads, pid, self.value(pid).shape(), &mut |dst| {
                        for i2 in 0..n {
                            for j in 0..dp {
                                dst[i2 * dp + j] += gd[i2 * total + off + j];
                            }
                        }
                    });
                    off += dp;
                }
            }
            Op::ToChw { x, h, w } => {
                let (n, c) = dims2(self.value(*x), "to_chw")?;
                let _ = (h, w);
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for p in 0..n {
                        for ch in 0..c {
                            dst[p * c + ch] += gd[ch * n + p];
                        }
                    }
                });
            }
            Op::ToHwc { x } => {
                let (c, h, w) = dims3(self.value(*x), "to_hwc")?;
                let n = h * w;
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for ch in 0..c {
                        for p in 0..n {
                            dst[ch * n + p] += gd[p * c + ch];
                        }
                    }
                });
            }
            Op::RowScale { x, s } => {
                let (n, d) = dims2(self.value(*x), "row_scale")?;
                let xs = self.value(*x).data();
                let sd = self.value(*s).data();
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for i2 in 0..n {
                        for j in 0..d {
                            dst[i2 * d + j] += gd[i2 * d + j] * sd[i2];
                        }
                    }
                });
                accum(grads, *s, self.value(*s).shape(), &mut |dst| {
                    for i2 in 0..n {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += gd[i2 * d + j] * xs[i2 * d + j];
                        }
                        dst[i2] += acc;
                    }
                });
            }
            Op::Reshape { x } => {
                accum(grads, *x, self.value(*x).shape(), &mut |dst| {
                    for (d, &gv) in dst.iter_mut().zip(gd) {
                        *d += gv;
                    }
                });
            }
            Op::CrossEntropy { logits, targets, class_weights, probs, norm } => {
                let (n, k) = dims2(self.value(*logits), "cross_entropy")?;
                let gv = gd[0];
                accum(grads, *logits, self.value(*logits).shape(), &mut |dst| {
                    for i2 in 0..n {
                        let w = class_weights[targets[i2]];
                        for j in 0..k {
                            let onehot = if j == targets[i2] { 1.0 } else { 0.0 };
                            dst[i2 * k + j] += gv * w * (probs[i2 * k + j] - onehot) / norm;
                        }
                    }
                });
            }
        }
        Ok(())
    }
}
