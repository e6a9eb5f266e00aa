//! Reverse-mode automatic differentiation over a recorded computation.
//!
//! A [`Graph`] owns every value produced during a forward pass. Operations
//! append nodes in creation order, so walking node ids backwards is a valid
//! reverse topological order; gradient accumulation therefore happens in a
//! fixed order and is bit-reproducible.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Map(Var, Vec<T>),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    MeanRows(Var),
    BroadcastRows(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ShiftRows(Var, isize),
    Softmax(Var, usize),
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv2d(Var, Var, Var),
    MaxPool2(Var, Vec<usize>),
    SparseAttention {
        q: Var,
        k: Var,
        v: Var,
        sets: Rc<Vec<Vec<usize>>>,
        scale: T,
        weights: Vec<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in xs.iter_mut() {
        *v = *v / sum;
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf; receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, true)
    }

    /// A constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    /// Copies `x` into a new constant, cutting gradient flow through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, x: Var) -> &Tensor<T> {
        &self.nodes[x.0].value
    }

    pub fn shape(&self, x: Var) -> &[usize] {
        self.nodes[x.0].value.shape()
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `x`.
    pub fn grad(&self, x: Var) -> Option<&Tensor<T>> {
        self.grads.get(x.0).and_then(|g| g.as_ref())
    }

    fn dims2(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(x) {
            &[m, n] => Ok((m, n)),
            s => Err(Error::invalid(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map_values(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = &self.nodes[x.0].value;
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a bias vector `[n]` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.nodes[bias.0].value.data().to_vec();
        let mut v = self.nodes[x.0].value.clone();
        for row in v.data_mut().chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(&b) {
                *o = *o + bb;
            }
        }
        Ok(self.push(v, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Scales each row of `x` (`[m, n]`) by the matching entry of `col` (`[m, 1]`).
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "mul_col")?;
        if self.shape(col) != [m, 1] {
            return Err(Error::shape("mul_col", self.shape(x), self.shape(col)));
        }
        let c = self.nodes[col.0].value.data().to_vec();
        let mut v = self.nodes[x.0].value.clone();
        for (row, &s) in v.data_mut().chunks_mut(n).zip(&c) {
            for o in row.iter_mut() {
                *o = *o * s;
            }
        }
        Ok(self.push(v, Op::MulCol(x, col), &[x, col]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.map_values(x, |e| e * factor);
        self.push(v, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let v = self.map_values(x, |e| e + c);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.map_values(x, |e| if e <= T::zero() { T::zero() } else { e });
        self.push(v, Op::Relu(x), &[x])
    }

    /// Elementwise custom function with a caller-supplied derivative.
    pub fn map(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Var {
        let input = &self.nodes[x.0].value;
        let deriv = input.data().iter().map(|&e| df(e)).collect();
        let v = self.map_values(x, f);
        self.push(v, Op::Map(x, deriv), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
        );
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let v = Tensor::new(vec![n, m], out)?;
        Ok(self.push(v, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.nodes[x.0].value.clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Column means of a `[m, n]` matrix, as `[1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "mean_rows")?;
        if m == 0 {
            return Err(Error::invalid("mean_rows", "empty input"));
        }
        let src = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); n];
        for row in src.chunks(n) {
            for (o, &e) in out.iter_mut().zip(row) {
                *o = *o + e;
            }
        }
        let inv = T::one() / T::of(m as f64);
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        let v = Tensor::new(vec![1, n], out)?;
        Ok(self.push(v, Op::MeanRows(x), &[x]))
    }

    /// Repeats a `[1, n]` row `m` times.
    pub fn broadcast_rows(&mut self, x: Var, m: usize) -> Result<Var> {
        let (r, n) = self.dims2(x, "broadcast_rows")?;
        if r != 1 {
            return Err(Error::invalid("broadcast_rows", format!("expected one row, got {r}")));
        }
        let row = self.nodes[x.0].value.data().to_vec();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&row);
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::BroadcastRows(x), &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_rows")?;
        if start + len > m {
            return Err(Error::invalid(
                "slice_rows",
                format!("rows {start}..{} out of {m}", start + len),
            ));
        }
        let src = &self.nodes[x.0].value.data()[start * n..(start + len) * n];
        let v = Tensor::new(vec![len, n], src.to_vec())?;
        Ok(self.push(v, Op::SliceRows(x, start), &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (m, n2) = self.dims2(p, "concat_rows")?;
            if n2 != n {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += m;
            out.extend_from_slice(self.nodes[p.0].value.data());
        }
        let v = Tensor::new(vec![rows, n], out)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(Error::invalid(
                "slice_cols",
                format!("columns {start}..{} out of {n}", start + len),
            ));
        }
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(m * len);
        for row in src.chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let v = Tensor::new(vec![m, len], out)?;
        Ok(self.push(v, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m2, n) = self.dims2(p, "concat_cols")?;
            if m2 != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let v = Tensor::new(vec![m, total], out)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Row lookup, as used by embedding tables.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, n) = self.dims2(table, "gather_rows")?;
        let src = self.nodes[table.0].value.data();
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= rows {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row {id} out of {rows}"),
                ));
            }
            out.extend_from_slice(&src[id * n..(id + 1) * n]);
        }
        let v = Tensor::new(vec![ids.len(), n], out)?;
        Ok(self.push(v, Op::GatherRows(table, ids.to_vec()), &[table]))
    }

    /// `out[i] = x[i - offset]`, zero where that row does not exist.
    pub fn shift_rows(&mut self, x: Var, offset: isize) -> Result<Var> {
        let (m, n) = self.dims2(x, "shift_rows")?;
        let src = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let j = i as isize - offset;
            if j >= 0 && (j as usize) < m {
                let j = j as usize;
                out[i * n..(i + 1) * n].copy_from_slice(&src[j * n..(j + 1) * n]);
            }
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::ShiftRows(x, offset), &[x]))
    }

    fn check_finite(&self, x: Var, op: &'static str) -> Result<()> {
        if self.nodes[x.0].value.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        if shape[axis] == 0 {
            return Err(Error::invalid("softmax", "empty axis"));
        }
        self.check_finite(x, "softmax")?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let mut v = self.nodes[x.0].value.clone();
        let data = v.data_mut();
        let mut buf = vec![T::zero(); n];
        for o in 0..outer {
            for r in 0..inner {
                for i in 0..n {
                    buf[i] = data[(o * n + i) * inner + r];
                }
                softmax_in_place(&mut buf);
                for i in 0..n {
                    data[(o * n + i) * inner + r] = buf[i];
                }
            }
        }
        Ok(self.push(v, Op::Softmax(x, axis), &[x]))
    }

    /// Softmax over the last axis of a matrix restricted to entries where
    /// `keep` is true; excluded entries get weight exactly zero.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (m, n) = self.dims2(x, "masked_softmax")?;
        if keep.len() != m * n {
            return Err(Error::shape("masked_softmax", &[m, n], &[keep.len()]));
        }
        self.check_finite(x, "masked_softmax")?;
        let mut v = self.nodes[x.0].value.clone();
        for (row, mask) in v.data_mut().chunks_mut(n).zip(keep.chunks(n)) {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .fold(T::neg_infinity(), |acc, (&e, _)| acc.max(e));
            if max == T::neg_infinity() {
                return Err(Error::invalid("masked_softmax", "row with no kept entries"));
            }
            let mut sum = T::zero();
            for (e, &k) in row.iter_mut().zip(mask) {
                *e = if k { (*e - max).exp() } else { T::zero() };
                sum = sum + *e;
            }
            for e in row.iter_mut() {
                *e = *e / sum;
            }
        }
        Ok(self.push(v, Op::MaskedSoftmax(x), &[x]))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if n == 0 {
            return Err(Error::invalid("log_softmax", "empty axis"));
        }
        self.check_finite(x, "log_softmax")?;
        let mut v = self.nodes[x.0].value.clone();
        for row in v.data_mut().chunks_mut(n) {
            let max = row.iter().fold(T::neg_infinity(), |m, &e| m.max(e));
            let lse = row.iter().map(|&e| (e - max).exp()).sum::<T>().ln() + max;
            for e in row.iter_mut() {
                *e = *e - lse;
            }
        }
        Ok(self.push(v, Op::LogSoftmax(x), &[x]))
    }

    /// Layer normalization over the last axis with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if n == 0 {
            return Err(Error::invalid("layer_norm", "last axis is empty"));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm", "eps must be positive"));
        }
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        self.check_finite(x, "layer_norm")?;
        let eps = T::of(eps);
        let inv_n = T::one() / T::of(n as f64);
        let src = self.nodes[x.0].value.data();
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let rows = src.len() / n;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..n {
                let h = (row[i] - mean) * rs;
                xhat[r * n + i] = h;
                out[r * n + i] = h * g[i] + b[i];
            }
        }
        let v = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Valid (unpadded), stride-1 2-D cross-correlation over a batch.
    ///
    /// `x`: `[N, C, H, W]`, `w`: `[F, C, KH, KW]`, `b`: `[F]`;
    /// output `[N, F, H-KH+1, W-KW+1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[n, c, h, wd], &[f, c2, kh, kw]) = (&xs[..], &ws[..]) else {
            return Err(Error::shape("conv2d", &xs, &ws));
        };
        if c != c2 || self.shape(b) != [f] {
            return Err(Error::shape("conv2d", &xs, &ws));
        }
        if h < kh || wd < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("input {h}x{wd} smaller than kernel {kh}x{kw}"),
            ));
        }
        let (oh, ow) = (h - kh + 1, wd - kw + 1);
        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[w.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![T::zero(); n * f * oh * ow];
        for ni in 0..n {
            for fi in 0..f {
                let plane = &mut out[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
                plane.iter_mut().for_each(|o| *o = bv[fi]);
                for ci in 0..c {
                    let img = &xv[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wt = wv[((fi * c + ci) * kh + ky) * kw + kx];
                            for oy in 0..oh {
                                let src = &img[(oy + ky) * wd + kx..(oy + ky) * wd + kx + ow];
                                let dst = &mut plane[oy * ow..(oy + 1) * ow];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d = *d + wt * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        let v = Tensor::new(vec![n, f, oh, ow], out)?;
        Ok(self.push(v, Op::Conv2d(x, w, b), &[x, w, b]))
    }

    /// Disjoint 2x2 max pooling over the last two axes; odd trailing
    /// rows/columns are dropped. Ties resolve to the first cell in
    /// row-major order.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid("maxpool2x2", "need at least two axes"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h < 2 || w < 2 {
            return Err(Error::invalid(
                "maxpool2x2",
                format!("spatial extent {h}x{w} below 2x2"),
            ));
        }
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let (oh, ow) = (h / 2, w / 2);
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let mut oshape = shape.clone();
        let r = oshape.len();
        oshape[r - 2] = oh;
        oshape[r - 1] = ow;
        let v = Tensor::new(oshape, out)?;
        Ok(self.push(v, Op::MaxPool2(x, argmax), &[x]))
    }

    /// Attention restricted to per-query key sets.
    ///
    /// For query row `p`, logits `scale * q_p . k_j` are softmaxed over
    /// `j in sets[p]` and the output is the weighted sum of `v_j`. Only the
    /// listed pairs are ever computed.
    pub fn sparse_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        sets: Rc<Vec<Vec<usize>>>,
        scale: T,
    ) -> Result<Var> {
        let (lq, dq) = self.dims2(q, "sparse_attention")?;
        let (lk, dk) = self.dims2(k, "sparse_attention")?;
        let (lv, dv) = self.dims2(v, "sparse_attention")?;
        if dq != dk || lk != lv {
            return Err(Error::shape("sparse_attention", self.shape(q), self.shape(k)));
        }
        if sets.len() != lq {
            return Err(Error::invalid(
                "sparse_attention",
                format!("{} index sets for {lq} queries", sets.len()),
            ));
        }
        self.check_finite(q, "sparse_attention")?;
        self.check_finite(k, "sparse_attention")?;
        let (qv, kv, vv) = (
            self.nodes[q.0].value.data(),
            self.nodes[k.0].value.data(),
            self.nodes[v.0].value.data(),
        );
        let mut out = vec![T::zero(); lq * dv];
        let mut weights = Vec::with_capacity(lq);
        for (p, set) in sets.iter().enumerate() {
            if set.is_empty() || set.iter().any(|&j| j >= lk) {
                return Err(Error::invalid(
                    "sparse_attention",
                    format!("bad index set for position {p}: {set:?}"),
                ));
            }
            let qp = &qv[p * dq..(p + 1) * dq];
            let mut w: Vec<T> = set
                .iter()
                .map(|&j| dot(qp, &kv[j * dk..(j + 1) * dk]) * scale)
                .collect();
            softmax_in_place(&mut w);
            let orow = &mut out[p * dv..(p + 1) * dv];
            for (&j, &wj) in set.iter().zip(&w) {
                for (o, &e) in orow.iter_mut().zip(&vv[j * dv..(j + 1) * dv]) {
                    *o = *o + wj * e;
                }
            }
            weights.push(w);
        }
        let value = Tensor::new(vec![lq, dv], out)?;
        Ok(self.push(
            value,
            Op::SparseAttention {
                q,
                k,
                v,
                sets,
                scale,
                weights,
            },
            &[q, k, v],
        ))
    }

    /// Attention weights recorded by a [`Graph::sparse_attention`] node.
    pub fn attention_weights(&self, x: Var) -> Option<&[Vec<T>]> {
        match &self.nodes[x.0].op {
            Op::SparseAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Reverse-mode sweep from a single-element `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let root_shape = self.shape(root).to_vec();
        self.grads[root.0] = Some(Tensor::full(&root_shape, T::one()));
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &upstream);
            self.grads[id] = Some(upstream);
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, up: &Tensor<T>) {
        let dy = up.data();
        // Parents always have smaller ids, so node values can be borrowed
        // while parent gradient slots are mutated.
        let nodes = std::mem::take(&mut self.nodes);
        let node = &nodes[id];
        let val = |v: Var| nodes[v.0].value.data();
        let mut grads = std::mem::take(&mut self.grads);
        let mut acc = |target: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[target.0].requires_grad {
                return;
            }
            let shape = nodes[target.0].value.shape();
            let slot = grads[target.0].get_or_insert_with(|| Tensor::zeros(shape));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| {
                    for (o, &d) in g.iter_mut().zip(dy) {
                        *o = *o - d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((o, &d), &y) in g.iter_mut().zip(dy).zip(vb) {
                        *o = *o + d * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((o, &d), &x) in g.iter_mut().zip(dy).zip(va) {
                        *o = *o + d * x;
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |g| add_into(g, dy));
                let n = val(*b).len();
                acc(*b, &mut |g| {
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::MulCol(x, c) => {
                let n = *node.value.shape().last().unwrap();
                let (vx, vc) = (val(*x), val(*c));
                acc(*x, &mut |g| {
                    for ((grow, drow), &s) in g.chunks_mut(n).zip(dy.chunks(n)).zip(vc) {
                        for (o, &d) in grow.iter_mut().zip(drow) {
                            *o = *o + d * s;
                        }
                    }
                });
                acc(*c, &mut |g| {
                    for ((o, drow), xrow) in g.iter_mut().zip(dy.chunks(n)).zip(vx.chunks(n)) {
                        *o = *o + dot(drow, xrow);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |g| {
                for (o, &d) in g.iter_mut().zip(dy) {
                    *o = *o + d * *s;
                }
            }),
            Op::AddScalar(x) => acc(*x, &mut |g| add_into(g, dy)),
            Op::Relu(x) => {
                let vx = val(*x);
                acc(*x, &mut |g| {
                    for ((o, &d), &e) in g.iter_mut().zip(dy).zip(vx) {
                        if e > T::zero() {
                            *o = *o + d;
                        }
                    }
                });
            }
            Op::Map(x, deriv) => acc(*x, &mut |g| {
                for ((o, &d), &k) in g.iter_mut().zip(dy).zip(deriv) {
                    *o = *o + d * k;
                }
            }),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                acc(*a, &mut |g| {
                    for i in 0..m {
                        let drow = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            g[i * k + p] = g[i * k + p] + dot(drow, &vb[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..m {
                        let drow = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = va[i * k + p];
                            for (o, &d) in g[p * n..(p + 1) * n].iter_mut().zip(drow) {
                                *o = *o + aip * d;
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (m, n) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                acc(*x, &mut |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] = g[i * n + j] + dy[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |g| add_into(g, dy)),
            Op::Sum(x) => {
                let d = dy[0];
                acc(*x, &mut |g| {
                    for o in g.iter_mut() {
                        *o = *o + d;
                    }
                });
            }
            Op::MeanRows(x) => {
                let m = nodes[x.0].value.shape()[0];
                let n = dy.len();
                let inv = T::one() / T::of(m as f64);
                acc(*x, &mut |g| {
                    for row in g.chunks_mut(n) {
                        for (o, &d) in row.iter_mut().zip(dy) {
                            *o = *o + d * inv;
                        }
                    }
                });
            }
            Op::BroadcastRows(x) => {
                let n = val(*x).len();
                acc(*x, &mut |g| {
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let n = *node.value.shape().last().unwrap();
                acc(*x, &mut |g| add_into(&mut g[start * n..start * n + dy.len()], dy));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, &mut |g| add_into(g, &dy[off..off + len]));
                    off += len;
                }
            }
            Op::SliceCols(x, start) => {
                let n = nodes[x.0].value.shape()[1];
                let len = node.value.shape()[1];
                acc(*x, &mut |g| {
                    for (grow, drow) in g.chunks_mut(n).zip(dy.chunks(len)) {
                        add_into(&mut grow[*start..start + len], drow);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].value.shape()[1];
                    acc(*p, &mut |g| {
                        for (grow, drow) in g.chunks_mut(w).zip(dy.chunks(total)) {
                            add_into(grow, &drow[off..off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::GatherRows(table, ids) => {
                let n = nodes[table.0].value.shape()[1];
                acc(*table, &mut |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * n..(id + 1) * n], &dy[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::ShiftRows(x, offset) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*x, &mut |g| {
                    for i in 0..m {
                        let j = i as isize - offset;
                        if j >= 0 && (j as usize) < m {
                            let j = j as usize;
                            add_into(&mut g[j * n..(j + 1) * n], &dy[i * n..(i + 1) * n]);
                        }
                    }
                });
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for r in 0..inner {
                            let idx = |i: usize| (o * n + i) * inner + r;
                            let s: T = (0..n).map(|i| y[idx(i)] * dy[idx(i)]).sum();
                            for i in 0..n {
                                g[idx(i)] = g[idx(i)] + y[idx(i)] * (dy[idx(i)] - s);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax(x) => {
                let y = node.value.data();
                let n = node.value.shape()[1];
                acc(*x, &mut |g| {
                    for ((grow, yrow), drow) in g.chunks_mut(n).zip(y.chunks(n)).zip(dy.chunks(n)) {
                        let s = dot(yrow, drow);
                        for i in 0..n {
                            grow[i] = grow[i] + yrow[i] * (drow[i] - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                acc(*x, &mut |g| {
                    for ((grow, yrow), drow) in g.chunks_mut(n).zip(y.chunks(n)).zip(dy.chunks(n)) {
                        let s: T = drow.iter().copied().sum();
                        for i in 0..n {
                            grow[i] = grow[i] + drow[i] - yrow[i].exp() * s;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = *node.value.shape().last().unwrap();
                let gv = val(*gain);
                let inv_n = T::one() / T::of(n as f64);
                acc(*x, &mut |g| {
                    for (r, &rs) in rstd.iter().enumerate() {
                        let h = &xhat[r * n..(r + 1) * n];
                        let d = &dy[r * n..(r + 1) * n];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for i in 0..n {
                            let dh = d[i] * gv[i];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * h[i];
                        }
                        mean_dh = mean_dh * inv_n;
                        mean_dh_h = mean_dh_h * inv_n;
                        for i in 0..n {
                            let dh = d[i] * gv[i];
                            g[r * n + i] = g[r * n + i] + rs * (dh - mean_dh - h[i] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (drow, hrow) in dy.chunks(n).zip(xhat.chunks(n)) {
                        for i in 0..n {
                            g[i] = g[i] + drow[i] * hrow[i];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for drow in dy.chunks(n) {
                        add_into(g, drow);
                    }
                });
            }
            Op::Conv2d(x, w, b) => {
                let xs = nodes[x.0].value.shape();
                let ws = nodes[w.0].value.shape();
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (f, kh, kw) = (ws[0], ws[2], ws[3]);
                let (oh, ow) = (h - kh + 1, wd - kw + 1);
                let (xv, wv) = (val(*x), val(*w));
                acc(*x, &mut |g| {
                    for ni in 0..n {
                        for fi in 0..f {
                            let dplane = &dy[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
                            for ci in 0..c {
                                let gimg = &mut g[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let wt = wv[((fi * c + ci) * kh + ky) * kw + kx];
                                        for oy in 0..oh {
                                            let dst = &mut gimg[(oy + ky) * wd + kx..(oy + ky) * wd + kx + ow];
                                            for (o, &d) in dst.iter_mut().zip(&dplane[oy * ow..(oy + 1) * ow]) {
                                                *o = *o + wt * d;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*w, &mut |g| {
                    for ni in 0..n {
                        for fi in 0..f {
                            let dplane = &dy[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
                            for ci in 0..c {
                                let img = &xv[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let mut s = T::zero();
                                        for oy in 0..oh {
                                            s = s + dot(
                                                &dplane[oy * ow..(oy + 1) * ow],
                                                &img[(oy + ky) * wd + kx..(oy + ky) * wd + kx + ow],
                                            );
                                        }
                                        let wi = ((fi * c + ci) * kh + ky) * kw + kx;
                                        g[wi] = g[wi] + s;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*b, &mut |g| {
                    for ni in 0..n {
                        for fi in 0..f {
                            let dplane = &dy[(ni * f + fi) * oh * ow..(ni * f + fi + 1) * oh * ow];
                            g[fi] = g[fi] + dplane.iter().copied().sum::<T>();
                        }
                    }
                });
            }
            Op::MaxPool2(x, argmax) => acc(*x, &mut |g| {
                for (&src, &d) in argmax.iter().zip(dy) {
                    g[src] = g[src] + d;
                }
            }),
            Op::SparseAttention {
                q,
                k,
                v,
                sets,
                scale,
                weights,
            } => {
                let dq = nodes[q.0].value.shape()[1];
                let dv = nodes[v.0].value.shape()[1];
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                // d(logit_pj) = w_pj * (dout_p . v_j - sum_i w_pi dout_p . v_i)
                let dlogits: Vec<Vec<T>> = sets
                    .iter()
                    .zip(weights)
                    .enumerate()
                    .map(|(p, (set, w))| {
                        let drow = &dy[p * dv..(p + 1) * dv];
                        let dw: Vec<T> =
                            set.iter().map(|&j| dot(drow, &vv[j * dv..(j + 1) * dv])).collect();
                        let s = dot(w, &dw);
                        w.iter().zip(&dw).map(|(&wj, &d)| wj * (d - s) * *scale).collect()
                    })
                    .collect();
                acc(*q, &mut |g| {
                    for (p, (set, dl)) in sets.iter().zip(&dlogits).enumerate() {
                        let grow = &mut g[p * dq..(p + 1) * dq];
                        for (&j, &c) in set.iter().zip(dl) {
                            for (o, &e) in grow.iter_mut().zip(&kv[j * dq..(j + 1) * dq]) {
                                *o = *o + c * e;
                            }
                        }
                    }
                });
                acc(*k, &mut |g| {
                    for (p, (set, dl)) in sets.iter().zip(&dlogits).enumerate() {
                        let qp = &qv[p * dq..(p + 1) * dq];
                        for (&j, &c) in set.iter().zip(dl) {
                            for (o, &e) in g[j * dq..(j + 1) * dq].iter_mut().zip(qp) {
                                *o = *o + c * e;
                            }
                        }
                    }
                });
                acc(*v, &mut |g| {
                    for (p, (set, w)) in sets.iter().zip(weights).enumerate() {
                        let drow = &dy[p * dv..(p + 1) * dv];
                        for (&j, &wj) in set.iter().zip(w) {
                            for (o, &d) in g[j * dv..(j + 1) * dv].iter_mut().zip(drow) {
                                *o = *o + wj * d;
                            }
                        }
                    }
                });
            }
        }
        self.nodes = nodes;
        self.grads = grads;
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o = *o + s;
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Row-major `[m, k] x [k, n]` product accumulating over `k` in order.
pub fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, &e) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + aip * e;
            }
        }
    }
    c
}
