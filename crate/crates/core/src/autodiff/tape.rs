//! Dynamic reverse-mode tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the node list in reverse, so topological order is the insertion
//! order. A tape is rebuilt for every forward pass.

use super::tensor::{matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, bcast: bool },
    Sub { a: Var, b: Var, bcast: bool },
    Mul { a: Var, b: Var, bcast: bool },
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MeanPool(Var),
    SumAll(Var),
    SumCols(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Transpose(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    ExpandCols(Var),
    Reshape(Var),
    Gather { x: Var, idx: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations and their forward values.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a backward pass: one gradient per tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; nodes not reachable from the root get zeros.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_data(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.shapes[v.0].iter().product()],
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor (parameter, data or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = ta.matmul(tb)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Whether `b` is compatible with `a` elementwise, possibly broadcast over the leading dim.
    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return Ok(false);
        }
        let (_, n) = ta.dims2();
        let row_like = match tb.shape() {
            [k] => *k == n,
            [1, k] => *k == n,
            _ => false,
        };
        if ta.shape().len() == 2 && row_like {
            Ok(true)
        } else {
            Err(mismatch(op, ta, tb))
        }
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let bcast = self.broadcast_kind(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (_, n) = ta.dims2();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if bcast { tb.data()[i % n] } else { tb.data()[i] };
                f(x, y)
            })
            .collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, bcast))
    }

    /// Elementwise sum; `b` may be a row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bcast) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b, bcast }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bcast) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b, bcast }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bcast) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b, bcast }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = t.row_slice(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise softmax where entries with `allowed[i*n+j] == false` get exactly zero
    /// probability and never influence the row's normaliser.
    pub fn masked_softmax(&mut self, a: Var, allowed: &[bool]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2();
        if allowed.len() != m * n {
            return Err(Error::LengthMismatch {
                context: "masked_softmax mask",
                expected: m * n,
                actual: allowed.len(),
            });
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = t.row_slice(i);
            let mask = &allowed[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &ok)| ok)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!("mask row {i} allows no entries")));
            }
            let mut sum = 0.0;
            for j in 0..n {
                if mask[j] {
                    let e = (row[j] - max).exp();
                    data[i * n + j] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        // The Jacobian of a masked softmax has the same form as the plain one
        // because masked outputs are identically zero.
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = t.row_slice(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for j in 0..n {
                data[i * n + j] = row[j] - lse;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::LogSoftmax(a))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_pool(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (d, &x) in data.iter_mut().zip(t.row_slice(i)) {
                *d += x;
            }
        }
        for d in &mut data {
            *d /= m as f64;
        }
        let out = Tensor::new(vec![1, n], data).expect("row");
        self.push(out, Op::MeanPool(a))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over columns: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, _) = t.dims2();
        let data = (0..m).map(|i| t.row_slice(i).iter().sum()).collect();
        let out = Tensor::new(vec![m, 1], data).expect("column");
        self.push(out, Op::SumCols(a))
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let (m0, n0) = self.value(*first).dims2();
        let mut total = 0;
        for &v in inputs {
            let t = self.value(v);
            let (m, n) = t.dims2();
            let ok = t.shape().len() == 2 && if axis == 0 { n == n0 } else { m == m0 };
            if !ok || axis > 1 {
                return Err(mismatch("concat", self.value(*first), t));
            }
            total += if axis == 0 { m } else { n };
        }
        let (shape, data) = if axis == 0 {
            let data: Vec<f64> = inputs.iter().flat_map(|&v| self.value(v).data().to_vec()).collect();
            (vec![total, n0], data)
        } else {
            let mut data = Vec::with_capacity(m0 * total);
            for i in 0..m0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row_slice(i));
                }
            }
            (vec![m0, total], data)
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Half-open slice `[start, end)` of a rank-2 tensor along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let limit = if axis == 0 { m } else { n };
        if t.shape().len() != 2 || axis > 1 || start >= end || end > limit {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: format!("cannot slice [{start}, {end}) on axis {axis}"),
            });
        }
        let (shape, data) = if axis == 0 {
            (vec![end - start, n], t.data()[start * n..end * n].to_vec())
        } else {
            let mut data = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                data.extend_from_slice(&t.row_slice(i)[start..end]);
            }
            (vec![m, end - start], data)
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Slice { x: a, axis, start }))
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let mut data = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = t.row_slice(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                data[i * n + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::LayerNorm { x: a, inv_std })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp { x: a, lo, hi })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("minimum", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x.min(y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Minimum(a, b)))
    }

    /// Repeats a column vector `[m, 1]` into `[m, n]`.
    pub fn expand_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, k) = t.dims2();
        if k != 1 || n == 0 {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: format!("expand_cols needs a column vector, target width {n}"),
            });
        }
        let data = t.data().iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::ExpandCols(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Picks `x[i, idx[i]]` for every row: `[m, n] -> [m, 1]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.dims2();
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(Error::InvalidArgument(format!(
                "gather: {} indices for shape {:?}",
                idx.len(),
                t.shape()
            )));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| t.get2(i, j)).collect();
        let out = Tensor::new(vec![m, 1], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                x: a,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = &self.nodes[root.0].value;
        if root_val.numel() != 1 {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2();
                    let (_, n) = tb.dims2();
                    let bt = transpose_raw(tb.data(), k, n);
                    let ga = matmul_raw(&g, &bt, m, n, k);
                    let at = transpose_raw(ta.data(), m, k);
                    let gb = matmul_raw(&at, &g, k, m, n);
                    add_into(acc(&mut grads, *a, m * k), &ga);
                    add_into(acc(&mut grads, *b, k * n), &gb);
                }
                Op::Add { a, b, bcast } | Op::Sub { a, b, bcast } => {
                    let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    let tb_len = self.value(*b).numel();
                    let gb = acc(&mut grads, *b, tb_len);
                    for (i, &gi) in g.iter().enumerate() {
                        let j = if *bcast { i % tb_len } else { i };
                        gb[j] += sign * gi;
                    }
                }
                Op::Mul { a, b, bcast } => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    let nb = tb.len();
                    let mut ga = vec![0.0; g.len()];
                    let mut gb = vec![0.0; nb];
                    for (i, &gi) in g.iter().enumerate() {
                        let j = if *bcast { i % nb } else { i };
                        ga[i] = gi * tb[j];
                        gb[j] += gi * ta[i];
                    }
                    add_into(acc(&mut grads, *a, ga.len()), &ga);
                    add_into(acc(&mut grads, *b, nb), &gb);
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for (d, &gi) in ga.iter_mut().zip(&g) {
                        *d += c * gi;
                    }
                }
                Op::AddScalar(a) | Op::Reshape(a) => add_into(acc(&mut grads, *a, g.len()), &g),
                Op::Tanh(a) => unary(&mut grads, *a, &g, y, |_, yi| 1.0 - yi * yi, self),
                Op::Sigmoid(a) => unary(&mut grads, *a, &g, y, |_, yi| yi * (1.0 - yi), self),
                Op::Exp(a) => unary(&mut grads, *a, &g, y, |_, yi| yi, self),
                Op::Log(a) => unary(&mut grads, *a, &g, y, |xi, _| 1.0 / xi, self),
                Op::Square(a) => unary(&mut grads, *a, &g, y, |xi, _| 2.0 * xi, self),
                Op::Gelu(a) => unary(&mut grads, *a, &g, y, |xi, _| gelu_grad(xi), self),
                Op::Softmax(a) => {
                    let (m, n) = node.value.dims2();
                    let ga = acc(&mut grads, *a, m * n);
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let dot: f64 = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                        for j in r {
                            ga[j] += y[j] * (g[j] - dot);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let (m, n) = node.value.dims2();
                    let ga = acc(&mut grads, *a, m * n);
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let gsum: f64 = g[r.clone()].iter().sum();
                        for j in r {
                            ga[j] += g[j] - y[j].exp() * gsum;
                        }
                    }
                }
                Op::MeanPool(a) => {
                    let (m, n) = self.value(*a).dims2();
                    let ga = acc(&mut grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j] / m as f64;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let len = self.value(*a).numel();
                    for d in acc(&mut grads, *a, len).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::SumCols(a) => {
                    let (m, n) = self.value(*a).dims2();
                    let ga = acc(&mut grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[i];
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let (_, total_n) = node.value.dims2();
                    let mut offset = 0;
                    for &v in inputs {
                        let (m, n) = self.value(v).dims2();
                        let gv = acc(&mut grads, v, m * n);
                        if *axis == 0 {
                            add_into(gv, &g[offset * n..(offset + m) * n]);
                            offset += m;
                        } else {
                            for i in 0..m {
                                for j in 0..n {
                                    gv[i * n + j] += g[i * total_n + offset + j];
                                }
                            }
                            offset += n;
                        }
                    }
                }
                Op::Slice { x, axis, start } => {
                    let (m, n) = self.value(*x).dims2();
                    let (om, on) = node.value.dims2();
                    let gx = acc(&mut grads, *x, m * n);
                    for i in 0..om {
                        for j in 0..on {
                            let (si, sj) = if *axis == 0 { (i + start, j) } else { (i, j + start) };
                            gx[si * n + sj] += g[i * on + j];
                        }
                    }
                }
                Op::LayerNorm { x, inv_std } => {
                    let (m, n) = node.value.dims2();
                    let gx = acc(&mut grads, *x, m * n);
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let gm = g[r.clone()].iter().sum::<f64>() / n as f64;
                        let gy = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in r {
                            gx[j] += inv_std[i] * (g[j] - gm - y[j] * gy);
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = node.value.dims2();
                    let gt = transpose_raw(&g, m, n);
                    add_into(acc(&mut grads, *a, m * n), &gt);
                }
                Op::Clamp { x, lo, hi } => {
                    let xs = self.value(*x).data();
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        if xs[i] > *lo && xs[i] < *hi {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Minimum(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    let mut ga = vec![0.0; g.len()];
                    let mut gb = vec![0.0; g.len()];
                    for i in 0..g.len() {
                        if ta[i] <= tb[i] {
                            ga[i] = g[i];
                        } else {
                            gb[i] = g[i];
                        }
                    }
                    add_into(acc(&mut grads, *a, g.len()), &ga);
                    add_into(acc(&mut grads, *b, g.len()), &gb);
                }
                Op::ExpandCols(a) => {
                    let (m, n) = node.value.dims2();
                    let ga = acc(&mut grads, *a, m);
                    for i in 0..m {
                        ga[i] += g[i * n..(i + 1) * n].iter().sum::<f64>();
                    }
                }
                Op::Gather { x, idx } => {
                    let (m, n) = self.value(*x).dims2();
                    let gx = acc(&mut grads, *x, m * n);
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * n + j] += g[i];
                    }
                }
            }
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn unary(
    grads: &mut [Option<Vec<f64>>],
    a: Var,
    g: &[f64],
    y: &[f64],
    dfdx: impl Fn(f64, f64) -> f64,
    tape: &Tape,
) {
    let x = tape.value(a).data();
    let ga = grads[a.0].get_or_insert_with(|| vec![0.0; g.len()]);
    for i in 0..g.len() {
        ga[i] += g[i] * dfdx(x[i], y[i]);
    }
}
