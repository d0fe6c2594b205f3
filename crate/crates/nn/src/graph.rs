//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward and
//! backward pass. Nodes are appended in evaluation order, so the reverse of
//! insertion order is a valid topological order for backpropagation. The
//! graph is dropped after each step; nothing is retained between steps.

use crate::error::{shape_err, NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{pairwise_sum, Scalar};
use crate::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    MatMulABt(Var, Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Tanh(Var),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    Conv2dS2 { x: Var, w: Var, b: Var },
    Mse { pred: Var, target: Var },
    WeightedSum { x: Var, weights: Tensor<T> },
}

struct Node<T> {
    op: Op<T>,
    // `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an arbitrary node, if it influenced the loss.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    /// Gradients for every parameter in store order; untouched and frozen
    /// parameters get zeros.
    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }
}

fn dims2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return shape_err(op, format!("expected a matrix, got {:?}", t.shape()));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * du
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => self.params.value(*id),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op_name: &'static str, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input. Gradients still reach it and can be queried.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push("input", Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x[L,in] · w[in,out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (l, inp) = dims2("linear", xv)?;
        let (win, out) = dims2("linear", wv)?;
        if inp != win || bv.shape() != [out] {
            return shape_err(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            );
        }
        let mut y = Vec::with_capacity(l * out);
        for _ in 0..l {
            y.extend_from_slice(bv.data());
        }
        matmul_acc(xv.data(), wv.data(), &mut y, l, inp, out);
        let y = Tensor::new(vec![l, out], y)?;
        self.push("linear", Op::Linear { x, w, b }, y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err("add", format!("{:?} vs {:?}", av.shape(), bv.shape()));
        }
        let mut y = av.clone();
        y.add_assign(bv);
        self.push("add", Op::Add(a, b), y)
    }

    pub fn scale(&mut self, a: Var, f: T) -> Result<Var> {
        let y = self.value(a).map(|x| x * f);
        self.push("scale", Op::Scale(a, f), y)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims2("matmul", av)?;
        let (k2, n) = dims2("matmul", bv)?;
        if k != k2 {
            return shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape()));
        }
        let mut y = vec![T::zero(); m * n];
        matmul_acc(av.data(), bv.data(), &mut y, m, k, n);
        let y = Tensor::new(vec![m, n], y)?;
        self.push("matmul", Op::MatMul(a, b), y)
    }

    /// `a[m,k] · b[n,k]ᵀ`.
    pub fn matmul_a_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims2("matmul_a_bt", av)?;
        let (n, k2) = dims2("matmul_a_bt", bv)?;
        if k != k2 {
            return shape_err("matmul_a_bt", format!("{:?} x {:?}ᵀ", av.shape(), bv.shape()));
        }
        let mut y = vec![T::zero(); m * n];
        matmul_a_bt_acc(av.data(), bv.data(), &mut y, m, k, n);
        let y = Tensor::new(vec![m, n], y)?;
        self.push("matmul_a_bt", Op::MatMulABt(a, b), y)
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = dims2("softmax", av)?;
        let mut y = av.data().to_vec();
        for row in y.chunks_mut(c) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            for x in row.iter_mut() {
                *x = (*x - max).exp();
            }
            let z = pairwise_sum(row);
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let y = Tensor::new(vec![r, c], y)?;
        self.push("softmax", Op::Softmax(a), y)
    }

    /// Normalizes each row to zero mean / unit variance, then applies
    /// `gain` and `bias` (both of the row width).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = dims2("layer_norm", xv)?;
        if gv.shape() != [c] || bv.shape() != [c] {
            return shape_err("layer_norm", format!("row width {c}, gain {:?}", gv.shape()));
        }
        let n = T::of(c as f64);
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut y = Vec::with_capacity(r * c);
        let mut scratch = vec![T::zero(); c];
        for row in xv.data().chunks(c) {
            let mean = pairwise_sum(row) / n;
            for (s, &v) in scratch.iter_mut().zip(row) {
                *s = (v - mean) * (v - mean);
            }
            let var = pairwise_sum(&scratch) / n;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                y.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let y = Tensor::new(vec![r, c], y)?;
        self.push(
            "layer_norm",
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            y,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(gelu);
        self.push("gelu", Op::Gelu(a), y)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(|x| x.tanh());
        self.push("tanh", Op::Tanh(a), y)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat_rows(&tensors)?;
        self.push("concat_rows", Op::ConcatRows(parts.to_vec()), y)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, _) = dims2("slice_rows", xv)?;
        if start + len > r || len == 0 {
            return shape_err("slice_rows", format!("[{start}, {}) of {r} rows", start + len));
        }
        let y = xv.slice_rows(start, len);
        self.push("slice_rows", Op::SliceRows { x, start }, y)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let r = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2("concat_cols", self.value(p))?;
            if pr != r {
                return shape_err("concat_cols", format!("{pr} rows vs {r}"));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                y.extend_from_slice(self.value(p).row(i));
            }
        }
        let y = Tensor::new(vec![r, total], y)?;
        self.push("concat_cols", Op::ConcatCols(parts.to_vec()), y)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = dims2("slice_cols", xv)?;
        if start + len > c || len == 0 {
            return shape_err("slice_cols", format!("[{start}, {}) of {c} cols", start + len));
        }
        let mut y = Vec::with_capacity(r * len);
        for i in 0..r {
            y.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let y = Tensor::new(vec![r, len], y)?;
        self.push("slice_cols", Op::SliceCols { x, start }, y)
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        self.push("reshape", Op::Reshape(x), y)
    }

    /// 3×3 convolution (cross-correlation), stride 2, zero padding 1.
    ///
    /// `x` is `[H, W, c_in]`, `w` is `[3, 3, c_in, c_out]`, `b` is `[c_out]`;
    /// the output is `[H/2, W/2, c_out]`.
    pub fn conv2d_s2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 3 || wv.rank() != 4 {
            return shape_err("conv2d_s2", format!("x {:?}, w {:?}", xv.shape(), wv.shape()));
        }
        let (h, wd, ci) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let co = wv.shape()[3];
        if h % 2 != 0 || wd % 2 != 0 {
            return shape_err("conv2d_s2", format!("odd spatial dims {h}x{wd}"));
        }
        if wv.shape() != [3, 3, ci, co] || bv.shape() != [co] {
            return shape_err(
                "conv2d_s2",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            );
        }
        let (oh, ow) = (h / 2, wd / 2);
        let (xd, wdat) = (xv.data(), wv.data());
        let mut y = Vec::with_capacity(oh * ow * co);
        for _ in 0..oh * ow {
            y.extend_from_slice(bv.data());
        }
        for oy in 0..oh {
            for ox in 0..ow {
                let out = &mut y[(oy * ow + ox) * co..(oy * ow + ox + 1) * co];
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let xin = &xd[(iy as usize * wd + ix as usize) * ci..][..ci];
                        let wk = &wdat[(ky * 3 + kx) * ci * co..][..ci * co];
                        matmul_acc(xin, wk, out, 1, ci, co);
                    }
                }
            }
        }
        let y = Tensor::new(vec![oh, ow, co], y)?;
        self.push("conv2d_s2", Op::Conv2dS2 { x, w, b }, y)
    }

    /// `(1/M) Σ_i ‖target_i − pred_i‖²` over the rows of two `[M, d]` matrices.
    pub fn mse_rows(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() || pv.rank() != 2 {
            return shape_err("mse_rows", format!("{:?} vs {:?}", pv.shape(), tv.shape()));
        }
        let sq: Vec<T> = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&p, &t)| (t - p) * (t - p))
            .collect();
        let loss = pairwise_sum(&sq) / T::of(pv.rows() as f64);
        self.push("mse_rows", Op::Mse { pred, target }, Tensor::scalar(loss))
    }

    /// `Σ x ⊙ weights`, a scalar readout for probing gradients.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return shape_err("weighted_sum", format!("{:?} vs {:?}", xv.shape(), weights.shape()));
        }
        let prod: Vec<T> = xv
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let s = pairwise_sum(&prod);
        self.push("weighted_sum", Op::WeightedSum { x, weights }, Tensor::scalar(s))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }

        let mut params: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
            .collect();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                if self.params.get(*id).trainable {
                    params[id.0].add_assign(g);
                }
            }
        }
        for g in &params {
            if !g.is_finite() {
                return Err(NnError::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backprop_node(
        &self,
        idx: usize,
        dy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let mut acc = |v: Var, g: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let y = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (l, inp) = (xv.rows(), xv.cols());
                let out = wv.cols();
                let mut dx = vec![T::zero(); l * inp];
                matmul_a_bt_acc(dy.data(), wv.data(), &mut dx, l, out, inp);
                let mut dw = vec![T::zero(); inp * out];
                matmul_at_b_acc(xv.data(), dy.data(), &mut dw, l, inp, out);
                let db = column_sums(dy.data(), l, out);
                acc(*x, Tensor::new(vec![l, inp], dx)?);
                acc(*w, Tensor::new(vec![inp, out], dw)?);
                acc(*b, Tensor::new(vec![out], db)?);
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Scale(a, f) => acc(*a, dy.map(|g| g * *f)),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![T::zero(); m * k];
                matmul_a_bt_acc(dy.data(), bv.data(), &mut da, m, n, k);
                let mut db = vec![T::zero(); k * n];
                matmul_at_b_acc(av.data(), dy.data(), &mut db, m, k, n);
                acc(*a, Tensor::new(vec![m, k], da)?);
                acc(*b, Tensor::new(vec![k, n], db)?);
            }
            Op::MatMulABt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                let mut da = vec![T::zero(); m * k];
                matmul_acc(dy.data(), bv.data(), &mut da, m, n, k);
                let mut db = vec![T::zero(); n * k];
                matmul_at_b_acc(dy.data(), av.data(), &mut db, m, n, k);
                acc(*a, Tensor::new(vec![m, k], da)?);
                acc(*b, Tensor::new(vec![n, k], db)?);
            }
            Op::Softmax(a) => {
                let y = y.expect("softmax value");
                let c = y.cols();
                let mut dx = Vec::with_capacity(y.len());
                let mut scratch = vec![T::zero(); c];
                for (yr, gr) in y.data().chunks(c).zip(dy.data().chunks(c)) {
                    for ((s, &yv), &gv) in scratch.iter_mut().zip(yr).zip(gr) {
                        *s = yv * gv;
                    }
                    let dot = pairwise_sum(&scratch);
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                acc(*a, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain);
                let c = gv.len();
                let r = rstd.len();
                let n = T::of(c as f64);
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                let mut dx = Vec::with_capacity(r * c);
                let mut dxh = vec![T::zero(); c];
                let mut dxh_xh = vec![T::zero(); c];
                for i in 0..r {
                    let gr = &dy.data()[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    for j in 0..c {
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                        dxh[j] = gr[j] * gv.data()[j];
                        dxh_xh[j] = dxh[j] * hr[j];
                    }
                    let mean_dxh = pairwise_sum(&dxh) / n;
                    let mean_dxh_xh = pairwise_sum(&dxh_xh) / n;
                    for j in 0..c {
                        dx.push(rstd[i] * (dxh[j] - mean_dxh - hr[j] * mean_dxh_xh));
                    }
                }
                acc(*x, Tensor::new(vec![r, c], dx)?);
                acc(*gain, Tensor::new(vec![c], dg)?);
                acc(*bias, Tensor::new(vec![c], db)?);
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let dx = av
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&x, &g)| g * gelu_grad(x))
                    .collect();
                acc(*a, Tensor::new(av.shape().to_vec(), dx)?);
            }
            Op::Tanh(a) => {
                let y = y.expect("tanh value");
                let dx = y
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&t, &g)| g * (T::one() - t * t))
                    .collect();
                acc(*a, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    acc(p, dy.slice_rows(start, rows));
                    start += rows;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * c..start * c + dy.len()].copy_from_slice(dy.data());
                acc(*x, dx);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, dy.clone().reshape(&shape)?);
            }
            Op::ConcatCols(parts) => {
                let r = dy.rows();
                let total = dy.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut g = Vec::with_capacity(r * w);
                    for i in 0..r {
                        g.extend_from_slice(&dy.data()[i * total + offset..i * total + offset + w]);
                    }
                    acc(p, Tensor::new(vec![r, w], g)?);
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let w = dy.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..r {
                    dx.data_mut()[i * c + start..i * c + start + w].copy_from_slice(dy.row(i));
                }
                acc(*x, dx);
            }
            Op::Conv2dS2 { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (h, wd, ci) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let co = wv.shape()[3];
                let (oh, ow) = (h / 2, wd / 2);
                let mut dx = vec![T::zero(); h * wd * ci];
                let mut dw = vec![T::zero(); 9 * ci * co];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = &dy.data()[(oy * ow + ox) * co..][..co];
                        for ky in 0..3 {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let base = (iy as usize * wd + ix as usize) * ci;
                                let koff = (ky * 3 + kx) * ci * co;
                                // dx[ci] += Σ_co w[ci,co] g[co]
                                matmul_a_bt_acc(
                                    g,
                                    &wv.data()[koff..koff + ci * co],
                                    &mut dx[base..base + ci],
                                    1,
                                    co,
                                    ci,
                                );
                                // dw[ci,co] += x[ci] g[co]
                                matmul_acc(
                                    &xv.data()[base..base + ci],
                                    g,
                                    &mut dw[koff..koff + ci * co],
                                    ci,
                                    1,
                                    co,
                                );
                            }
                        }
                    }
                }
                let db = column_sums(dy.data(), oh * ow, co);
                acc(*x, Tensor::new(vec![h, wd, ci], dx)?);
                acc(*w, Tensor::new(vec![3, 3, ci, co], dw)?);
                acc(*b, Tensor::new(vec![co], db)?);
            }
            Op::Mse { pred, target } => {
                let (pv, tv) = (self.value(*pred), self.value(*target));
                let f = T::of(2.0) / T::of(pv.rows() as f64) * dy.item();
                let dp: Vec<T> = pv
                    .data()
                    .iter()
                    .zip(tv.data())
                    .map(|(&p, &t)| f * (p - t))
                    .collect();
                let dt = dp.iter().map(|&v| -v).collect();
                acc(*pred, Tensor::new(pv.shape().to_vec(), dp)?);
                acc(*target, Tensor::new(tv.shape().to_vec(), dt)?);
            }
            Op::WeightedSum { x, weights } => {
                let g = dy.item();
                acc(*x, weights.map(|w| w * g));
            }
        }
        Ok(())
    }
}

fn column_sums<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut col = vec![T::zero(); rows];
    (0..cols)
        .map(|j| {
            for i in 0..rows {
                col[i] = data[i * cols + j];
            }
            pairwise_sum(&col)
        })
        .collect()
}
