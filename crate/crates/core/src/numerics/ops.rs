use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterRows { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    RepeatRow(Var),
    DepthwiseConv { x: Var, kernel: Var, bias: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Softmax(Var),
    Gelu(Var),
    Mse { pred: Var, target: Var },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::RepeatRow(x)
            | Op::Softmax(x)
            | Op::Gelu(x) => vec![*x],
            Op::GatherRows { x, .. } | Op::ScatterRows { x, .. } | Op::SliceCols { x, .. } => {
                vec![*x]
            }
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
            Op::DepthwiseConv { x, kernel, bias } => vec![*x, *kernel, *bias],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Mse { pred, .. } => vec![*pred],
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn conv_raw(x: &[f64], kernel: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        let kc = &kernel[ch * k * k..(ch + 1) * k * k];
        let oc = &mut out[ch * h * w..(ch + 1) * h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0;
                for u in 0..k as isize {
                    let si = i + u - pad;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for v in 0..k as isize {
                        let sj = j + v - pad;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        acc += kc[(u * k as isize + v) as usize] * xc[(si * w as isize + sj) as usize];
                    }
                }
                oc[(i * w as isize + j) as usize] = acc;
            }
        }
    }
    out
}

impl Tape {
    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let rg = self.requires_grad(x);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    /// Matrix product of `m×k` and `k×n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([m, n], data)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let v = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|e| e * factor).collect())
            .expect("same shape");
        self.unary(x, v, Op::Scale(x, factor))
    }

    /// Adds a length-`C` vector to every row of a `…×C` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(bias) != [c] {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let bv = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(&bv).map(|(a, b)| a + b))
            .collect();
        let v = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(v, Op::AddRow(x, bias), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.unary(x, v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / xv.numel() as f64);
        self.unary(x, v, Op::Mean(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "transpose")?;
        let data = transpose_raw(self.value(x).data(), r, c);
        let v = Tensor::new([c, r], data)?;
        Ok(self.unary(x, v, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.unary(x, v, Op::Reshape(x)))
    }

    /// Rows `idx[0], idx[1], …` of a rank-2 tensor.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Param(format!("gather_rows: row {bad} out of range for {r} rows")));
        }
        let xv = self.value(x);
        let data = idx.iter().flat_map(|&i| xv.row(i).iter().copied()).collect();
        let v = Tensor::new([idx.len(), c], data)?;
        Ok(self.unary(x, v, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    /// Places row `i` of `x` at row `idx[i]` of a zero `rows×C` tensor.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "scatter_rows")?;
        if r != idx.len() {
            return Err(Error::shape("scatter_rows", self.shape(x), &[idx.len()]));
        }
        let mut seen = vec![false; rows];
        for &i in idx {
            if i >= rows || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Param(format!(
                    "scatter_rows: target row {i} is out of range or repeated"
                )));
            }
        }
        let xv = self.value(x);
        let mut data = vec![0.0; rows * c];
        for (src, &dst) in idx.iter().enumerate() {
            data[dst * c..(dst + 1) * c].copy_from_slice(xv.row(src));
        }
        let v = Tensor::new([rows, c], data)?;
        Ok(self.unary(x, v, Op::ScatterRows { x, idx: idx.to_vec() }))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Param("concat_rows: no inputs".into()))?;
        let (_, c) = dims2(self.value(*first), "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (r, c2) = dims2(self.value(x), "concat_rows")?;
            if c2 != c {
                return Err(Error::shape("concat_rows", self.shape(*first), self.shape(x)));
            }
            rows += r;
            data.extend_from_slice(self.value(x).data());
        }
        let rg = self.any_grad(xs);
        Ok(self.push(Tensor::new([rows, c], data)?, Op::ConcatRows(xs.to_vec()), rg))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "slice_cols")?;
        if start > end || end > c {
            return Err(Error::Param(format!("slice_cols: {start}..{end} out of range for {c} columns")));
        }
        let xv = self.value(x);
        let data = (0..r).flat_map(|i| xv.row(i)[start..end].iter().copied()).collect();
        let v = Tensor::new([r, end - start], data)?;
        Ok(self.unary(x, v, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Param("concat_cols: no inputs".into()))?;
        let (r, _) = dims2(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r2, c) = dims2(self.value(x), "concat_cols")?;
            if r2 != r {
                return Err(Error::shape("concat_cols", self.shape(*first), self.shape(x)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(i));
            }
        }
        let rg = self.any_grad(xs);
        Ok(self.push(Tensor::new([r, total], data)?, Op::ConcatCols(xs.to_vec()), rg))
    }

    /// Stacks `n` copies of a length-`C` vector into an `n×C` tensor.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::shape("repeat_row", xv.shape(), &[0]));
        }
        let c = xv.numel();
        let data = std::iter::repeat_n(xv.data(), n).flatten().copied().collect();
        let v = Tensor::new([n, c], data)?;
        Ok(self.unary(x, v, Op::RepeatRow(x)))
    }

    /// Per-channel `k×k` cross-correlation with zero padding `(k-1)/2`.
    ///
    /// `x` is `C×H×W`, `kernel` is `C×k×k`, `bias` is `C`; the output keeps
    /// the input resolution.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape("depthwise_conv2d", s, self.shape(kernel))),
        };
        let k = match self.shape(kernel) {
            [kc, k1, k2] if *kc == c && k1 == k2 => *k1,
            s => return Err(Error::shape("depthwise_conv2d", self.shape(x), s)),
        };
        if k % 2 == 0 {
            return Err(Error::Param(format!("depthwise_conv2d: kernel size {k} must be odd")));
        }
        if self.shape(bias) != [c] {
            return Err(Error::shape("depthwise_conv2d", self.shape(x), self.shape(bias)));
        }
        let mut data = conv_raw(self.value(x).data(), self.value(kernel).data(), c, h, w, k);
        let bv = self.value(bias).data();
        for (ch, chunk) in data.chunks_mut((h * w).max(1)).enumerate().take(c) {
            chunk.iter_mut().for_each(|v| *v += bv[ch]);
        }
        let rg = self.any_grad(&[x, kernel, bias]);
        Ok(self.push(Tensor::new([c, h, w], data)?, Op::DepthwiseConv { x, kernel, bias }, rg))
    }

    /// Normalises the last axis with its population mean and variance,
    /// then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Param(format!("layer_norm: eps must be positive, got {eps}")));
        }
        let c = self.value(x).last_dim();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.numel() / c.max(1);
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c.max(1)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim().max(1);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|v| (v - m).exp()));
            let s: f64 = out[start..].iter().sum();
            out[start..].iter_mut().for_each(|v| *v /= s);
        }
        let v = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.unary(x, v, Op::Softmax(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&e| gelu_scalar(e)).collect())
            .expect("same shape");
        self.unary(x, v, Op::Gelu(x))
    }

    /// Mean squared error; `target` is treated as a constant.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        if p.numel() == 0 {
            return Err(Error::Usage("mse over an empty tensor".into()));
        }
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let v = Tensor::scalar(s / p.numel() as f64);
        Ok(self.unary(pred, v, Op::Mse { pred, target }))
    }
}

fn like(t: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(t.shape().to_vec(), data).expect("gradient shape")
}

/// Input contributions of one node given its output gradient `g`.
pub(crate) fn backward(tape: &Tape, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
    let val = |v: Var| tape.value(v);
    let need = |v: Var| tape.requires_grad(v);
    let mut res = Vec::new();
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            if need(*a) {
                let bt = transpose_raw(val(*b).data(), k, n);
                res.push((*a, like(val(*a), matmul_raw(g.data(), &bt, m, n, k))));
            }
            if need(*b) {
                let at = transpose_raw(val(*a).data(), m, k);
                res.push((*b, like(val(*b), matmul_raw(&at, g.data(), k, m, n))));
            }
        }
        Op::Add(a, b) => {
            res.push((*a, g.clone()));
            res.push((*b, g.clone()));
        }
        Op::Sub(a, b) => {
            res.push((*a, g.clone()));
            res.push((*b, like(g, g.data().iter().map(|v| -v).collect())));
        }
        Op::Mul(a, b) => {
            let prod = |o: &Tensor| like(g, g.data().iter().zip(o.data()).map(|(x, y)| x * y).collect());
            res.push((*a, prod(val(*b))));
            res.push((*b, prod(val(*a))));
        }
        Op::Scale(x, f) => res.push((*x, like(g, g.data().iter().map(|v| v * f).collect()))),
        Op::AddRow(x, bias) => {
            res.push((*x, g.clone()));
            if need(*bias) {
                let c = val(*bias).numel();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                res.push((*bias, like(val(*bias), db)));
            }
        }
        Op::Sum(x) => res.push((*x, Tensor::full(val(*x).shape().to_vec(), g.item()))),
        Op::Mean(x) => {
            let n = val(*x).numel() as f64;
            res.push((*x, Tensor::full(val(*x).shape().to_vec(), g.item() / n)));
        }
        Op::Transpose(x) => {
            let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            res.push((*x, like(val(*x), transpose_raw(g.data(), c, r))));
        }
        Op::Reshape(x) => res.push((*x, like(val(*x), g.data().to_vec()))),
        Op::GatherRows { x, idx } => {
            let c = val(*x).last_dim();
            let mut dx = vec![0.0; val(*x).numel()];
            for (src, &dst) in idx.iter().enumerate() {
                for j in 0..c {
                    dx[dst * c + j] += g.data()[src * c + j];
                }
            }
            res.push((*x, like(val(*x), dx)));
        }
        Op::ScatterRows { x, idx } => {
            let c = val(*x).last_dim();
            let dx = idx.iter().flat_map(|&i| g.row(i).iter().copied()).collect();
            res.push((*x, Tensor::new([idx.len(), c], dx).expect("scatter grad")));
        }
        Op::ConcatRows(xs) => {
            let mut offset = 0;
            for &x in xs {
                let n = val(x).numel();
                res.push((x, like(val(x), g.data()[offset..offset + n].to_vec())));
                offset += n;
            }
        }
        Op::SliceCols { x, start } => {
            let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            let w = out.last_dim();
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                dx[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
            }
            res.push((*x, like(val(*x), dx)));
        }
        Op::ConcatCols(xs) => {
            let r = out.shape()[0];
            let mut offset = 0;
            for &x in xs {
                let w = val(x).last_dim();
                let dx = (0..r).flat_map(|i| g.row(i)[offset..offset + w].iter().copied()).collect();
                res.push((x, like(val(x), dx)));
                offset += w;
            }
        }
        Op::RepeatRow(x) => {
            let c = val(*x).numel();
            let mut dx = vec![0.0; c];
            for row in g.data().chunks(c.max(1)) {
                dx.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            res.push((*x, like(val(*x), dx)));
        }
        Op::DepthwiseConv { x, kernel, bias } => {
            let (c, h, w) = (val(*x).shape()[0], val(*x).shape()[1], val(*x).shape()[2]);
            let k = val(*kernel).shape()[1];
            let pad = (k / 2) as isize;
            let (xd, kd, gd) = (val(*x).data(), val(*kernel).data(), g.data());
            let mut dx = vec![0.0; xd.len()];
            let mut dk = vec![0.0; kd.len()];
            let mut db = vec![0.0; c];
            for ch in 0..c {
                let base = ch * h * w;
                let kb = ch * k * k;
                for i in 0..h as isize {
                    for j in 0..w as isize {
                        let go = gd[base + (i * w as isize + j) as usize];
                        db[ch] += go;
                        if go == 0.0 {
                            continue;
                        }
                        for u in 0..k as isize {
                            let si = i + u - pad;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            for v in 0..k as isize {
                                let sj = j + v - pad;
                                if sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                let xi = base + (si * w as isize + sj) as usize;
                                let ki = kb + (u * k as isize + v) as usize;
                                dx[xi] += go * kd[ki];
                                dk[ki] += go * xd[xi];
                            }
                        }
                    }
                }
            }
            res.push((*x, like(val(*x), dx)));
            res.push((*kernel, like(val(*kernel), dk)));
            res.push((*bias, like(val(*bias), db)));
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let c = val(*gamma).numel();
            let gam = val(*gamma).data();
            let mut dx = Vec::with_capacity(xhat.len());
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for (r, (gr, hr)) in g.data().chunks(c).zip(xhat.chunks(c)).enumerate() {
                let mut mean_g = 0.0;
                let mut mean_gh = 0.0;
                for j in 0..c {
                    let gj = gr[j] * gam[j];
                    mean_g += gj;
                    mean_gh += gj * hr[j];
                    dgamma[j] += gr[j] * hr[j];
                    dbeta[j] += gr[j];
                }
                mean_g /= c as f64;
                mean_gh /= c as f64;
                for j in 0..c {
                    dx.push(rstd[r] * (gr[j] * gam[j] - mean_g - hr[j] * mean_gh));
                }
            }
            res.push((*x, like(val(*x), dx)));
            res.push((*gamma, like(val(*gamma), dgamma)));
            res.push((*beta, like(val(*beta), dbeta)));
        }
        Op::Softmax(x) => {
            let c = out.last_dim().max(1);
            let mut dx = Vec::with_capacity(out.numel());
            for (yr, gr) in out.data().chunks(c).zip(g.data().chunks(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
            }
            res.push((*x, like(out, dx)));
        }
        Op::Gelu(x) => {
            let dx = val(*x)
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, gv)| gv * (normal_cdf(v) + v * normal_pdf(v)))
                .collect();
            res.push((*x, like(out, dx)));
        }
        Op::Mse { pred, target } => {
            let (p, t) = (val(*pred), val(*target));
            let scale = 2.0 * g.item() / p.numel() as f64;
            let dx = p.data().iter().zip(t.data()).map(|(a, b)| scale * (a - b)).collect();
            res.push((*pred, like(p, dx)));
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{max_relative_error, FD_STEP};
    use rand::{Rng as _, SeedableRng};

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.at(&[i, p]) * b.at(&[p, j]);
                }
            }
        }
        Tensor::new([m, n], out).unwrap()
    }

    fn naive_conv(x: &Tensor, kern: &Tensor, bias: &Tensor) -> Tensor {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = kern.shape()[1] as i64;
        let p = k / 2;
        Tensor::from_fn([c, h, w], |flat| {
            let ch = flat / (h * w);
            let i = ((flat / w) % h) as i64;
            let j = (flat % w) as i64;
            let mut acc = bias.data()[ch];
            for u in 0..k {
                for v in 0..k {
                    let (si, sj) = (i + u - p, j + v - p);
                    if (0..h as i64).contains(&si) && (0..w as i64).contains(&sj) {
                        acc += kern.at(&[ch, u as usize, v as usize]) * x.at(&[ch, si as usize, sj as usize]);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn matmul_identity_and_zeros() {
        let mut t = Tape::new();
        let a = random(&[3, 3], 1);
        let eye = t.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let av = t.constant(a.clone());
        let y = t.matmul(eye, av).unwrap();
        assert_eq!(t.value(y), &a);

        let z = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(random(&[3, 2], 2));
        let y = t.matmul(z, b).unwrap();
        assert_eq!(t.value(y), &Tensor::zeros([2, 2]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        for seed in 0..5 {
            let (a, b) = (random(&[3, 3], seed), random(&[3, 3], seed + 100));
            let mut t = Tape::new();
            let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
            let y = t.matmul(av, bv).unwrap();
            assert!(t.value(y).max_abs_diff(&naive_matmul(&a, &b)) <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([4, 2]));
        let msg = t.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let x = random(&[2, 4, 5], 3);
        let mut kern = Tensor::zeros([2, 3, 3]);
        kern.data_mut()[4] = 1.0;
        kern.data_mut()[9 + 4] = 1.0;
        let mut t = Tape::new();
        let (xv, kv, bv) = (t.constant(x.clone()), t.constant(kern), t.constant(Tensor::zeros([2])));
        let y = t.depthwise_conv2d(xv, kv, bv).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn conv_counts_in_bounds_taps() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones([1, 3, 3]));
        let k = t.constant(Tensor::ones([1, 3, 3]));
        let b = t.constant(Tensor::zeros([1]));
        let y = t.depthwise_conv2d(x, k, b).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_matches_nested_loop() {
        for (seed, k) in [(0, 3), (1, 5), (2, 7), (3, 1)] {
            let x = random(&[3, 6, 5], seed);
            let kern = random(&[3, k, k], seed + 10);
            let bias = random(&[3], seed + 20);
            let mut t = Tape::new();
            let (xv, kv, bv) = (t.constant(x.clone()), t.constant(kern.clone()), t.constant(bias.clone()));
            let y = t.depthwise_conv2d(xv, kv, bv).unwrap();
            assert!(t.value(y).max_abs_diff(&naive_conv(&x, &kern, &bias)) <= 1e-12);
        }
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones([1, 3, 3]));
        let k = t.constant(Tensor::ones([1, 2, 2]));
        let b = t.constant(Tensor::zeros([1]));
        assert!(matches!(t.depthwise_conv2d(x, k, b), Err(Error::Param(_))));
    }

    #[test]
    fn layer_norm_edge_rows() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new([2, 2], vec![5.0, 5.0, 1.0, 3.0]).unwrap());
        let g = t.constant(Tensor::ones([2]));
        let b = t.constant(Tensor::zeros([2]));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        let d = t.value(y).data();
        assert_eq!(&d[..2], &[0.0, 0.0]);
        assert!((d[2] + 1.0).abs() < 1e-9 && (d[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_matches_formula() {
        let x = random(&[4, 7], 9);
        let gamma = random(&[7], 10);
        let beta = random(&[7], 11);
        let mut t = Tape::new();
        let (xv, gv, bv) = (t.constant(x.clone()), t.constant(gamma.clone()), t.constant(beta.clone()));
        let y = t.layer_norm(xv, gv, bv, 1e-6).unwrap();
        for r in 0..4 {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / 7.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
            for j in 0..7 {
                let want = (row[j] - mean) / (var + 1e-6).sqrt() * gamma.data()[j] + beta.data()[j];
                assert!((t.value(y).at(&[r, j]) - want).abs() < 1e-12);
            }
        }
        assert!(matches!(t.layer_norm(xv, gv, bv, 0.0), Err(Error::Param(_))));
    }

    #[test]
    fn softmax_basics() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros([2]));
        let y = t.softmax(x);
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);

        let base = random(&[3, 6], 4);
        let shifted = Tensor::from_fn([3, 6], |i| base.data()[i] + 123.25);
        let a = t.constant(base);
        let b = t.constant(shifted);
        let (ya, yb) = (t.softmax(a), t.softmax(b));
        assert!(t.value(ya).max_abs_diff(t.value(yb)) < 1e-14);
        for r in 0..3 {
            assert!((t.value(ya).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    /// erf by its Maclaurin series, summed until terms vanish.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-30 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        // 40-digit reference evaluations of x * Phi(x).
        for (x, want) in [
            (1.0, 0.841_344_746_068_542_9),
            (-1.0, -0.158_655_253_931_457_05),
            (0.5, 0.345_731_230_637_006_55),
            (2.5, 2.484_475_836_685_559_7),
            (-3.0, -0.004_049_694_094_890_283_6),
        ] {
            assert!((gelu_scalar(x) - want).abs() < 1e-15, "gelu({x})");
        }
    }

    #[test]
    fn gelu_odd_part_matches_erf_oracle() {
        // gelu(x) + gelu(-x) = x * erf(x / sqrt 2)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let x: f64 = rng.random_range(-4.0..4.0);
            let lhs = gelu_scalar(x) + gelu_scalar(-x);
            let rhs = x * erf_series(x / std::f64::consts::SQRT_2);
            assert!((lhs - rhs).abs() < 1e-12, "x = {x}");
            let direct = 0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
            assert!((gelu_scalar(x) - direct).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn softmax_matches_compensated_oracle() {
        let x = random(&[1, 9], 21);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = t.softmax(xv);
        // Kahan-summed normaliser over unshifted exponentials.
        let exps: Vec<f64> = x.data().iter().map(|v| v.exp()).collect();
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for e in &exps {
            let yk = e - comp;
            let tk = s + yk;
            comp = (tk - s) - yk;
            s = tk;
        }
        for (got, e) in t.value(y).data().iter().zip(&exps) {
            assert!((got - e / s).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_values() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::full([2, 3], 3.0));
        let q = t.constant(Tensor::full([2, 3], 1.0));
        let l = t.mse(p, p).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        let l = t.mse(p, q).unwrap();
        assert_eq!(t.value(l).item(), 4.0);
        let r = t.constant(Tensor::zeros([3, 2]));
        assert!(matches!(t.mse(p, r), Err(Error::Shape { .. })));
    }

    #[test]
    fn row_ops_roundtrip() {
        let mut t = Tape::new();
        let x = t.constant(random(&[3, 4], 5));
        let s = t.scatter_rows(x, &[4, 0, 2], 5).unwrap();
        let back = t.gather_rows(s, &[4, 0, 2]).unwrap();
        assert_eq!(t.value(back), t.value(x));
        assert_eq!(t.value(s).row(1), &[0.0; 4]);
        assert!(t.scatter_rows(x, &[1, 1, 2], 5).is_err());

        let parts: Vec<Var> = (0..2).map(|h| t.slice_cols(x, 2 * h, 2 * h + 2).unwrap()).collect();
        let joined = t.concat_cols(&parts).unwrap();
        assert_eq!(t.value(joined), t.value(x));
    }

    fn check(f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Tensor]) {
        let err = max_relative_error(&f, inputs, FD_STEP).unwrap();
        assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let s = seed * 31;
            check(|t, v| { let y = t.matmul(v[0], v[1])?; let w = t.constant(random(&[3, 2], 77)); let p = t.mul(y, w)?; Ok(t.sum(p)) },
                  &[random(&[3, 4], s), random(&[4, 2], s + 1)]);
            check(|t, v| { let y = t.depthwise_conv2d(v[0], v[1], v[2])?; let w = t.constant(random(&[2, 4, 5], 78)); let p = t.mul(y, w)?; Ok(t.sum(p)) },
                  &[random(&[2, 4, 5], s + 2), random(&[2, 3, 3], s + 3), random(&[2], s + 4)]);
            check(|t, v| { let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?; let w = t.constant(random(&[3, 5], 79)); let p = t.mul(y, w)?; Ok(t.sum(p)) },
                  &[random(&[3, 5], s + 5), random(&[5], s + 6), random(&[5], s + 7)]);
            check(|t, v| { let y = t.softmax(v[0]); let w = t.constant(random(&[2, 6], 80)); let p = t.mul(y, w)?; Ok(t.sum(p)) },
                  &[random(&[2, 6], s + 8)]);
            check(|t, v| { let y = t.gelu(v[0]); let w = t.constant(random(&[2, 6], 81)); let p = t.mul(y, w)?; Ok(t.sum(p)) },
                  &[random(&[2, 6], s + 9)]);
            check(|t, v| { let c = t.constant(random(&[3, 4], 82)); t.mse(v[0], c) }, &[random(&[3, 4], s + 10)]);
            check(|t, v| {
                let a = t.add_row(v[0], v[1])?;
                let tr = t.transpose(a)?;
                let g = t.gather_rows(tr, &[2, 0, 2])?;
                let sc = t.scatter_rows(g, &[1, 3, 0], 5)?;
                let r = t.repeat_row(v[1], 5)?;
                let r = t.slice_cols(r, 0, 3)?;
                let cat = t.concat_cols(&[sc, r])?;
                let rows = t.concat_rows(&[cat, cat])?;
                let rs = t.reshape(rows, &[6, 10])?;
                let sq = t.mul(rs, rs)?;
                let d = t.sub(sq, rs)?;
                let m = t.mean(d);
                Ok(t.scale(m, 3.0))
            }, &[random(&[3, 4], s + 11), random(&[4], s + 12)]);
        }
    }
}
