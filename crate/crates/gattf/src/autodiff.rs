//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records the forward computation; node ids index into it in
//! creation order, which is already a topological order, so [`Tape::backward`]
//! is a single reverse sweep. Everything is `f64`. A tape is single-threaded;
//! run concurrent forward/backward passes on separate tapes with their own
//! parameter copies.
//!
//! The op set is exactly what an encoder–decoder transformer with a
//! probabilistic head needs: matmul (plain and B-transposed), broadcast bias,
//! elementwise arithmetic, softmax over the last dimension with an additive
//! mask, layer norm, GELU, softplus, ln, ln-gamma, embedding lookup,
//! row/column slicing and concatenation, dropout, and full reductions.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Dense row-major 2-D tensor. Vectors are `[1 × n]` or `[n × 1]`; scalars
/// are `[1 × 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not fill [{rows} × {cols}]",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn row_vector(data: Vec<f64>) -> Tensor {
        Tensor { rows: 1, cols: data.len(), data }
    }

    pub fn column_vector(data: Vec<f64>) -> Tensor {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a [m×k] · b [k×n]`, row-major, accumulation order fixed by the loops.
pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.cols;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { rows: m, cols: n, data: out }
}

/// `a [m×k] · bᵀ` where `b` is `[n×k]`.
pub(crate) fn matmul_nt_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.rows;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            out[i * n + j] = s;
        }
    }
    Tensor { rows: m, cols: n, data: out }
}

/// `aᵀ · b` where `a` is `[k×m]`, `b` is `[k×n]` → `[m×n]`.
fn matmul_tn_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = a.shape();
    let n = b.cols;
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor { rows: m, cols: n, data: out }
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    // numerically stable: ln(1 + e^x) = max(x, 0) + ln(1 + e^{-|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Node id on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

type BackwardFn = Box<dyn Fn(&[Node], &Tensor, &mut [Option<Tensor>])>;

struct Node {
    value: Tensor,
    backward: Option<BackwardFn>,
    /// False when no ancestor requires gradients; backward skips the subtree.
    needs_grad: bool,
}

/// Gradients by node id after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, or zeros if the leaf never influenced the loss.
    pub fn get_or_zeros(&self, id: NodeId, rows: usize, cols: usize) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, backward: Option<BackwardFn>) -> NodeId {
        self.nodes.push(Node { value, backward, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Record an input tensor. Gradients flow to it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.rows {
            return Err(Error::Shape(format!(
                "matmul [{}×{}] · [{}×{}]",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let value = matmul_raw(av, bv);
        let needs = self.needs(a) || self.needs(b);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if nodes[a.0].needs_grad {
                accumulate(grads, a, matmul_nt_raw(grad, bv));
            }
            if nodes[b.0].needs_grad {
                accumulate(grads, b, matmul_tn_raw(av, grad));
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// `a · bᵀ`; the attention-score shape without materializing a transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.cols {
            return Err(Error::Shape(format!(
                "matmul_nt [{}×{}] · [{}×{}]ᵀ",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let value = matmul_nt_raw(av, bv);
        let needs = self.needs(a) || self.needs(b);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if nodes[a.0].needs_grad {
                accumulate(grads, a, matmul_raw(grad, bv));
            }
            if nodes[b.0].needs_grad {
                accumulate(grads, b, matmul_tn_raw(grad, av));
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!(
                "add [{}×{}] + [{}×{}]",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let mut value = av.clone();
        value.add_assign(bv);
        let needs = self.needs(a) || self.needs(b);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if nodes[a.0].needs_grad {
                accumulate(grads, a, grad.clone());
            }
            if nodes[b.0].needs_grad {
                accumulate(grads, b, grad.clone());
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Add a `[1 × n]` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows != 1 || bv.cols != av.cols {
            return Err(Error::Shape(format!(
                "add_bias [{}×{}] + [{}×{}]",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let mut value = av.clone();
        for r in 0..value.rows {
            for c in 0..value.cols {
                value.data[r * value.cols + c] += bv.data[c];
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if nodes[a.0].needs_grad {
                accumulate(grads, a, grad.clone());
            }
            if nodes[bias.0].needs_grad {
                let mut db = Tensor::zeros(1, grad.cols);
                for r in 0..grad.rows {
                    for c in 0..grad.cols {
                        db.data[c] += grad.data[r * grad.cols + c];
                    }
                }
                accumulate(grads, bias, db);
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let neg = self.affine(b, -1.0, 0.0);
        self.add(a, neg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!(
                "mul [{}×{}] ⊙ [{}×{}]",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let value = Tensor { rows: av.rows, cols: av.cols, data };
        let needs = self.needs(a) || self.needs(b);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if nodes[a.0].needs_grad {
                let data = grad.data.iter().zip(&bv.data).map(|(g, y)| g * y).collect();
                accumulate(grads, a, Tensor { rows: grad.rows, cols: grad.cols, data });
            }
            if nodes[b.0].needs_grad {
                let data = grad.data.iter().zip(&av.data).map(|(g, x)| g * x).collect();
                accumulate(grads, b, Tensor { rows: grad.rows, cols: grad.cols, data });
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Elementwise quotient; the divisor must be nonzero.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!(
                "div [{}×{}] / [{}×{}]",
                av.rows, av.cols, bv.rows, bv.cols
            )));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x / y).collect();
        let value = Tensor { rows: av.rows, cols: av.cols, data };
        let needs = self.needs(a) || self.needs(b);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if nodes[a.0].needs_grad {
                let data = grad.data.iter().zip(&bv.data).map(|(g, y)| g / y).collect();
                accumulate(grads, a, Tensor { rows: grad.rows, cols: grad.cols, data });
            }
            if nodes[b.0].needs_grad {
                let data = grad
                    .data
                    .iter()
                    .zip(av.data.iter().zip(&bv.data))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                accumulate(grads, b, Tensor { rows: grad.rows, cols: grad.cols, data });
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// `k·x + b` elementwise; covers scalar multiplication and shifts.
    pub fn affine(&mut self, a: NodeId, k: f64, b: f64) -> NodeId {
        let av = self.value(a);
        let data = av.data.iter().map(|x| k * x + b).collect();
        let value = Tensor { rows: av.rows, cols: av.cols, data };
        let needs = self.needs(a);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if nodes[a.0].needs_grad {
                let data = grad.data.iter().map(|g| k * g).collect();
                accumulate(grads, a, Tensor { rows: grad.rows, cols: grad.cols, data });
            }
        });
        self.push(value, needs, Some(back))
    }

    fn unary(
        &mut self,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> NodeId {
        let av = self.value(a);
        let data = av.data.iter().map(|&x| f(x)).collect();
        let value = Tensor { rows: av.rows, cols: av.cols, data };
        let needs = self.needs(a);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if nodes[a.0].needs_grad {
                let av = &nodes[a.0].value;
                let data = grad.data.iter().zip(&av.data).map(|(g, &x)| g * df(x)).collect();
                accumulate(grads, a, Tensor { rows: grad.rows, cols: grad.cols, data });
            }
        });
        self.push(value, needs, Some(back))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, gelu_scalar, gelu_grad_scalar)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, softplus_scalar, sigmoid)
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::ln, |x| 1.0 / x)
    }

    /// Log-gamma; inputs must be positive. Its derivative is the digamma
    /// function.
    pub fn ln_gamma(&mut self, a: NodeId) -> NodeId {
        self.unary(a, ln_gamma, digamma)
    }

    /// Softmax over each row, with an optional additive mask applied before
    /// exponentiation (use large negative entries to forbid positions; they
    /// come out as exactly zero probability).
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<NodeId>) -> Result<NodeId> {
        let logits = match mask {
            Some(m) => self.add(a, m)?,
            None => a,
        };
        let lv = self.value(logits);
        let (rows, cols) = lv.shape();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &lv.data[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                let e = (x - m).exp();
                *o = e;
                sum += e;
            }
            for o in &mut data[r * cols..(r + 1) * cols] {
                *o /= sum;
            }
        }
        let value = Tensor { rows, cols, data };
        let needs = self.needs(logits);
        let self_id = NodeId(self.nodes.len());
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if !nodes[logits.0].needs_grad {
                return;
            }
            let y = &nodes[self_id.0].value;
            let (rows, cols) = y.shape();
            let mut dx = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let yr = &y.data[r * cols..(r + 1) * cols];
                let gr = &grad.data[r * cols..(r + 1) * cols];
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for c in 0..cols {
                    dx.data[r * cols + c] = yr[c] * (gr[c] - dot);
                }
            }
            accumulate(grads, logits, dx);
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Layer normalization over each row, then elementwise gain and bias
    /// (`gain`, `bias` are `[1 × n]`).
    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (av, gv, bv) = (self.value(a), self.value(gain), self.value(bias));
        let (rows, cols) = av.shape();
        if gv.shape() != (1, cols) || bv.shape() != (1, cols) {
            return Err(Error::Shape(format!(
                "layer_norm gain/bias must be [1×{cols}], got [{}×{}] and [{}×{}]",
                gv.rows, gv.cols, bv.rows, bv.cols
            )));
        }
        let mut normalized = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &av.data[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for (o, &x) in normalized[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
        }
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] = normalized[r * cols + c] * gv.data[c] + bv.data[c];
            }
        }
        let value = Tensor { rows, cols, data };
        let needs = self.needs(a) || self.needs(gain) || self.needs(bias);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            let gv = &nodes[gain.0].value;
            let (rows, cols) = grad.shape();
            if nodes[bias.0].needs_grad {
                let mut db = Tensor::zeros(1, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        db.data[c] += grad.data[r * cols + c];
                    }
                }
                accumulate(grads, bias, db);
            }
            if nodes[gain.0].needs_grad {
                let mut dg = Tensor::zeros(1, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        dg.data[c] += grad.data[r * cols + c] * normalized[r * cols + c];
                    }
                }
                accumulate(grads, gain, dg);
            }
            if nodes[a.0].needs_grad {
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let nr = &normalized[r * cols..(r + 1) * cols];
                    let gr = &grad.data[r * cols..(r + 1) * cols];
                    // dy = grad ⊙ gain per row
                    let dy: Vec<f64> = gr.iter().zip(&gv.data).map(|(g, w)| g * w).collect();
                    let mean_dy = dy.iter().sum::<f64>() / cols as f64;
                    let mean_dy_y =
                        dy.iter().zip(nr).map(|(d, y)| d * y).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        dx.data[r * cols + c] = inv_std[r] * (dy[c] - mean_dy - nr[c] * mean_dy_y);
                    }
                }
                accumulate(grads, a, dx);
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Row lookup: `table [v × d]`, `indices` into its rows → `[len × d]`.
    pub fn embed(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (vocab, dim) = tv.shape();
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::Shape(format!("embedding index {bad} out of {vocab} rows")));
        }
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&tv.data[i * dim..(i + 1) * dim]);
        }
        let value = Tensor { rows: indices.len(), cols: dim, data };
        let needs = self.needs(table);
        let idx: Vec<usize> = indices.to_vec();
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if !nodes[table.0].needs_grad {
                return;
            }
            let (vocab, dim) = nodes[table.0].value.shape();
            let mut dt = Tensor::zeros(vocab, dim);
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..dim {
                    dt.data[i * dim + c] += grad.data[r * dim + c];
                }
            }
            accumulate(grads, table, dt);
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Concatenate along columns; all inputs share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let rows = self.value(parts[0]).rows;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            if pv.rows != rows {
                return Err(Error::Shape(format!(
                    "concat_cols row mismatch: {} vs {rows}",
                    pv.rows
                )));
            }
            widths.push(pv.cols);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&pv.data[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor { rows, cols: total, data };
        let needs = parts.iter().any(|&p| self.needs(p));
        let parts: Vec<NodeId> = parts.to_vec();
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                if nodes[p.0].needs_grad {
                    let mut dp = Tensor::zeros(grad.rows, w);
                    for r in 0..grad.rows {
                        dp.data[r * w..(r + 1) * w].copy_from_slice(
                            &grad.data[r * total + offset..r * total + offset + w],
                        );
                    }
                    accumulate(grads, p, dp);
                }
                offset += w;
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Column window `[from, to)`.
    pub fn slice_cols(&mut self, a: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        if from >= to || to > cols {
            return Err(Error::Shape(format!("slice_cols [{from}, {to}) of {cols}")));
        }
        let w = to - from;
        let mut data = vec![0.0; rows * w];
        for r in 0..rows {
            data[r * w..(r + 1) * w].copy_from_slice(&av.data[r * cols + from..r * cols + to]);
        }
        let value = Tensor { rows, cols: w, data };
        let needs = self.needs(a);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if !nodes[a.0].needs_grad {
                return;
            }
            let (rows, cols) = nodes[a.0].value.shape();
            let mut da = Tensor::zeros(rows, cols);
            for r in 0..rows {
                da.data[r * cols + from..r * cols + to]
                    .copy_from_slice(&grad.data[r * w..(r + 1) * w]);
            }
            accumulate(grads, a, da);
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Row window `[from, to)`.
    pub fn slice_rows(&mut self, a: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        if from >= to || to > rows {
            return Err(Error::Shape(format!("slice_rows [{from}, {to}) of {rows}")));
        }
        let value =
            Tensor { rows: to - from, cols, data: av.data[from * cols..to * cols].to_vec() };
        let needs = self.needs(a);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if !nodes[a.0].needs_grad {
                return;
            }
            let (rows, cols) = nodes[a.0].value.shape();
            let mut da = Tensor::zeros(rows, cols);
            da.data[from * cols..to * cols].copy_from_slice(&grad.data);
            accumulate(grads, a, da);
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Mean over all elements → scalar.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Sum over all elements → scalar.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let value = Tensor::scalar(av.data.iter().sum());
        let needs = self.needs(a);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if nodes[a.0].needs_grad {
                let (rows, cols) = nodes[a.0].value.shape();
                accumulate(grads, a, Tensor::full(rows, cols, grad.item()));
            }
        });
        self.push(value, needs, Some(back))
    }

    /// Multiply elementwise by a fixed mask whose entries are 0 or
    /// 1/(1−p); see [`dropout_mask`]. Identity when the mask is `None`.
    pub fn dropout_with_mask(&mut self, a: NodeId, mask: Option<Vec<f64>>) -> Result<NodeId> {
        let Some(mask) = mask else { return Ok(a) };
        let av = self.value(a);
        if mask.len() != av.numel() {
            return Err(Error::Shape(format!(
                "dropout mask length {} vs tensor {}",
                mask.len(),
                av.numel()
            )));
        }
        let data = av.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor { rows: av.rows, cols: av.cols, data };
        let needs = self.needs(a);
        let back: BackwardFn = Box::new(move |nodes, grad, grads| {
            if nodes[a.0].needs_grad {
                let data = grad.data.iter().zip(&mask).map(|(g, m)| g * m).collect();
                accumulate(grads, a, Tensor { rows: grad.rows, cols: grad.cols, data });
            }
        });
        Ok(self.push(value, needs, Some(back)))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// that required them.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got [{}×{}]",
                self.value(loss).rows,
                self.value(loss).cols
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(back) = &node.backward {
                back(&self.nodes, &grad, &mut grads);
            } else if node.needs_grad {
                grads[id] = Some(grad); // leaf: keep it
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

/// Bernoulli dropout mask with survivor scaling, or `None` when `p == 0`.
pub fn dropout_mask(numel: usize, p: f64, rng: &mut impl rand::Rng) -> Option<Vec<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 - p;
    Some(
        (0..numel)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

/// Additive causal mask: position `i` may attend to `j ≤ i`.
pub fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(len, len);
    for i in 0..len {
        for j in i + 1..len {
            m.set(i, j, -1e9);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    /// Central finite differences against the analytic gradient of
    /// `loss = build(tape, leaves)`. Checks every element of every leaf.
    fn check_gradients(
        inputs: &[Tensor],
        build: impl Fn(&mut Tape, &[NodeId]) -> NodeId,
        tol: f64,
    ) {
        let eval = |tensors: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            let loss = build(&mut tape, &ids);
            tape.value(loss).item()
        };

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss).unwrap();

        let h = 1e-5;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(ids[k], input.rows(), input.cols());
            for e in 0..input.numel() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[e] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[e] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[e];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "leaf {k} elem {e}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 4));
        let y = tape.softmax_rows(x, None).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_zeroes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.leaf(random_tensor(&mut rng, 5, 5), false);
        let m = tape.constant(causal_mask(5));
        let y = tape.softmax_rows(x, Some(m)).unwrap();
        let yv = tape.value(y);
        for r in 0..5 {
            let sum: f64 = (0..5).map(|c| yv.get(r, c)).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-9);
            for c in r + 1..5 {
                assert_eq!(yv.get(r, c), 0.0, "masked position must be exactly zero");
            }
        }
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let x = tape.leaf(random_tensor(&mut rng, 3, 16), false);
        let g = tape.constant(Tensor::full(1, 16, 1.0));
        let b = tape.constant(Tensor::zeros(1, 16));
        let y = tape.layer_norm(x, g, b, 1e-9).unwrap();
        let yv = tape.value(y);
        for r in 0..3 {
            let row: Vec<f64> = (0..16).map(|c| yv.get(r, c)).collect();
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-6);
            assert_relative_eq!(var, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let mut eye = Tensor::zeros(3, 3);
        (0..3).for_each(|i| eye.set(i, i, 1.0));
        let i = tape.constant(eye);
        let a = tape.constant(Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(a).data());
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        match tape.matmul(a, b) {
            Err(Error::Shape(msg)) => {
                assert!(msg.contains("2×3"), "message should carry shapes: {msg}")
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let loss = tape.sum_all(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_dot_is_other_operand() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row_vector(vec![1.0, 2.0, 3.0]), true);
        let y = tape.constant(Tensor::row_vector(vec![4.0, 5.0, 6.0]));
        let xy = tape.mul(x, y).unwrap();
        let loss = tape.sum_all(xy);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gradcheck_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![
            random_tensor(&mut rng, 3, 4),
            random_tensor(&mut rng, 4, 5),
            random_tensor(&mut rng, 3, 5),
        ];
        check_gradients(
            &inputs,
            |tape, ids| {
                let p = tape.matmul(ids[0], ids[1]).unwrap();
                let q = tape.mul(p, ids[2]).unwrap();
                tape.mean_all(q)
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_matmul_nt_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![
            random_tensor(&mut rng, 3, 4),
            random_tensor(&mut rng, 5, 4),
            random_tensor(&mut rng, 1, 5),
        ];
        check_gradients(
            &inputs,
            |tape, ids| {
                let p = tape.matmul_nt(ids[0], ids[1]).unwrap();
                let q = tape.add_bias(p, ids[2]).unwrap();
                let r = tape.gelu(q);
                tape.mean_all(r)
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_softmax_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = vec![
            random_tensor(&mut rng, 4, 6),
            random_tensor(&mut rng, 1, 6),
            random_tensor(&mut rng, 1, 6),
        ];
        check_gradients(
            &inputs,
            |tape, ids| {
                let n = tape.layer_norm(ids[0], ids[1], ids[2], 1e-6).unwrap();
                let s = tape.softmax_rows(n, None).unwrap();
                let w = tape.affine(s, 2.0, 0.3);
                tape.mean_all(w)
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_masked_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs = vec![random_tensor(&mut rng, 5, 5)];
        check_gradients(
            &inputs,
            |tape, ids| {
                let m = tape.constant(causal_mask(5));
                let s = tape.softmax_rows(ids[0], Some(m)).unwrap();
                let sq = tape.mul(s, s).unwrap();
                tape.sum_all(sq)
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut positive = random_tensor(&mut rng, 3, 3);
        for v in positive.data_mut() {
            *v = v.abs() + 0.5;
        }
        let inputs = vec![positive, random_tensor(&mut rng, 3, 3)];
        check_gradients(
            &inputs,
            |tape, ids| {
                let l = tape.ln(ids[0]);
                let sp = tape.softplus(ids[1]);
                let d = tape.div(l, sp).unwrap();
                let s = tape.sub(d, ids[1]).unwrap();
                tape.mean_all(s)
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_ln_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = random_tensor(&mut rng, 2, 3);
        for v in x.data_mut() {
            *v = v.abs() + 1.0;
        }
        check_gradients(
            &[x],
            |tape, ids| {
                let g = tape.ln_gamma(ids[0]);
                tape.sum_all(g)
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_embed_concat_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs = vec![random_tensor(&mut rng, 4, 3), random_tensor(&mut rng, 5, 2)];
        check_gradients(
            &inputs,
            |tape, ids| {
                let e = tape.embed(ids[0], &[1, 3, 0, 1, 2]).unwrap();
                let cat = tape.concat_cols(&[e, ids[1]]).unwrap();
                let sl = tape.slice_cols(cat, 1, 4).unwrap();
                let rows = tape.slice_rows(sl, 1, 5).unwrap();
                tape.mean_all(rows)
            },
            1e-4,
        );
    }

    #[test]
    fn gradcheck_dropout_fixed_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&mut rng, 3, 4);
        let mask = dropout_mask(12, 0.4, &mut rng);
        check_gradients(
            &[x],
            move |tape, ids| {
                let d = tape.dropout_with_mask(ids[0], mask.clone()).unwrap();
                tape.mean_all(d)
            },
            1e-4,
        );
    }

    #[test]
    fn single_thread_determinism() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut tape = Tape::new();
            let x = tape.leaf(random_tensor(&mut rng, 6, 6), true);
            let w = tape.leaf(random_tensor(&mut rng, 6, 6), true);
            let h = tape.matmul(x, w).unwrap();
            let s = tape.softmax_rows(h, None).unwrap();
            let loss = tape.mean_all(s);
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).item().to_bits(),
                grads.get(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
