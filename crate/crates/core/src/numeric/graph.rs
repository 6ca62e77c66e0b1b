//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape once in reverse. Parameters live in a
//! [`ParamStore`] and enter the tape through [`Graph::param`]; after the
//! backward pass [`Graph::param_grads`] hands their gradients to an optimizer.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    ConcatRows(Var, Var),
    Reshape(Var),
    Sum(Var),
    Mse(Var, Var),
    PowerScale {
        x: Var,
        p_s: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GradState {
    Fresh,
    Done,
}

pub struct Graph<'a> {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    store: Option<&'a ParamStore>,
    trainable: Vec<bool>,
    param_vars: Vec<Option<Var>>,
    state: GradState,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph<'static> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            store: None,
            trainable: Vec::new(),
            param_vars: Vec::new(),
            state: GradState::Fresh,
        }
    }
}

impl<'a> Graph<'a> {
    /// Tape bound to `store`; parameters for which `trainable` is false enter
    /// as constants.
    pub fn with_params(store: &'a ParamStore, trainable: impl Fn(ParamId) -> bool) -> Self {
        let trainable = store.ids().map(trainable).collect();
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            store: Some(store),
            trainable,
            param_vars: vec![None; store.len()],
            state: GradState::Fresh,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf node; gradients are tracked iff the tensor's `requires_grad` flag is set.
    pub fn input(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// The tape node for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let store = self.store.expect("graph has no parameter store bound");
        let needs = self.trainable[id.index()];
        let v = self.push(store.get(id).clone(), Op::Leaf, needs);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_raw(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    /// `x·w + b` row-wise, with `x: L×in`, `w: in×out`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (l, din) = self.dims2(x)?;
        let (din2, dout) = self.dims2(w)?;
        if din != din2 {
            return Err(Error::Dimension(format!(
                "linear: input width {din} vs weight rows {din2}"
            )));
        }
        let mut out = vec![0.0; l * dout];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != dout {
                return Err(Error::Dimension(format!(
                    "linear: bias length {} vs output width {dout}",
                    bias.len()
                )));
            }
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bias.data());
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(
            l,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            beta,
        );
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::from_raw(vec![l, dout], out), Op::Linear { x, w, b }, needs))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, "elementwise op")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_raw(va.shape().to_vec(), data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let va = self.value(a);
        let t = Tensor::from_raw(va.shape().to_vec(), va.data().iter().map(|&x| x * factor).collect());
        let needs = self.needs(a);
        self.push(t, Op::Scale(a, factor), needs)
    }

    fn scalar_of(&self, s: Var) -> Result<f64> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(Error::Dimension(format!(
                "expected a scalar, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    /// `a · s` for a scalar node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_of(s)?;
        let va = self.value(a);
        let t = Tensor::from_raw(va.shape().to_vec(), va.data().iter().map(|&x| x * sv).collect());
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(t, Op::MulScalar(a, s), needs))
    }

    /// `a / s` for a nonzero scalar node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_of(s)?;
        if sv == 0.0 {
            return Err(Error::Numeric("division by a zero scalar".into()));
        }
        let va = self.value(a);
        let t = Tensor::from_raw(va.shape().to_vec(), va.data().iter().map(|&x| x / sv).collect());
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(t, Op::DivScalar(a, s), needs))
    }

    /// Layer normalization over the last axis followed by the affine map
    /// `gain ⊙ x̂ + bias`. Variance uses the population convention.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&0);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::Dimension(format!(
                "layer_norm: gain/bias length must equal feature width {d}"
            )));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len().checked_div(d).unwrap_or(0);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::from_raw(xv.shape().to_vec(), out);
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Exact-erf Gaussian error linear unit.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor::from_raw(xv.shape().to_vec(), xv.data().iter().map(|&v| gelu(v)).collect());
        let needs = self.needs(x);
        self.push(t, Op::Gelu(x), needs)
    }

    /// Multi-head scaled dot-product attention on already-projected
    /// `q: Lq×D`, `k, v: Lk×D`; heads are concatenated along the feature axis.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (lq, d) = self.dims2(q)?;
        let (lk, dk) = self.dims2(k)?;
        let (lv, dv) = self.dims2(v)?;
        if dk != d || dv != d || lv != lk {
            return Err(Error::Dimension(format!(
                "attention: q {lq}x{d}, k {lk}x{dk}, v {lv}x{dv}"
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible into {heads} heads"
            )));
        }
        let (out, probs) = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            lq,
            lk,
            d,
            heads,
        );
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            Tensor::from_raw(vec![lq, d], out),
            Op::Attention { q, k, v, heads, probs },
            needs,
        ))
    }

    /// Selects rows of a matrix in the given order.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!("row index {bad} out of range {rows}")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&xv[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_raw(vec![idx.len(), cols], out),
            Op::GatherRows(x, idx.to_vec()),
            needs,
        ))
    }

    /// Places row `r` of `x` at row `idx[r]` of an `n`-row zero matrix.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], n: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        if rows != idx.len() {
            return Err(Error::Dimension(format!(
                "scatter: {rows} rows but {} indices",
                idx.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in idx {
            if i >= n {
                return Err(Error::Contract(format!("scatter index {i} out of range {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("duplicate scatter index {i}")));
            }
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * cols];
        for (r, &i) in idx.iter().enumerate() {
            out[i * cols..(i + 1) * cols].copy_from_slice(&xv[r * cols..(r + 1) * cols]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_raw(vec![n, cols], out),
            Op::ScatterRows(x, idx.to_vec()),
            needs,
        ))
    }

    /// Stacks `a` on top of `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a)?;
        let (rb, cb) = self.dims2(b)?;
        if ca != cb {
            return Err(Error::Dimension(format!("concat: widths {ca} and {cb}")));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_raw(vec![ra + rb, ca], out), Op::ConcatRows(a, b), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape.to_vec())?.with_requires_grad(false);
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Dimension(format!(
                "mse: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), needs))
    }

    /// Scalar `sqrt(p_s / m)` where `m` is the mean power per complex symbol
    /// of the interleaved real view `x`.
    pub fn power_scale(&mut self, x: Var, p_s: f64) -> Result<Var> {
        let xv = self.value(x);
        let symbols = xv.len() as f64 / 2.0;
        let m = xv.data().iter().map(|v| v * v).sum::<f64>() / symbols;
        if m == 0.0 || symbols == 0.0 {
            return Err(Error::Contract("power normalization of an all-zero signal".into()));
        }
        let s = (p_s / m).sqrt();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s), Op::PowerScale { x, p_s }, needs))
    }

    /// Resets gradients so that [`Graph::backward`] may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.state = GradState::Fresh;
    }

    fn accumulate(&mut self, v: Var, contrib: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        contrib(g);
    }

    fn add_into(&mut self, v: Var, src: &[f64], factor: f64) {
        self.accumulate(v, |g| {
            for (gi, &s) in g.iter_mut().zip(src) {
                *gi += factor * s;
            }
        });
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.state == GradState::Done {
            return Err(Error::Contract(
                "backward already ran on this graph; call zero_grad first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.state = GradState::Done;
        if !self.needs(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].needs_grad {
                self.backprop_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Temporarily take the op so that `self` can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a).unwrap();
                let n = self.value(*b).shape()[1];
                self.matmul_back(*a, *b, g, m, k, n);
            }
            Op::Linear { x, w, b } => {
                let (m, k) = self.dims2(*x).unwrap();
                let n = self.value(*w).shape()[1];
                self.matmul_back(*x, *w, g, m, k, n);
                if let Some(b) = b {
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.add_into(*b, &db, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.add_into(*a, g, 1.0);
                self.add_into(*b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.add_into(*a, g, 1.0);
                self.add_into(*b, g, -1.0);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(g, y)| g * y).collect();
                    self.add_into(*a, &d, 1.0);
                }
                if self.needs(*b) {
                    let d: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).collect();
                    self.add_into(*b, &d, 1.0);
                }
            }
            Op::Scale(a, f) => self.add_into(*a, g, *f),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).data()[0];
                if self.needs(*s) {
                    let ds: f64 = g.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    self.add_into(*s, &[ds], 1.0);
                }
                self.add_into(*a, g, sv);
            }
            Op::DivScalar(a, s) => {
                let sv = self.value(*s).data()[0];
                if self.needs(*s) {
                    let ds: f64 = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, x)| -g * x / (sv * sv))
                        .sum();
                    self.add_into(*s, &[ds], 1.0);
                }
                self.add_into(*a, g, 1.0 / sv);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).len();
                let gv = self.value(*gain).data().to_vec();
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    self.add_into(*gain, &dg, 1.0);
                    self.add_into(*bias, &db, 1.0);
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, rs) in rstd.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            dx[r * d + j] = rs * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    self.add_into(*x, &dx, 1.0);
                }
            }
            Op::Gelu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, &v)| g * gelu_grad(v))
                    .collect();
                self.add_into(*x, &d, 1.0);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (lq, d) = self.dims2(*q).unwrap();
                let lk = self.value(*k).shape()[0];
                let (dq, dk, dv) = attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    lq,
                    lk,
                    d,
                    *heads,
                );
                self.add_into(*q, &dq, 1.0);
                self.add_into(*k, &dk, 1.0);
                self.add_into(*v, &dv, 1.0);
            }
            Op::GatherRows(x, idx) => {
                let cols = self.value(*x).shape()[1];
                self.accumulate(*x, |gx| {
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gx[i * cols + c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::ScatterRows(x, idx) => {
                let cols = self.value(*x).shape()[1];
                self.accumulate(*x, |gx| {
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gx[r * cols + c] += g[i * cols + c];
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).len();
                self.add_into(*a, &g[..na], 1.0);
                self.add_into(*b, &g[na..], 1.0);
            }
            Op::Reshape(x) => self.add_into(*x, g, 1.0),
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate(*x, |gx| gx.iter_mut().for_each(|v| *v += g0));
            }
            Op::Mse(a, b) => {
                let n = self.value(*a).len().max(1) as f64;
                let diff: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| 2.0 * g[0] * (x - y) / n)
                    .collect();
                self.add_into(*a, &diff, 1.0);
                self.add_into(*b, &diff, -1.0);
            }
            Op::PowerScale { x, p_s } => {
                // s = sqrt(p_s · n / Σx²)  ⇒  ds/dx = -s·x / Σx²
                let s = self.nodes[i].value.data()[0];
                let _ = p_s;
                let xv = self.value(*x).data();
                let sq: f64 = xv.iter().map(|v| v * v).sum();
                let d: Vec<f64> = xv.iter().map(|&v| -g[0] * s * v / sq).collect();
                self.add_into(*x, &d, 1.0);
            }
        }
        self.nodes[i].op = op;
    }

    fn matmul_back(&mut self, a: Var, b: Var, g: &[f64], m: usize, k: usize, n: usize) {
        if self.needs(a) {
            let mut da = vec![0.0; m * k];
            gemm(m, n, k, g, false, self.value(b).data(), true, &mut da, 0.0);
            self.add_into(a, &da, 1.0);
        }
        if self.needs(b) {
            let mut db = vec![0.0; k * n];
            gemm(k, m, n, self.value(a).data(), true, g, false, &mut db, 0.0);
            self.add_into(b, &db, 1.0);
        }
    }

    /// Gradients of every trainable parameter that received one.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                if !self.trainable[i] {
                    return None;
                }
                self.grad(v).map(|g| (ParamId::new(i), g))
            })
            .collect()
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

fn head_slice(src: &[f64], rows: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * dh);
    for r in 0..rows {
        out.extend_from_slice(&src[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn head_add(dst: &mut [f64], src: &[f64], rows: usize, d: usize, h: usize, dh: usize) {
    for r in 0..rows {
        for c in 0..dh {
            dst[r * d + h * dh + c] += src[r * dh + c];
        }
    }
}

/// Per-head row-stochastic attention weights `softmax(q_h k_hᵀ / √dh)`,
/// laid out as `heads × lq × lk`, and the concatenated head outputs.
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; lq * d];
    let mut probs = vec![0.0; heads * lq * lk];
    for h in 0..heads {
        let qh = head_slice(q, lq, d, h, dh);
        let kh = head_slice(k, lk, d, h, dh);
        let vh = head_slice(v, lk, d, h, dh);
        let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
        gemm(lq, dh, lk, &qh, false, &kh, true, p, 0.0);
        for row in p.chunks_exact_mut(lk) {
            let mut mx = f64::NEG_INFINITY;
            for s in row.iter_mut() {
                *s *= scale;
                mx = mx.max(*s);
            }
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - mx).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
        }
        let mut oh = vec![0.0; lq * dh];
        gemm(lq, lk, dh, p, false, &vh, false, &mut oh, 0.0);
        head_add(&mut out, &oh, lq, d, h, dh);
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    g: &[f64],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; lq * d];
    let mut dk = vec![0.0; lk * d];
    let mut dv = vec![0.0; lk * d];
    for h in 0..heads {
        let qh = head_slice(q, lq, d, h, dh);
        let kh = head_slice(k, lk, d, h, dh);
        let vh = head_slice(v, lk, d, h, dh);
        let gh = head_slice(g, lq, d, h, dh);
        let p = &probs[h * lq * lk..(h + 1) * lq * lk];

        let mut dvh = vec![0.0; lk * dh];
        gemm(lk, lq, dh, p, true, &gh, false, &mut dvh, 0.0);
        head_add(&mut dv, &dvh, lk, d, h, dh);

        let mut ds = vec![0.0; lq * lk];
        gemm(lq, dh, lk, &gh, false, &vh, true, &mut ds, 0.0);
        for (drow, prow) in ds.chunks_exact_mut(lk).zip(p.chunks_exact(lk)) {
            let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (dv, &pv) in drow.iter_mut().zip(prow) {
                *dv = pv * (*dv - dot) * scale;
            }
        }
        let mut dqh = vec![0.0; lq * dh];
        gemm(lq, lk, dh, &ds, false, &kh, false, &mut dqh, 0.0);
        head_add(&mut dq, &dqh, lq, d, h, dh);
        let mut dkh = vec![0.0; lk * dh];
        gemm(lk, lq, dh, &ds, true, &qh, false, &mut dkh, 0.0);
        head_add(&mut dk, &dkh, lk, d, h, dh);
    }
    (dq, dk, dv)
}
