//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only arena of nodes. Every operation evaluates
//! eagerly, stores its output, and records which nodes it read. Because a
//! node can only reference nodes created before it, the arena order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use sthcss_core::tape::Tape;
//! use sthcss_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

/// Variance floor used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape_id: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        floored: Vec<bool>,
    },
    SwapLast2(Var),
    Reshape(Var),
    CausalConv {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    NodeMix {
        mixer: Tensor,
        x: Var,
    },
    Mse {
        yhat: Var,
        target: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not reach the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        assert_eq!(var.tape_id, self.tape_id, "variable from another tape");
        let shape = &self.shapes[var.index];
        match &self.grads[var.index] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient (data, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v);
        &self.nodes[v.index].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index,
            tape_id: self.id,
        }
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape_id, self.id, "variable belongs to another tape");
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a);
        self.check(b);
        let out = self.val(a).matmul(self.val(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a bias vector along the last axis of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x);
        self.check(bias);
        let (xv, bv) = (self.val(x), self.val(bias));
        let n = xv.last_dim();
        if bv.len() != n {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match last axis of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values(a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values(a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a);
        self.check(b);
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.check(x);
        let out = self.val(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.check(x);
        let out = self.val(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Inverted dropout. Outside training this returns `x` itself and draws
    /// nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        rng: &mut R,
        train: bool,
    ) -> Result<Var> {
        self.check(x);
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.val(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        let xv = self.val(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Normalizes every row along the last axis to zero mean and unit
    /// variance, then applies `gamma * xhat + beta`. Row variance is floored
    /// at [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.check(x);
        self.check(gamma);
        self.check(beta);
        let (xv, gv, bv) = (self.val(x), self.val(gamma), self.val(beta));
        let n = xv.last_dim();
        if gv.len() != n || bv.len() != n {
            return Err(Error::Dimension(format!(
                "layer norm affine {:?}/{:?} vs normalized axis {n}",
                gv.shape(),
                bv.shape()
            )));
        }
        let rows = xv.len() / n;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut floored = vec![false; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            floored[r] = var < LAYER_NORM_EPS;
            let is = 1.0 / var.max(LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                floored,
            },
            rg,
        ))
    }

    /// Swaps the last two axes (matrix transpose, batched over leading axes).
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        self.check(x);
        let xv = self.val(x);
        let r = xv.rank();
        if r < 2 {
            return Err(Error::Dimension(format!(
                "swap_last2 needs rank >= 2, got {:?}",
                xv.shape()
            )));
        }
        let mut shape = xv.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let out = Tensor::new(shape, swap_last2(xv.data(), xv.shape()[r - 2], xv.shape()[r - 1]))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SwapLast2(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x);
        let out = self.val(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Causal dilated convolution of every row (last axis) of `x` with the
    /// shared kernel `w` and scalar bias `b`, zero left-padded so the output
    /// keeps the input's shape.
    pub fn causal_conv(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        self.check(x);
        self.check(w);
        self.check(b);
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        if bv.len() != 1 {
            return Err(Error::Dimension(format!(
                "conv bias must be a scalar, got {:?}",
                bv.shape()
            )));
        }
        let out = causal_conv_rows(xv.data(), xv.last_dim(), wv.data(), bv.data()[0], dilation)?;
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, Op::CausalConv { x, w, b, dilation }, rg))
    }

    /// Left-multiplies every `[D, C]` slice of `x` (shape `[.., D, C]`) by the
    /// fixed matrix `mixer` (`D × D`).
    pub fn node_mix(&mut self, mixer: &Tensor, x: Var) -> Result<Var> {
        self.check(x);
        let xv = self.val(x);
        let (d, d2) = mixer.dims2()?;
        let r = xv.rank();
        if d != d2 || r < 2 || xv.shape()[r - 2] != d {
            return Err(Error::Dimension(format!(
                "node mixing matrix {:?} vs features {:?}",
                mixer.shape(),
                xv.shape()
            )));
        }
        let c = xv.shape()[r - 1];
        let mut out = vec![0.0; xv.len()];
        for (xs, os) in xv.data().chunks(d * c).zip(out.chunks_mut(d * c)) {
            gemm(mixer.data(), xs, os, d, d, c);
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::NodeMix {
                mixer: mixer.clone(),
                x,
            },
            rg,
        ))
    }

    /// Mean squared error between `yhat` and a fixed target.
    pub fn mse(&mut self, yhat: Var, target: &[f64]) -> Result<Var> {
        self.check(yhat);
        let yv = self.val(yhat);
        if yv.len() != target.len() || target.is_empty() {
            return Err(Error::Dimension(format!(
                "mse between {} predictions and {} targets",
                yv.len(),
                target.len()
            )));
        }
        let n = target.len() as f64;
        let loss = yv
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[yhat]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                yhat,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.check(x);
        let s = self.val(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Accumulates d(loss)/d(node) for every node that reaches `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss);
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            tape_id: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Returns the gradient buffer of `v`, or None when `v` needs no gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let node = &self.nodes[v.index];
                if node.requires_grad {
                    Some(
                        grads[v.index]
                            .get_or_insert_with(|| vec![0.0; node.value.len()])
                            .as_mut_slice(),
                    )
                } else {
                    None
                }
            }};
        }

        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if let Some(da) = acc!(*a) {
                    gemm_nt(g, bv.data(), da, m, n, k);
                }
                if let Some(db) = acc!(*b) {
                    gemm_tn(av.data(), g, db, m, k, n);
                }
            }
            Op::AddRowBias(x, b) => {
                if let Some(dx) = acc!(*x) {
                    add_into(dx, g);
                }
                let n = self.val(*b).len();
                if let Some(db) = acc!(*b) {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = acc!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = acc!(*b) {
                    add_into(db, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                if let Some(da) = acc!(*a) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = acc!(*b) {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.val(*x).data();
                if let Some(dx) = acc!(*x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = acc!(*x) {
                    for ((d, gi), s) in dx.iter_mut().zip(g).zip(out.data()) {
                        *d += gi * s * (1.0 - s);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = acc!(*x) {
                    for ((d, gi), m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                floored,
            } => {
                let gv = self.val(*gamma).data();
                let n = gv.len();
                if let Some(dx) = acc!(*x) {
                    let mut dxhat = vec![0.0; n];
                    for (r, (&is, &fl)) in inv_std.iter().zip(floored).enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh = if fl {
                            0.0
                        } else {
                            dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64
                        };
                        let dr = &mut dx[r * n..(r + 1) * n];
                        for j in 0..n {
                            dr[j] += is * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
                if let Some(dg) = acc!(*gamma) {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(db) = acc!(*beta) {
                    for gr in g.chunks(n) {
                        add_into(db, gr);
                    }
                }
            }
            Op::SwapLast2(x) => {
                let s = out.shape();
                let r = s.len();
                // `out` is [.., c, r]; swapping back gives [.., r, c]
                let back = swap_last2(g, s[r - 2], s[r - 1]);
                if let Some(dx) = acc!(*x) {
                    add_into(dx, &back);
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = acc!(*x) {
                    add_into(dx, g);
                }
            }
            Op::CausalConv { x, w, b, dilation } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let len = xv.last_dim();
                let k = wv.len();
                if let Some(dx) = acc!(*x) {
                    for (gr, dr) in g.chunks(len).zip(dx.chunks_mut(len)) {
                        for t in 0..len {
                            for tau in 0..k {
                                let lag = tau * dilation;
                                if lag > t {
                                    break;
                                }
                                dr[t - lag] += wv.data()[tau] * gr[t];
                            }
                        }
                    }
                }
                if let Some(dw) = acc!(*w) {
                    for (gr, xr) in g.chunks(len).zip(xv.data().chunks(len)) {
                        for (tau, d) in dw.iter_mut().enumerate() {
                            let lag = tau * dilation;
                            for t in lag..len {
                                *d += gr[t] * xr[t - lag];
                            }
                        }
                    }
                }
                if let Some(db) = acc!(*b) {
                    db[0] += g.iter().sum::<f64>();
                }
            }
            Op::NodeMix { mixer, x } => {
                let s = out.shape();
                let r = s.len();
                let (d, c) = (s[r - 2], s[r - 1]);
                if let Some(dx) = acc!(*x) {
                    for (gs, ds) in g.chunks(d * c).zip(dx.chunks_mut(d * c)) {
                        gemm_tn(mixer.data(), gs, ds, d, d, c);
                    }
                }
            }
            Op::Mse { yhat, target } => {
                let yv = self.val(*yhat).data();
                let scale = 2.0 * g[0] / target.len() as f64;
                if let Some(dy) = acc!(*yhat) {
                    for ((d, y), t) in dy.iter_mut().zip(yv).zip(target) {
                        *d += scale * (y - t);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = acc!(*x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn swap_last2(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(rows * cols).zip(out.chunks_mut(rows * cols)) {
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}

fn causal_conv_rows(
    x: &[f64],
    len: usize,
    w: &[f64],
    bias: f64,
    dilation: usize,
) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("kernel size must be at least 1".into()));
    }
    if dilation == 0 {
        return Err(Error::InvalidArgument("dilation must be at least 1".into()));
    }
    let mut out = vec![bias; x.len()];
    for (xr, or) in x.chunks(len).zip(out.chunks_mut(len)) {
        for (t, o) in or.iter_mut().enumerate() {
            for (tau, wt) in w.iter().enumerate() {
                let lag = tau * dilation;
                if lag > t {
                    break;
                }
                *o += wt * xr[t - lag];
            }
        }
    }
    Ok(out)
}

/// `out_t = sum_tau w_tau * x_{t - tau*dilation} + bias`, with `x_s = 0` for
/// `s < 0`. Output length equals input length.
pub fn causal_conv1d(x: &[f64], w: &[f64], bias: f64, dilation: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty input series".into()));
    }
    causal_conv_rows(x, x.len(), w, bias, dilation)
}
