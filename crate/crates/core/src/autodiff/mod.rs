//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is recorded fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! [`Graph::backward`] walks it once in reverse.

mod conv;
mod gradcheck;

pub use conv::Padding;
pub use gradcheck::{grad_check, grad_check_strided, max_rel_error};

use conv::ConvGeom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
    /// `elu(x) + 1`, strictly positive.
    EluPlusOne,
    Identity,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Reshape(Var),
    Elu(Var),
    EluPlusOne(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    FactorizedReadout {
        features: Var,
        mask: Var,
        weights: Var,
        pooled: Vec<T>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, for the running estimate.
    pub var: Vec<T>,
}

pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradient; also serves as stop-gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip(a, b, |p, q| p + q);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip(a, b, |p, q| p - q);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip(a, b, |p, q| p * q);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        self.unary(a, |v| v * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |v| v + c, Op::AddScalar(a))
    }

    /// Adds `bias` (`[C]`) along the last axis of `x` (`[.., C]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [c] {
            return Err(Error::shape(
                "add_bias",
                format!("input {:?} vs bias {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_exact_mut(c) {
            row.iter_mut().zip(&b).for_each(|(v, &bb)| *v = *v + bb);
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Elu => self.unary(a, elu, Op::Elu(a)),
            Activation::EluPlusOne => self.unary(a, |v| elu(v) + T::one(), Op::EluPlusOne(a)),
            Activation::Tanh => self.unary(a, T::tanh, Op::Tanh(a)),
            Activation::Identity => a,
        }
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, T::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, T::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, T::abs, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::scalar(x.sum() / T::c(x.numel().max(1) as f64));
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// NHWC convolution with kernel `[kh, kw, cin, cout]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::forward(self.shape(input), self.shape(kernel), stride, padding)?;
        let (out, cols) =
            conv::conv2d_forward(self.value(input).data(), self.value(kernel).data(), &geom);
        let value = Tensor::new(geom.output_shape().to_vec(), out)?;
        let rg = self.rg(&[input, kernel]);
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Transposed convolution with kernel `[kh, kw, cout, cin]`: the adjoint
    /// of [`Graph::conv2d`] with respect to its input.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::transpose(self.shape(input), self.shape(kernel), stride, padding)?;
        let out =
            conv::conv2d_input_grad(self.value(input).data(), self.value(kernel).data(), &geom);
        let value = Tensor::new(geom.input_shape().to_vec(), out)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                geom,
            },
            rg,
        ))
    }

    /// Normalizes each channel (last axis) by the statistics of this batch.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let c = self.bn_channels(input, gamma, beta)?;
        let x = self.value(input).data();
        let count = x.len() / c.max(1);
        if count < 2 {
            return Err(Error::domain(
                "batch_norm",
                format!(
                    "training mode needs more than one value per channel, input {:?}",
                    self.shape(input)
                ),
            ));
        }
        let inv_n = T::one() / T::c(count as f64);
        let mut mean = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m = *m + v);
        }
        mean.iter_mut().for_each(|m| *m = *m * inv_n);
        let mut var = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|&s| T::one() / (s * inv_n + eps).sqrt())
            .collect();
        let unbiased = var.iter().map(|&s| s / T::c((count - 1) as f64)).collect();
        let var_out = self.bn_apply(input, gamma, beta, &mean, inv_std, true)?;
        Ok((
            var_out,
            BatchStats {
                mean,
                var: unbiased,
            },
        ))
    }

    /// Normalizes with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let c = self.bn_channels(input, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics length"));
        }
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(input, gamma, beta, mean, inv_std, false)
    }

    fn bn_channels(&self, input: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = *self.shape(input).last().unwrap_or(&0);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "input {:?}, gamma {:?}, beta {:?}",
                    self.shape(input),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        Ok(c)
    }

    fn bn_apply(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        batch_stats: bool,
    ) -> Result<Var> {
        let c = mean.len();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let x = self.value(input);
        let mut xhat = Vec::with_capacity(x.numel());
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(h * g[ch] + b[ch]);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Factorized readout core: for features `[n,kh,kw,f]`, spatial masks
    /// `[kh,kw,m]` and feature weights `[f,m]`, returns `[n,m]` with
    /// `out[b,j] = Σ_f weights[f,j] · Σ_p mask[p,j] · features[b,p,f]`.
    pub fn factorized_readout(&mut self, features: Var, mask: Var, weights: Var) -> Result<Var> {
        let (sh, sm, sw) = (self.shape(features), self.shape(mask), self.shape(weights));
        if sh.len() != 4
            || sm.len() != 3
            || sw.len() != 2
            || sh[1..3] != sm[..2]
            || sh[3] != sw[0]
            || sm[2] != sw[1]
        {
            return Err(Error::shape(
                "factorized_readout",
                format!("features {sh:?}, mask {sm:?}, weights {sw:?}"),
            ));
        }
        let (n, p, f, m) = (sh[0], sh[1] * sh[2], sh[3], sm[2]);
        let h = self.value(features).data();
        let mk = self.value(mask).data();
        let w = self.value(weights).data();
        // pooled[b] = maskᵀ (m×p) · h[b] (p×f)
        let mut pooled = vec![T::zero(); n * m * f];
        for b in 0..n {
            gemm(
                m,
                p,
                f,
                mk,
                true,
                &h[b * p * f..(b + 1) * p * f],
                false,
                T::zero(),
                &mut pooled[b * m * f..(b + 1) * m * f],
            );
        }
        let mut out = vec![T::zero(); n * m];
        for b in 0..n {
            for j in 0..m {
                let row = &pooled[(b * m + j) * f..(b * m + j + 1) * f];
                out[b * m + j] = row.iter().enumerate().map(|(k, &v)| v * w[k * m + j]).sum();
            }
        }
        let rg = self.rg(&[features, mask, weights]);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::FactorizedReadout {
                features,
                mask,
                weights,
                pooled,
            },
            rg,
        ))
    }

    /// Rows of `table` (`[e,d]`) at `indices`, giving `[len, d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 || indices.iter().any(|&i| i >= st[0]) {
            return Err(Error::shape(
                "gather_rows",
                format!("table {st:?} with max index {:?}", indices.iter().max()),
            ));
        }
        let value = self.value(table).select_rows(indices);
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every leaf
    /// that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::domain(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads: Vec::new() });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(e, d)| *e = *e + d),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], f: impl Fn(usize, T) -> T) {
        if self.nodes[v.0].requires_grad {
            let local = g.iter().enumerate().map(|(i, &d)| f(i, d)).collect();
            self.acc(grads, v, local);
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc_with(grads, *b, g, |_, d| -d);
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                self.acc_with(grads, *a, g, |i, d| d * y[i]);
                self.acc_with(grads, *b, g, |i, d| d * x[i]);
            }
            Op::Scale(a, k) => self.acc_with(grads, *a, g, |_, d| d * *k),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, g.to_vec()),
            Op::AddBias(x, b) => {
                self.acc(grads, *x, g.to_vec());
                if self.requires_grad(*b) {
                    let c = self.shape(*b)[0];
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks_exact(c) {
                        db.iter_mut().zip(row).for_each(|(s, &d)| *s = *s + d);
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(m, n, k, g, false, val(*b), true, T::zero(), &mut da);
                    self.acc(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(k, m, n, val(*a), true, g, false, T::zero(), &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::Elu(a) => {
                let x = val(*a);
                self.acc_with(grads, *a, g, |i, d| {
                    if x[i] > T::zero() {
                        d
                    } else {
                        d * x[i].exp()
                    }
                });
            }
            Op::EluPlusOne(a) => {
                let x = val(*a);
                self.acc_with(
                    grads,
                    *a,
                    g,
                    |i, d| if x[i] > T::zero() { d } else { d * out[i] },
                );
            }
            Op::Tanh(a) => self.acc_with(grads, *a, g, |i, d| d * (T::one() - out[i] * out[i])),
            Op::Exp(a) => self.acc_with(grads, *a, g, |i, d| d * out[i]),
            Op::Log(a) => {
                let x = val(*a);
                self.acc_with(grads, *a, g, |i, d| d / x[i]);
            }
            Op::Square(a) => {
                let x = val(*a);
                self.acc_with(grads, *a, g, |i, d| d * (x[i] + x[i]));
            }
            Op::Abs(a) => {
                let x = val(*a);
                self.acc_with(grads, *a, g, |i, d| {
                    if x[i] > T::zero() {
                        d
                    } else if x[i] < T::zero() {
                        -d
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.acc(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                self.acc(grads, *a, vec![g[0] / T::c(n.max(1) as f64); n]);
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                if self.requires_grad(*input) {
                    self.acc(
                        grads,
                        *input,
                        conv::conv2d_input_grad(g, val(*kernel), geom),
                    );
                }
                if self.requires_grad(*kernel) {
                    self.acc(grads, *kernel, conv::conv2d_kernel_grad(cols, g, geom));
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                geom,
            } => {
                // Forward was dx of a conv; backward is that conv.
                let gcols = conv::im2col(g, geom);
                if self.requires_grad(*input) {
                    let mut dy = vec![T::zero(); geom.rows() * geom.cout];
                    gemm(
                        geom.rows(),
                        geom.patch(),
                        geom.cout,
                        &gcols,
                        false,
                        val(*kernel),
                        false,
                        T::zero(),
                        &mut dy,
                    );
                    self.acc(grads, *input, dy);
                }
                if self.requires_grad(*kernel) {
                    self.acc(
                        grads,
                        *kernel,
                        conv::conv2d_kernel_grad(&gcols, val(*input), geom),
                    );
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        dgamma[ch] = dgamma[ch] + grow[ch] * hrow[ch];
                        dbeta[ch] = dbeta[ch] + grow[ch];
                    }
                }
                if self.requires_grad(*input) {
                    let gm = val(*gamma);
                    let count = T::c((g.len() / c) as f64);
                    let mut dx = Vec::with_capacity(g.len());
                    for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            let scale = gm[ch] * inv_std[ch];
                            dx.push(if *batch_stats {
                                scale
                                    * (grow[ch] - dbeta[ch] / count - hrow[ch] * dgamma[ch] / count)
                            } else {
                                scale * grow[ch]
                            });
                        }
                    }
                    self.acc(grads, *input, dx);
                }
                self.acc(grads, *gamma, dgamma);
                self.acc(grads, *beta, dbeta);
            }
            Op::FactorizedReadout {
                features,
                mask,
                weights,
                pooled,
            } => {
                let sh = self.shape(*features);
                let (n, p, f) = (sh[0], sh[1] * sh[2], sh[3]);
                let m = self.shape(*mask)[2];
                let (h, mk, w) = (val(*features), val(*mask), val(*weights));
                if self.requires_grad(*weights) {
                    let mut dw = vec![T::zero(); f * m];
                    for b in 0..n {
                        for j in 0..m {
                            let gj = g[b * m + j];
                            let row = &pooled[(b * m + j) * f..(b * m + j + 1) * f];
                            for k in 0..f {
                                dw[k * m + j] = dw[k * m + j] + gj * row[k];
                            }
                        }
                    }
                    self.acc(grads, *weights, dw);
                }
                let need_mask = self.requires_grad(*mask);
                let need_h = self.requires_grad(*features);
                if need_mask || need_h {
                    let mut dmask = vec![T::zero(); if need_mask { p * m } else { 0 }];
                    let mut dh = vec![T::zero(); if need_h { n * p * f } else { 0 }];
                    let mut dpooled = vec![T::zero(); m * f];
                    for b in 0..n {
                        for j in 0..m {
                            let gj = g[b * m + j];
                            for k in 0..f {
                                dpooled[j * f + k] = gj * w[k * m + j];
                            }
                        }
                        let hb = &h[b * p * f..(b + 1) * p * f];
                        if need_mask {
                            // dmask (p×m) += h_b (p×f) · dpooledᵀ (f×m)
                            gemm(p, f, m, hb, false, &dpooled, true, T::one(), &mut dmask);
                        }
                        if need_h {
                            // dh_b (p×f) = mask (p×m) · dpooled (m×f)
                            gemm(
                                p,
                                m,
                                f,
                                mk,
                                false,
                                &dpooled,
                                false,
                                T::zero(),
                                &mut dh[b * p * f..(b + 1) * p * f],
                            );
                        }
                    }
                    if need_mask {
                        self.acc(grads, *mask, dmask);
                    }
                    if need_h {
                        self.acc(grads, *features, dh);
                    }
                }
            }
            Op::Gather { table, indices } => {
                if self.requires_grad(*table) {
                    let st = self.shape(*table);
                    let d = st[1];
                    let mut dt = vec![T::zero(); st[0] * d];
                    for (row, &i) in indices.iter().enumerate() {
                        for k in 0..d {
                            dt[i * d + k] = dt[i * d + k] + g[row * d + k];
                        }
                    }
                    self.acc(grads, *table, dt);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn elu<T: Element>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// `None` when `v` is not a leaf that requires gradient, or no path
    /// connects it to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
