//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Node indices are assigned in execution order,
//! so the tape is topologically sorted by construction and backward is a
//! single reverse sweep.
//!
//! A tape can be backpropagated once. A second call to [`Tape::backward`] is
//! rejected with [`Error::AlreadyBackpropagated`]; build a new tape per step.

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        cols: Vec<T>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Relu {
        input: Var,
    },
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    SmoothL1 {
        pred: Var,
        target: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        inputs: Vec<Var>,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backpropagated: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `var`. `None` when no gradient
    /// reached the node (it does not influence the root or does not require
    /// a gradient).
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Same as [`get`](Self::get) but yields zeros for untouched nodes.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<T> {
        self.get(var)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); len])
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// 2-D cross-correlation of a `[C_in, H, W]` input with
    /// `[C_out, C_in, k, k]` weights and a `[C_out]` bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let geom = ConvGeom::new(x.shape(), w.shape(), b.shape(), stride, padding)?;
        let mut cols = vec![T::zero(); geom.col_rows() * geom.out_area()];
        im2col(x.data(), &geom, &mut cols);

        let mut out = vec![T::zero(); geom.c_out * geom.out_area()];
        for (o, row) in out.chunks_mut(geom.out_area()).enumerate() {
            row.fill(b.data()[o]);
        }
        let k = geom.col_rows();
        let n = geom.out_area();
        T::gemm(
            geom.c_out,
            k,
            n,
            T::one(),
            w.data(),
            k as isize,
            1,
            &cols,
            n as isize,
            1,
            T::one(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![geom.c_out, geom.out_h, geom.out_w], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
                cols,
            },
            rg,
        ))
    }

    /// 2x2 max pooling with stride 2 over a `[C, H, W]` input.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[c, h, w] = x.shape() else {
            return Err(Error::InvalidArgument(format!(
                "max_pool2 expects [C, H, W], got {:?}",
                x.shape()
            )));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "max_pool2 needs even spatial size, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    // Row-major window order; strict `>` keeps the first maximum.
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[input]);
        self.push(value, Op::Relu { input }, rg)
    }

    /// Flat element selection; output is a 1-D tensor of `input[indices[i]]`.
    pub fn gather(&mut self, input: Var, indices: Vec<usize>) -> Result<Var> {
        let x = self.value(input);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::InvalidArgument(format!(
                "gather index {bad} out of range for tensor of {} elements",
                x.len()
            )));
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let value = Tensor::from_vec(data);
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Gather { input, indices }, rg))
    }

    /// Negative log softmax probability of `target`.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.value(logits);
        let n = x.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "softmax_xent needs at least 2 logits, got {n}"
            )));
        }
        if target >= n {
            return Err(Error::InvalidArgument(format!(
                "softmax_xent target {target} out of range for {n} logits"
            )));
        }
        let (loss, probs) = softmax_xent_value(x.data(), target);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
            rg,
        ))
    }

    /// Summed smooth L1 (transition at 1) between `pred` and a constant target.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape("smooth_l1", p.shape(), target.shape()));
        }
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| smooth_l1_value(a - b))
            .sum();
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothL1 {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    /// `Σ weights[i] · inputs[i]` over scalar inputs. An empty list yields 0.
    pub fn weighted_sum(&mut self, inputs: Vec<Var>, weights: Vec<T>) -> Result<Var> {
        if inputs.len() != weights.len() {
            return Err(Error::shape("weighted_sum", &[inputs.len()], &[weights.len()]));
        }
        let mut total = T::zero();
        for (&v, &w) in inputs.iter().zip(&weights) {
            let x = self.value(v);
            if !x.is_scalar() {
                return Err(Error::shape("weighted_sum", x.shape(), &[]));
            }
            total = total + w * x.item();
        }
        let rg = self.needs(&inputs);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { inputs, weights }, rg))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if self.backpropagated {
            return Err(Error::AlreadyBackpropagated);
        }
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        self.backpropagated = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
                cols,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let b = self.value(*bias);
                let geom = ConvGeom::new(x.shape(), w.shape(), b.shape(), *stride, *padding)
                    .expect("validated in forward");
                let k = geom.col_rows();
                let n = geom.out_area();
                if self.nodes[bias.0].requires_grad {
                    let gb = grad_slot(grads, *bias, b.len());
                    for (o, row) in g.chunks(n).enumerate() {
                        gb[o] = gb[o] + row.iter().copied().sum();
                    }
                }
                if self.nodes[weight.0].requires_grad {
                    let gw = grad_slot(grads, *weight, w.len());
                    // dW += dOut · colsᵀ
                    T::gemm(
                        geom.c_out,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        cols,
                        1,
                        n as isize,
                        T::one(),
                        gw,
                        k as isize,
                        1,
                    );
                }
                if self.nodes[input.0].requires_grad {
                    // dCols = Wᵀ · dOut
                    let mut dcols = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        geom.c_out,
                        n,
                        T::one(),
                        w.data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        n as isize,
                        1,
                    );
                    let gx = grad_slot(grads, *input, x.len());
                    col2im(&dcols, &geom, gx);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let len = self.value(*input).len();
                let gx = grad_slot(grads, *input, len);
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src as usize] = gx[src as usize] + gv;
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let gx = grad_slot(grads, *input, x.len());
                for ((acc, &xv), &gv) in gx.iter_mut().zip(x.data()).zip(g) {
                    if xv > T::zero() {
                        *acc = *acc + gv;
                    }
                }
            }
            Op::Gather { input, indices } => {
                let len = self.value(*input).len();
                let gx = grad_slot(grads, *input, len);
                for (&i, &gv) in indices.iter().zip(g) {
                    gx[i] = gx[i] + gv;
                }
            }
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            } => {
                let gx = grad_slot(grads, *logits, probs.len());
                let up = g[0];
                for (j, (acc, &p)) in gx.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *target { T::one() } else { T::zero() };
                    *acc = *acc + up * (p - onehot);
                }
            }
            Op::SmoothL1 { pred, target } => {
                let p = self.value(*pred);
                let gx = grad_slot(grads, *pred, p.len());
                let up = g[0];
                for ((acc, &a), &b) in gx.iter_mut().zip(p.data()).zip(target) {
                    let d = a - b;
                    let dd = if d.abs() < T::one() { d } else { d.signum() };
                    *acc = *acc + up * dd;
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.nodes[v.0].requires_grad {
                        let gx = grad_slot(grads, v, g.len());
                        for (acc, &gv) in gx.iter_mut().zip(g) {
                            *acc = *acc + gv;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                if self.nodes[a.0].requires_grad {
                    let gx = grad_slot(grads, *a, g.len());
                    for ((acc, &gv), &o) in gx.iter_mut().zip(g).zip(xb) {
                        *acc = *acc + gv * o;
                    }
                }
                if self.nodes[b.0].requires_grad {
                    let gx = grad_slot(grads, *b, g.len());
                    for ((acc, &gv), &o) in gx.iter_mut().zip(g).zip(xa) {
                        *acc = *acc + gv * o;
                    }
                }
            }
            Op::Sum { input } => {
                let len = self.value(*input).len();
                let gx = grad_slot(grads, *input, len);
                for acc in gx.iter_mut() {
                    *acc = *acc + g[0];
                }
            }
            Op::WeightedSum { inputs, weights } => {
                for (&v, &w) in inputs.iter().zip(weights) {
                    if self.nodes[v.0].requires_grad {
                        let gx = grad_slot(grads, v, 1);
                        gx[0] = gx[0] + w * g[0];
                    }
                }
            }
        }
    }
}

fn grad_slot<T: Real>(grads: &mut [Option<Vec<T>>], var: Var, len: usize) -> &mut Vec<T> {
    grads[var.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Loss and softmax probabilities, using max-subtraction for stability.
pub fn softmax_xent_value<T: Real>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let probs = exps.iter().map(|&e| e / total).collect();
    let loss = total.ln() - (logits[target] - max);
    (loss, probs)
}

pub fn smooth_l1_value<T: Real>(d: T) -> T {
    let half = T::from_f64_lossy(0.5);
    if d.abs() < T::one() {
        half * d * d
    } else {
        d.abs() - half
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(
        x: &[usize],
        w: &[usize],
        b: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let &[c_in, h, wd] = x else {
            return Err(Error::shape("conv2d input", x, &[0, 0, 0]));
        };
        let &[c_out, wc_in, kh, kw] = w else {
            return Err(Error::shape("conv2d weights", w, &[0, 0, 0, 0]));
        };
        if wc_in != c_in {
            return Err(Error::shape("conv2d input/weights", x, w));
        }
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel must be 1x1 or 3x3, got {kh}x{kw}"
            )));
        }
        if b != [c_out] {
            return Err(Error::shape("conv2d weights/bias", w, b));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * padding;
            if padded < kh || !(padded - kh).is_multiple_of(stride) {
                return Err(Error::InvalidArgument(format!(
                    "conv2d output size ({n} + 2*{padding} - {kh})/{stride} + 1 is not a positive integer"
                )));
            }
            Ok((padded - kh) / stride + 1)
        };
        Ok(Self {
            c_in,
            h,
            w: wd,
            c_out,
            k: kh,
            stride,
            padding,
            out_h: span(h)?,
            out_w: span(wd)?,
        })
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output position and kernel offset, or `None` in padding.
    #[inline]
    fn source(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let n = g.out_area();
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    let src_row = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            *d = src_row[ix];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, gx: &mut [T]) {
    let n = g.out_area();
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    let base = (c * g.h + iy) * g.w;
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            gx[base + ix] = gx[base + ix] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
