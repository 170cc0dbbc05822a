//! Reverse-mode differentiation over a recorded graph of tensor operations.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] walks it in reverse. A node
//! carries a gradient only if some input does; [`Graph::stop_gradient`]
//! cuts that flag, so nothing upstream of a stop ever receives gradient from
//! below it.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dSpec {
    /// "Same" padding for an odd kernel: the output is `ceil(input / stride)`.
    pub fn same(kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            pad: (kernel - 1) / 2,
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    },
    Upsample2x(Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ConcatChannels(Vec<Var>),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Reshape(Var),
    NarrowCols {
        input: Var,
        start: usize,
    },
    StopGradient,
    Sum(Var),
    Mean(Var),
    Mse {
        pred: Var,
        target: Tensor<T>,
        mask: Option<Tensor<T>>,
        denom: T,
    },
    Bce {
        logits: Var,
        labels: Tensor<T>,
        mask: Option<Tensor<T>>,
        denom: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward evaluation with everything needed to differentiate it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    trainable: bool,
    frozen_stops: Option<Vec<Tensor<T>>>,
    stops_seen: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Graph whose parameters receive gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            trainable: true,
            frozen_stops: None,
            stops_seen: 0,
        }
    }

    /// Graph for evaluation only: no node requires a gradient.
    pub fn inference() -> Self {
        Self {
            trainable: false,
            ..Self::new()
        }
    }

    /// Graph in which the `i`-th [`Graph::stop_gradient`] call returns
    /// `values[i]` instead of its input. Evaluating a loss this way while
    /// perturbing parameters differentiates it with the stopped tensors held
    /// constant, which is exactly what the analytic gradient computes.
    pub fn with_frozen_stops(values: Vec<Tensor<T>>) -> Self {
        Self {
            frozen_stops: Some(values),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Parameter leaf; repeated calls with the same id share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let trainable = self.trainable;
        let v = self.push(store.get(id).clone(), Op::Param, trainable);
        self.params.insert(id, v);
        v
    }

    /// Cross-correlation of `[N,C,H,W]` input with a `[F,C,kh,kw]` kernel, plus optional `[F]` bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        if x.rank() != 4 || k.rank() != 4 || x.shape()[1] != k.shape()[1] {
            return Err(shape_err(
                "conv2d",
                format!("input {:?} vs kernel {:?}", x.shape(), k.shape()),
            ));
        }
        if spec.stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [k.shape()[0]] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} for {} filters", self.shape(b), k.shape()[0]),
                ));
            }
        }
        let geom = ConvGeom::new(x.shape(), k.shape(), spec)?;
        let mut out = vec![T::zero(); geom.n * geom.f * geom.out_pix()];
        let mut cols = Vec::new();
        let ckk = geom.ckk();
        let opix = geom.out_pix();
        for n in 0..geom.n {
            let col = geom.columns(x.data(), n, &mut cols);
            let dst = &mut out[n * geom.f * opix..(n + 1) * geom.f * opix];
            T::gemm(
                geom.f,
                ckk,
                opix,
                T::one(),
                k.data(),
                (ckk as isize, 1),
                col,
                (opix as isize, 1),
                T::zero(),
                dst,
                (opix as isize, 1),
            );
        }
        if let Some(b) = bias {
            let bias = self.value(b).data();
            for chunk in out.chunks_mut(opix).enumerate() {
                let bf = bias[chunk.0 % geom.f];
                chunk.1.iter_mut().for_each(|v| *v = *v + bf);
            }
        }
        let value = Tensor::new([geom.n, geom.f, geom.oh, geom.ow], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let g = self.any_grad(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                spec,
            },
            g,
        ))
    }

    /// Nearest-neighbour 2× upsampling of `[N,C,H,W]`.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(shape_err("upsample2x", format!("{:?}", x.shape())));
        }
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let mut out = Vec::with_capacity(n * c * h * w * 4);
        for plane in x.data().chunks(h * w) {
            for row in plane.chunks(w) {
                for _ in 0..2 {
                    for v in row {
                        out.push(*v);
                        out.push(*v);
                    }
                }
            }
        }
        let value = Tensor::new([n, c, 2 * h, 2 * w], out)?;
        let g = self.any_grad(&[input]);
        Ok(self.push(value, Op::Upsample2x(input), g))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(T::zero()));
        let g = self.any_grad(&[input]);
        self.push(value, Op::Relu(input), g)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        let g = self.any_grad(&[input]);
        self.push(value, Op::Sigmoid(input), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let g = self.any_grad(&[input]);
        self.push(value, Op::Scale(input, factor), g)
    }

    pub fn add_scalar(&mut self, input: Var, offset: T) -> Var {
        let value = self.value(input).map(|v| v + offset);
        let g = self.any_grad(&[input]);
        self.push(value, Op::AddScalar(input), g)
    }

    /// Concatenates `[N,Ci,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| shape_err("concat_channels", "no inputs"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 4 {
            return Err(shape_err("concat_channels", format!("{s0:?}")));
        }
        let mut channels = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] {
                return Err(shape_err("concat_channels", format!("{s:?} vs {s0:?}")));
            }
            channels += s[1];
        }
        let (n, hw) = (s0[0], s0[2] * s0[3]);
        let mut out = Vec::with_capacity(n * channels * hw);
        for b in 0..n {
            for v in inputs {
                let x = self.value(*v);
                let per = x.shape()[1] * hw;
                out.extend_from_slice(&x.data()[b * per..(b + 1) * per]);
            }
        }
        let value = Tensor::new([n, channels, s0[2], s0[3]], out)?;
        let g = self.any_grad(inputs);
        Ok(self.push(value, Op::ConcatChannels(inputs.to_vec()), g))
    }

    /// `[N,D] · [O,D]ᵀ + [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(shape_err(
                "linear",
                format!("input {:?} vs weight {:?}", x.shape(), w.shape()),
            ));
        }
        let (n, d, o) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = bias {
            let bias = self.value(b);
            if bias.shape() != [o] {
                return Err(shape_err("linear", format!("bias {:?} for {o} outputs", bias.shape())));
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bias.data());
            }
        }
        T::gemm(
            n,
            d,
            o,
            T::one(),
            x.data(),
            (d as isize, 1),
            w.data(),
            (1, d as isize),
            T::one(),
            &mut out,
            (o as isize, 1),
        );
        let value = Tensor::new([n, o], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let g = self.any_grad(&deps);
        Ok(self.push(value, Op::Linear { input, weight, bias }, g))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        let g = self.any_grad(&[input]);
        Ok(self.push(value, Op::Reshape(input), g))
    }

    /// Flattens `[N, ...]` to `[N, rest]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let n = *s.first().ok_or_else(|| shape_err("flatten", "rank-0 input"))?;
        let rest = s[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    /// Columns `start..start+len` of a `[N,D]` tensor.
    pub fn narrow_cols(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 2 || start + len > x.shape()[1] || len == 0 {
            return Err(shape_err(
                "narrow_cols",
                format!("{:?}[.., {start}..{}]", x.shape(), start + len),
            ));
        }
        let d = x.shape()[1];
        let data = x
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new([x.shape()[0], len], data)?;
        let g = self.any_grad(&[input]);
        Ok(self.push(value, Op::NarrowCols { input, start }, g))
    }

    /// Identity in the forward pass; blocks every gradient in the backward pass.
    pub fn stop_gradient(&mut self, input: Var) -> Result<Var> {
        let index = self.stops_seen;
        self.stops_seen += 1;
        let value = match &self.frozen_stops {
            Some(frozen) => {
                let v = frozen
                    .get(index)
                    .ok_or_else(|| shape_err("stop_gradient", format!("no frozen value for stop #{index}")))?;
                if v.shape() != self.shape(input) {
                    return Err(shape_err(
                        "stop_gradient",
                        format!("frozen {:?} vs live {:?}", v.shape(), self.shape(input)),
                    ));
                }
                v.clone()
            }
            None => self.value(input).clone(),
        };
        Ok(self.push(value, Op::StopGradient, false))
    }

    /// Outputs of every stop-gradient node, in creation order.
    pub fn stopped_values(&self) -> Vec<Tensor<T>> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::StopGradient))
            .map(|n| n.value.clone())
            .collect()
    }

    /// Sign pattern of every relu input (`true` where the unit is active).
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|v| *v > T::zero()))
            .collect()
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let g = self.any_grad(&[input]);
        self.push(value, Op::Sum(input), g)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor::scalar(x.sum() / T::c(x.numel() as f64));
        let g = self.any_grad(&[input]);
        self.push(value, Op::Mean(input), g)
    }

    /// Mean squared error over the elements selected by `mask` (weights in
    /// `[0,1]`); an all-zero mask yields a zero loss.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Var> {
        self.check_target("mse", pred, target, mask)?;
        let p = self.value(pred).data();
        let t = target.data();
        let (total, denom) = match mask {
            Some(m) => {
                let denom: T = m.data().iter().copied().sum();
                let total = p
                    .iter()
                    .zip(t)
                    .zip(m.data())
                    .map(|((p, t), m)| *m * (*p - *t) * (*p - *t))
                    .sum::<T>();
                (total, denom)
            }
            None => (
                p.iter().zip(t).map(|(p, t)| (*p - *t) * (*p - *t)).sum::<T>(),
                T::c(p.len() as f64),
            ),
        };
        let loss = if denom > T::zero() { total / denom } else { T::zero() };
        let g = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
                mask: mask.cloned(),
                denom,
            },
            g,
        ))
    }

    /// Binary cross-entropy of logits against labels in `[0,1]`, averaged over
    /// the masked elements; an all-zero mask yields a zero loss.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Var> {
        self.check_target("bce", logits, labels, mask)?;
        let x = self.value(logits).data();
        let y = labels.data();
        let per = |x: T, y: T| x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p();
        let (total, denom) = match mask {
            Some(m) => (
                x.iter()
                    .zip(y)
                    .zip(m.data())
                    .map(|((x, y), m)| *m * per(*x, *y))
                    .sum::<T>(),
                m.data().iter().copied().sum::<T>(),
            ),
            None => (
                x.iter().zip(y).map(|(x, y)| per(*x, *y)).sum::<T>(),
                T::c(x.len() as f64),
            ),
        };
        let loss = if denom > T::zero() { total / denom } else { T::zero() };
        let g = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                labels: labels.clone(),
                mask: mask.cloned(),
                denom,
            },
            g,
        ))
    }

    fn check_target(&self, op: &'static str, pred: Var, target: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<()> {
        let s = self.shape(pred);
        if target.shape() != s {
            return Err(shape_err(op, format!("pred {s:?} vs target {:?}", target.shape())));
        }
        if let Some(m) = mask {
            if m.shape() != s {
                return Err(shape_err(op, format!("pred {s:?} vs mask {:?}", m.shape())));
            }
            if m.data().iter().any(|w| !(*w >= T::zero() && *w <= T::one())) {
                return Err(shape_err(op, "mask weights must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        let params = self.params.iter().map(|(id, v)| (*id, *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: Var, delta: Tensor<T>) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, up: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data);
        match &node.op {
            Op::Input | Op::Param | Op::StopGradient => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                spec,
            } => self.conv2d_backward(*input, *kernel, *bias, *spec, up, grads)?,
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                let mut d = vec![T::zero(); self.value(*x).numel()];
                for (plane, src) in d.chunks_mut(h * w).zip(up.data().chunks(4 * h * w)) {
                    for (i, row) in plane.chunks_mut(w).enumerate() {
                        for (j, cell) in row.iter_mut().enumerate() {
                            let r0 = 2 * i * 2 * w;
                            let r1 = (2 * i + 1) * 2 * w;
                            *cell = src[r0 + 2 * j] + src[r0 + 2 * j + 1] + src[r1 + 2 * j] + src[r1 + 2 * j + 1];
                        }
                    }
                }
                let t = like(*x, d)?;
                self.accumulate(grads, *x, t);
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(v, g)| if *v > T::zero() { *g } else { T::zero() })
                    .collect();
                let t = like(*x, d)?;
                self.accumulate(grads, *x, t);
            }
            Op::Sigmoid(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(s, g)| *g * *s * (T::one() - *s))
                    .collect();
                let t = like(*x, d)?;
                self.accumulate(grads, *x, t);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                if self.wants(*a) {
                    let d = vb.iter().zip(up.data()).map(|(y, g)| *y * *g).collect();
                    let t = like(*a, d)?;
                    self.accumulate(grads, *a, t);
                }
                if self.wants(*b) {
                    let d = va.iter().zip(up.data()).map(|(x, g)| *x * *g).collect();
                    let t = like(*b, d)?;
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Scale(x, factor) => {
                let f = *factor;
                self.accumulate(grads, *x, up.map(|g| g * f));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, up.clone()),
            Op::ConcatChannels(inputs) => {
                let s = node.value.shape();
                let (n, total, hw) = (s[0], s[1], s[2] * s[3]);
                let mut offset = 0;
                for v in inputs {
                    let c = self.shape(*v)[1];
                    if self.wants(*v) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let start = (b * total + offset) * hw;
                            d.extend_from_slice(&up.data()[start..start + c * hw]);
                        }
                        let t = like(*v, d)?;
                        self.accumulate(grads, *v, t);
                    }
                    offset += c;
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d, o) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(
                        n,
                        o,
                        d,
                        T::one(),
                        up.data(),
                        (o as isize, 1),
                        w.data(),
                        (d as isize, 1),
                        T::zero(),
                        &mut dx,
                        (d as isize, 1),
                    );
                    let t = like(*input, dx)?;
                    self.accumulate(grads, *input, t);
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); o * d];
                    T::gemm(
                        o,
                        n,
                        d,
                        T::one(),
                        up.data(),
                        (1, o as isize),
                        x.data(),
                        (d as isize, 1),
                        T::zero(),
                        &mut dw,
                        (d as isize, 1),
                    );
                    let t = like(*weight, dw)?;
                    self.accumulate(grads, *weight, t);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); o];
                        for row in up.data().chunks(o) {
                            for (acc, g) in db.iter_mut().zip(row) {
                                *acc = *acc + *g;
                            }
                        }
                        let t = like(*b, db)?;
                        self.accumulate(grads, *b, t);
                    }
                }
            }
            Op::Reshape(x) => {
                let t = like(*x, up.data().to_vec())?;
                self.accumulate(grads, *x, t);
            }
            Op::NarrowCols { input, start } => {
                let d = self.shape(*input)[1];
                let len = node.value.shape()[1];
                let mut full = vec![T::zero(); self.value(*input).numel()];
                for (dst, src) in full.chunks_mut(d).zip(up.data().chunks(len)) {
                    dst[*start..*start + len].copy_from_slice(src);
                }
                let t = like(*input, full)?;
                self.accumulate(grads, *input, t);
            }
            Op::Sum(x) => {
                let g = up.item();
                let t = Tensor::full(self.shape(*x).to_vec(), g);
                self.accumulate(grads, *x, t);
            }
            Op::Mean(x) => {
                let n = T::c(self.value(*x).numel() as f64);
                let t = Tensor::full(self.shape(*x).to_vec(), up.item() / n);
                self.accumulate(grads, *x, t);
            }
            Op::Mse {
                pred,
                target,
                mask,
                denom,
            } => {
                if *denom > T::zero() {
                    let k = up.item() * T::c(2.0) / *denom;
                    let p = self.value(*pred).data();
                    let d = match mask {
                        Some(m) => p
                            .iter()
                            .zip(target.data())
                            .zip(m.data())
                            .map(|((p, t), m)| k * *m * (*p - *t))
                            .collect(),
                        None => p.iter().zip(target.data()).map(|(p, t)| k * (*p - *t)).collect(),
                    };
                    let t = like(*pred, d)?;
                    self.accumulate(grads, *pred, t);
                }
            }
            Op::Bce {
                logits,
                labels,
                mask,
                denom,
            } => {
                if *denom > T::zero() {
                    let k = up.item() / *denom;
                    let x = self.value(*logits).data();
                    let d = match mask {
                        Some(m) => x
                            .iter()
                            .zip(labels.data())
                            .zip(m.data())
                            .map(|((x, y), m)| k * *m * (sigmoid(*x) - *y))
                            .collect(),
                        None => x
                            .iter()
                            .zip(labels.data())
                            .map(|(x, y)| k * (sigmoid(*x) - *y))
                            .collect(),
                    };
                    let t = like(*logits, d)?;
                    self.accumulate(grads, *logits, t);
                }
            }
        }
        Ok(())
    }

    fn conv2d_backward(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
        up: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let x = self.value(input);
        let k = self.value(kernel);
        let geom = ConvGeom::new(x.shape(), k.shape(), spec)?;
        let (ckk, opix, f) = (geom.ckk(), geom.out_pix(), geom.f);
        if let Some(b) = bias {
            if self.wants(b) {
                let mut db = vec![T::zero(); f];
                for (i, plane) in up.data().chunks(opix).enumerate() {
                    db[i % f] = db[i % f] + plane.iter().copied().sum::<T>();
                }
                self.accumulate(grads, b, Tensor::new([f], db)?);
            }
        }
        if self.wants(kernel) {
            let mut dk = vec![T::zero(); f * ckk];
            let mut cols = Vec::new();
            for n in 0..geom.n {
                let col = geom.columns(x.data(), n, &mut cols);
                let g = &up.data()[n * f * opix..(n + 1) * f * opix];
                T::gemm(
                    f,
                    opix,
                    ckk,
                    T::one(),
                    g,
                    (opix as isize, 1),
                    col,
                    (1, opix as isize),
                    T::one(),
                    &mut dk,
                    (ckk as isize, 1),
                );
            }
            self.accumulate(grads, kernel, Tensor::new(k.shape().to_vec(), dk)?);
        }
        if self.wants(input) {
            let mut dx = vec![T::zero(); x.numel()];
            let mut dcols = vec![T::zero(); ckk * opix];
            let in_img = geom.c * geom.h * geom.w;
            for n in 0..geom.n {
                let g = &up.data()[n * f * opix..(n + 1) * f * opix];
                T::gemm(
                    ckk,
                    f,
                    opix,
                    T::one(),
                    k.data(),
                    (1, ckk as isize),
                    g,
                    (opix as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (opix as isize, 1),
                );
                geom.scatter_columns(&dcols, &mut dx[n * in_img..(n + 1) * in_img]);
            }
            self.accumulate(grads, input, Tensor::new(x.shape().to_vec(), dx)?);
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Index bookkeeping for one convolution.
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: Conv2dSpec,
}

impl ConvGeom {
    fn new(x: &[usize], k: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (f, kh, kw) = (k[0], k[2], k[3]);
        let (hp, wp) = (h + 2 * spec.pad, w + 2 * spec.pad);
        if hp < kh || wp < kw {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input"),
            ));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh: (hp - kh) / spec.stride + 1,
            ow: (wp - kw) / spec.stride + 1,
            spec,
        })
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pix(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.pad == 0
    }

    /// `[C·kh·kw, oh·ow]` patch matrix of image `n`; borrows the input directly for 1×1 convolutions.
    fn columns<'a, T: Scalar>(&self, x: &'a [T], n: usize, buf: &'a mut Vec<T>) -> &'a [T] {
        let img = self.c * self.h * self.w;
        let src = &x[n * img..(n + 1) * img];
        if self.is_pointwise() {
            return src;
        }
        let opix = self.out_pix();
        buf.clear();
        buf.resize(self.ckk() * opix, T::zero());
        let (s, p) = (self.spec.stride as isize, self.spec.pad as isize);
        for c in 0..self.c {
            let plane = &src[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * opix;
                    let dst = &mut buf[row..row + opix];
                    for oy in 0..self.oh {
                        let iy = oy as isize * s + i as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = ox as isize * s + j as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * self.ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        buf
    }

    /// Adjoint of [`ConvGeom::columns`]: accumulates a patch-matrix gradient into one image.
    fn scatter_columns<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        if self.is_pointwise() {
            for (d, g) in dx.iter_mut().zip(cols) {
                *d = *d + *g;
            }
            return;
        }
        let opix = self.out_pix();
        let (s, p) = (self.spec.stride as isize, self.spec.pad as isize);
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * opix;
                    let src = &cols[row..row + opix];
                    for oy in 0..self.oh {
                        let iy = oy as isize * s + i as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = ox as isize * s + j as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                let at = iy as usize * self.w + ix as usize;
                                plane[at] = plane[at] + src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient at node `v`, or `None` if nothing flowed into it.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter of `store`, zero-filled for parameters the loss does not reach.
    pub fn dense(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).shape().to_vec()))
            .collect();
        for (id, v) in &self.params {
            if let (Some(slot), Some(g)) = (out.get_mut(id.0), self.of(*v)) {
                *slot = g.clone();
            }
        }
        out
    }

    /// Gradient of parameter `id`, `None` if the loss does not reach it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.of(*v))
    }
}
