use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::kernels::{conv2d_backward, conv2d_raw, gemm_nt_acc, gemm_tn_acc, ConvGeom};
use super::{c, ParamSet, Real, Tensor};
use crate::error::TensorError;

/// Backward rule for an op defined outside the tensor core.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Gradient for each input given the forward inputs, the forward output
    /// and the upstream gradient. `None` marks an input that receives no
    /// gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    ChannelBias(usize, usize),
    Conv2d {
        input: usize,
        kernel: usize,
        geom: ConvGeom,
    },
    Elu(usize),
    Relu(usize),
    Tanh(usize),
    Upsample2x(usize),
    AvgPool2x(usize),
    GlobalAvgPool(usize),
    Custom {
        inputs: Vec<usize>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    tracked: bool,
}

/// Recording of one forward pass. Create one per step and drop it after
/// the backward pass.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    bindings: RefCell<Vec<(usize, String)>>,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

/// Result of a backward pass: one optional gradient per graph node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            bindings: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// A tracked leaf whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A tracked leaf bound to a named parameter; [`Graph::backward_into`]
    /// accumulates its gradient into the parameter set.
    pub fn param(&self, params: &ParamSet<T>, name: &str) -> Result<Var<'_, T>, TensorError> {
        let p = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let v = self.leaf(p.value.clone());
        self.bindings.borrow_mut().push((v.id, name.to_string()));
        Ok(v)
    }

    /// Like [`Graph::param`] but untracked: the parameter acts as a constant.
    pub fn frozen_param(
        &self,
        params: &ParamSet<T>,
        name: &str,
    ) -> Result<Var<'_, T>, TensorError> {
        let p = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        Ok(self.input(p.value.clone()))
    }

    /// Append a node computed outside the core, with its own backward rule.
    pub fn custom<'g>(
        &'g self,
        inputs: &[Var<'g, T>],
        value: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Var<'g, T> {
        let tracked = inputs.iter().any(|v| self.tracked(v.id));
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(value, Op::Custom { inputs: ids, op }, tracked)
    }

    /// Reverse pass from a scalar loss. Gradients of tracked leaves are
    /// available from the returned [`Gradients`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, TensorError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.tracked {
            return Err(TensorError::Untracked);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, gi) in propagate(&nodes, node, &g) {
                if !nodes[input].tracked {
                    continue;
                }
                match grads[input].as_mut() {
                    Some(acc) => acc.add_assign(&gi),
                    None => grads[input] = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// [`Graph::backward`], then add each bound parameter's gradient into
    /// `params`. Repeated calls accumulate until the grads are zeroed.
    pub fn backward_into(
        &self,
        loss: Var<'_, T>,
        params: &mut ParamSet<T>,
    ) -> Result<Gradients<T>, TensorError> {
        let grads = self.backward(loss)?;
        for (id, name) in self.bindings.borrow().iter() {
            if let Some(g) = grads.grads[*id].as_ref() {
                if let Some(p) = params.get_mut(name) {
                    p.accumulate_grad(g);
                }
            }
        }
        Ok(grads)
    }
}

fn propagate<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
    let val = |id: usize| -> &Tensor<T> { &nodes[id].value };
    let want = |id: usize| nodes[id].tracked;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            vec![(*a, zip_map(g, vb, |x, y| x * y)), (*b, zip_map(g, va, |x, y| x * y))]
        }
        Op::Scale(a, s) => {
            let s = *s;
            vec![(*a, g.map(|v| v * s))]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Square(a) => {
            let two = c::<T>(2.0);
            vec![(*a, zip_map(g, val(*a), |x, y| two * x * y))]
        }
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let va = val(*a);
            let n = c::<T>(va.len() as f64);
            vec![(*a, Tensor::full(va.shape(), g.item() / n))]
        }
        Op::Reshape(a) => vec![(
            *a,
            Tensor {
                shape: val(*a).shape().to_vec(),
                data: g.data().to_vec(),
            },
        )],
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let mut out = Vec::new();
            if want(*a) {
                let mut da = vec![T::zero(); m * k];
                gemm_nt_acc(g.data(), vb.data(), &mut da, m, k, n);
                out.push((*a, Tensor::new(va.shape(), da).unwrap()));
            }
            if want(*b) {
                let mut db = vec![T::zero(); k * n];
                gemm_tn_acc(va.data(), g.data(), &mut db, m, k, n);
                out.push((*b, Tensor::new(vb.shape(), db).unwrap()));
            }
            out
        }
        Op::AddBias(a, b) => {
            let m = val(*b).len();
            let mut db = vec![T::zero(); m];
            for row in g.data().chunks(m) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
            vec![(*a, g.clone()), (*b, Tensor::new(&[m], db).unwrap())]
        }
        Op::ChannelBias(a, b) => {
            let s = g.shape();
            let (n, ch, hw) = (s[0], s[1], s[2] * s[3]);
            let mut db = vec![T::zero(); ch];
            for i in 0..n {
                for (cidx, d) in db.iter_mut().enumerate() {
                    let off = (i * ch + cidx) * hw;
                    *d = *d + g.data()[off..off + hw].iter().copied().sum::<T>();
                }
            }
            vec![(*a, g.clone()), (*b, Tensor::new(&[ch], db).unwrap())]
        }
        Op::Conv2d {
            input,
            kernel,
            geom,
        } => {
            let (vx, vk) = (val(*input), val(*kernel));
            let (dx, dk) =
                conv2d_backward(geom, vx.data(), vk.data(), g.data(), want(*input), want(*kernel));
            let mut out = Vec::new();
            if let Some(dx) = dx {
                out.push((*input, Tensor::new(vx.shape(), dx).unwrap()));
            }
            if let Some(dk) = dk {
                out.push((*kernel, Tensor::new(vk.shape(), dk).unwrap()));
            }
            out
        }
        Op::Elu(a) => {
            let (x, y) = (val(*a), &node.value);
            let one = T::one();
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(y.data()))
                .map(|(&gv, (&xv, &yv))| if xv > T::zero() { gv } else { gv * (yv + one) })
                .collect();
            vec![(*a, Tensor::new(x.shape(), data).unwrap())]
        }
        Op::Relu(a) => {
            let x = val(*a);
            vec![(*a, zip_map(g, x, |gv, xv| if xv > T::zero() { gv } else { T::zero() }))]
        }
        Op::Tanh(a) => {
            let one = T::one();
            vec![(*a, zip_map(g, &node.value, |gv, yv| gv * (one - yv * yv)))]
        }
        Op::Upsample2x(a) => {
            let x = val(*a);
            let s = x.shape();
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let mut dx = vec![T::zero(); x.len()];
            let gd = g.data();
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        let base = p * 4 * h * w;
                        let (r0, r1) = (2 * y * 2 * w, (2 * y + 1) * 2 * w);
                        let sum = gd[base + r0 + 2 * xx]
                            + gd[base + r0 + 2 * xx + 1]
                            + gd[base + r1 + 2 * xx]
                            + gd[base + r1 + 2 * xx + 1];
                        dx[(p * h + y) * w + xx] = sum;
                    }
                }
            }
            vec![(*a, Tensor::new(s, dx).unwrap())]
        }
        Op::AvgPool2x(a) => {
            let x = val(*a);
            let s = x.shape();
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h / 2, w / 2);
            let quarter = c::<T>(0.25);
            let mut dx = vec![T::zero(); x.len()];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        dx[(p * h + y) * w + xx] = g.data()[(p * oh + y / 2) * ow + xx / 2] * quarter;
                    }
                }
            }
            vec![(*a, Tensor::new(s, dx).unwrap())]
        }
        Op::GlobalAvgPool(a) => {
            let x = val(*a);
            let s = x.shape();
            let hw = s[2] * s[3];
            let inv = T::one() / c::<T>(hw as f64);
            let mut dx = Vec::with_capacity(x.len());
            for &gv in g.data() {
                dx.extend(std::iter::repeat_n(gv * inv, hw));
            }
            vec![(*a, Tensor::new(s, dx).unwrap())]
        }
        Op::Custom { inputs, op } => {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| val(i)).collect();
            let gs = op.backward(&ins, &node.value, g);
            inputs
                .iter()
                .zip(gs)
                .filter_map(|(&i, gi)| gi.map(|t| (i, t)))
                .collect()
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor {
        shape: a.shape().to_vec(),
        data: a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<(), TensorError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::shape(op, format!("{:?}", a.shape()), b.shape()))
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    /// Borrow of the node value; do not hold across graph mutations.
    pub fn value_ref(&self) -> Ref<'_, Tensor<T>> {
        Ref::map(self.graph.nodes.borrow(), |n| &*n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.graph.tracked(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.input((*self.value()).clone())
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        self.graph.push(value, op, self.is_tracked())
    }

    fn binary(&self, other: &Var<'g, T>, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        let tracked = self.is_tracked() || other.is_tracked();
        self.graph.push(value, op, tracked)
    }

    fn elementwise(
        &self,
        other: &Var<'g, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'g, T>, TensorError> {
        let (a, b) = (self.value(), other.value());
        same_shape(name, &a, &b)?;
        Ok(self.binary(other, zip_map(&a, &b, f), op))
    }

    pub fn add(&self, other: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, s: T) -> Var<'g, T> {
        let v = self.value().map(|x| x * s);
        self.unary(v, Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: T) -> Var<'g, T> {
        let v = self.value().map(|x| x + s);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn square(&self) -> Var<'g, T> {
        let v = self.value().map(|x| x * x);
        self.unary(v, Op::Square(self.id))
    }

    pub fn sum(&self) -> Var<'g, T> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g, T> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / c::<T>(x.len() as f64));
        self.unary(v, Op::Mean(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>, TensorError> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// `[N,D] x [D,M] -> [N,M]`.
    pub fn matmul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        let v = super::kernels::matmul_forward(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    /// `[N,M] + [M]`, the bias broadcast over rows.
    pub fn add_bias(&self, bias: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        let (x, b) = (self.value(), bias.value());
        let m = match x.shape() {
            &[_, m] => m,
            s => return Err(TensorError::shape("add_bias", "[N,M]", s)),
        };
        if b.shape() != [m] {
            return Err(TensorError::shape("add_bias", format!("[{m}]"), b.shape()));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        let v = Tensor::new(x.shape(), data)?;
        Ok(self.binary(bias, v, Op::AddBias(self.id, bias.id)))
    }

    /// `[N,C,H,W] + [C]`, one bias per channel.
    pub fn channel_bias(&self, bias: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        let (x, b) = (self.value(), bias.value());
        let (ch, hw) = match x.shape() {
            &[_, ch, h, w] => (ch, h * w),
            s => return Err(TensorError::shape("channel_bias", "[N,C,H,W]", s)),
        };
        if b.shape() != [ch] {
            return Err(TensorError::shape("channel_bias", format!("[{ch}]"), b.shape()));
        }
        let mut data = x.data().to_vec();
        for (i, plane) in data.chunks_mut(hw).enumerate() {
            let bv = b.data()[i % ch];
            plane.iter_mut().for_each(|v| *v = *v + bv);
        }
        let v = Tensor::new(x.shape(), data)?;
        Ok(self.binary(bias, v, Op::ChannelBias(self.id, bias.id)))
    }

    /// 2-D cross-correlation of `[N,C,H,W]` with `[F,C,kH,kW]`.
    pub fn conv2d(
        &self,
        kernel: &Var<'g, T>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>, TensorError> {
        let (x, k) = (self.value(), kernel.value());
        let geom = ConvGeom::new(x.shape(), k.shape(), stride, padding)?;
        let v = conv2d_raw(&geom, x.data(), k.data());
        Ok(self.binary(
            kernel,
            v,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                geom,
            },
        ))
    }

    /// Exponential linear unit with alpha = 1.
    pub fn elu(&self) -> Var<'g, T> {
        let v = self
            .value()
            .map(|x| if x > T::zero() { x } else { x.exp_m1() });
        self.unary(v, Op::Elu(self.id))
    }

    pub fn relu(&self) -> Var<'g, T> {
        let v = self.value().map(|x| if x > T::zero() { x } else { T::zero() });
        self.unary(v, Op::Relu(self.id))
    }

    pub fn tanh(&self) -> Var<'g, T> {
        let v = self.value().map(|x| x.tanh());
        self.unary(v, Op::Tanh(self.id))
    }

    /// Nearest-neighbour 2x upsampling of `[N,C,H,W]`.
    pub fn upsample2x(&self) -> Result<Var<'g, T>, TensorError> {
        let x = self.value();
        let &[n, ch, h, w] = x.shape() else {
            return Err(TensorError::shape("upsample2x", "[N,C,H,W]", x.shape()));
        };
        let mut data = Vec::with_capacity(x.len() * 4);
        for plane in x.data().chunks(h * w) {
            for row in plane.chunks(w) {
                for _ in 0..2 {
                    for &v in row {
                        data.push(v);
                        data.push(v);
                    }
                }
            }
        }
        let v = Tensor::new(&[n, ch, 2 * h, 2 * w], data)?;
        Ok(self.unary(v, Op::Upsample2x(self.id)))
    }

    /// 2x2 mean pooling of `[N,C,H,W]`; H and W must be even.
    pub fn avgpool2x(&self) -> Result<Var<'g, T>, TensorError> {
        let x = self.value();
        let &[n, ch, h, w] = x.shape() else {
            return Err(TensorError::shape("avgpool2x", "[N,C,H,W]", x.shape()));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::shape("avgpool2x", "even H and W", x.shape()));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = c::<T>(0.25);
        let mut data = Vec::with_capacity(x.len() / 4);
        for plane in x.data().chunks(h * w) {
            for y in 0..oh {
                for xx in 0..ow {
                    let (r0, r1) = (2 * y * w, (2 * y + 1) * w);
                    let s = plane[r0 + 2 * xx]
                        + plane[r0 + 2 * xx + 1]
                        + plane[r1 + 2 * xx]
                        + plane[r1 + 2 * xx + 1];
                    data.push(s * quarter);
                }
            }
        }
        let v = Tensor::new(&[n, ch, oh, ow], data)?;
        Ok(self.unary(v, Op::AvgPool2x(self.id)))
    }

    /// Mean over the spatial axes, `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&self) -> Result<Var<'g, T>, TensorError> {
        let x = self.value();
        let &[n, ch, h, w] = x.shape() else {
            return Err(TensorError::shape("global_avg_pool", "[N,C,H,W]", x.shape()));
        };
        let inv = T::one() / c::<T>((h * w) as f64);
        let data = x
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let v = Tensor::new(&[n, ch], data)?;
        Ok(self.unary(v, Op::GlobalAvgPool(self.id)))
    }

    /// `x W + b` for `x: [N,D]`, `W: [D,M]`, `b: [M]`.
    pub fn fully_connected(
        &self,
        weight: &Var<'g, T>,
        bias: &Var<'g, T>,
    ) -> Result<Var<'g, T>, TensorError> {
        self.matmul(weight)?.add_bias(bias)
    }
}
