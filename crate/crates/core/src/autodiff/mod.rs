//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only arena of nodes. Every op pushes one node whose
//! parents all have smaller indices, so the arena order is a topological order
//! and [`Graph::backward`] simply walks it in reverse. Graphs are built fresh
//! for every batch and dropped afterwards.

mod conv;

pub use conv::ConvGeom;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a node's value was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, weight: Var, bias: Var },
    Conv2d { x: Var, weight: Var, bias: Var, geom: ConvGeom },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Mse { a: Var, b: Var },
    Sum { x: Var },
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
    Binarize { latent: Var },
}

impl<T> Op<T> {
    pub fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Mse { a, b } => vec![*a, *b],
            Op::Linear { x, weight, bias } | Op::Conv2d { x, weight, bias, .. } => vec![*x, *weight, *bias],
            Op::Scale { x, .. }
            | Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::Sum { x }
            | Op::Reshape { x } => vec![*x],
            Op::Binarize { latent } => vec![*latent],
            Op::Concat { parts } => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter or probe variable).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A detached input; no gradient is ever computed for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Every node handle, in creation order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn op(&self, v: Var) -> &Op<T> {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// True if `target` is an ancestor of (or equal to) `from`.
    pub fn depends_on(&self, from: Var, target: Var) -> bool {
        let mut seen = vec![false; from.0 + 1];
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == target {
                return true;
            }
            if v.0 < target.0 || seen[v.0] {
                continue;
            }
            seen[v.0] = true;
            stack.extend(self.nodes[v.0].op.parents());
        }
        false
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            T::zero(),
            &mut out,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }))
    }

    /// Fully connected map `x [B, in] -> x W^T + b`, with `W` stored `[out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(weight), self.shape(bias));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::dim("linear", sx, sw));
        }
        if sb != [sw[0]] {
            return Err(Error::dim("linear bias", sb, &sw[..1]));
        }
        let (batch, inputs, outputs) = (sx[0], sx[1], sw[0]);
        let mut out = Vec::with_capacity(batch * outputs);
        for _ in 0..batch {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(
            MatRef::new(self.value(x).data(), batch, inputs),
            MatRef::new(self.value(weight).data(), outputs, inputs).t(),
            T::one(),
            &mut out,
        );
        Ok(self.push(Tensor::new(vec![batch, outputs], out)?, Op::Linear { x, weight, bias }))
    }

    /// Same-padded stride-1 cross-correlation. `x` is `[N, C_in, H, W]` or
    /// `[C_in, H, W]`; `weight` is `[C_out, C_in, kh, kw]`; `bias` is `[C_out]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(weight), self.shape(bias));
        if sw.len() != 4 {
            return Err(Error::dim("conv2d weight", sw, &[0, 0, 0, 0]));
        }
        let (c_out, c_in, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config("kernel", format!("kernel {kh}x{kw} must have odd extents for same padding")));
        }
        let (batch, dims) = match sx.len() {
            3 => (1, &sx[..]),
            4 => (sx[0], &sx[1..]),
            _ => return Err(Error::dim("conv2d input", &sx, sw)),
        };
        if dims[0] != c_in {
            return Err(Error::dim("conv2d channels", &sx, sw));
        }
        if sb != [c_out] {
            return Err(Error::dim("conv2d bias", sb, &[c_out]));
        }
        let geom = ConvGeom { batch, c_in, c_out, height: dims[1], width: dims[2], kh, kw };
        let mut out = vec![T::zero(); batch * c_out * geom.height * geom.width];
        conv::conv2d_forward(&geom, self.value(x).data(), self.value(weight).data(), self.value(bias).data(), &mut out);
        let shape = if sx.len() == 3 {
            vec![c_out, geom.height, geom.width]
        } else {
            vec![batch, c_out, geom.height, geom.width]
        };
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { x, weight, bias, geom }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(stable_sigmoid);
        self.push(out, Op::Sigmoid { x })
    }

    /// Mean of squared differences, as a `[1]` tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mse", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let total: T = va.iter().zip(vb).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let out = Tensor::scalar(total / T::from_f64(va.len() as f64));
        Ok(self.push(out, Op::Mse { a, b }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x })
    }

    /// Concatenates along axis 1 (channels); all other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if base.len() < 2 {
            return Err(Error::dim("concat", &base, &[]));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::dim("concat", &base, s));
            }
            channels += s[1];
        }
        let outer = base[0];
        let inner: usize = base[2..].iter().product();
        let mut out = Vec::with_capacity(outer * channels * inner);
        for o in 0..outer {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[o * c * inner..(o + 1) * c * inner]);
            }
        }
        let mut shape = base;
        shape[1] = channels;
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// `s * sign(latent)` with `s = mean(|latent|)` and `sign(0) = +1`.
    /// Gradients pass straight through, masked where `|latent| > 1`.
    pub fn binarize(&mut self, latent: Var) -> Result<Var> {
        let out = binarize_forward(self.value(latent))?;
        Ok(self.push(out, Op::Binarize { latent }))
    }

    /// Reverse pass from a scalar loss with unit seed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        self.backward_with(loss, Tensor::scalar(T::one()))
    }

    /// Reverse pass from an arbitrary node with an explicit upstream gradient.
    pub fn backward_with(&mut self, root: Var, seed: Tensor<T>) -> Result<()> {
        if seed.shape() != self.shape(root) {
            return Err(Error::dim("backward seed", seed.shape(), self.shape(root)));
        }
        accumulate(&mut self.nodes[root.0].grad, seed);
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = node.grad.as_ref() else { continue };
            let contributions = local_grads(before, &node.op, &node.value, upstream);
            for (parent, g) in contributions {
                accumulate(&mut before[parent.0].grad, g);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub(crate) fn stable_sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn binarize_forward<T: Scalar>(latent: &Tensor<T>) -> Result<Tensor<T>> {
    if latent.is_empty() {
        return Err(Error::Usage("binarize of an empty tensor".into()));
    }
    let s = latent.data().iter().map(|x| x.abs()).sum::<T>() / T::from_f64(latent.len() as f64);
    Ok(latent.map(|x| if x >= T::zero() { s } else { -s }))
}

/// Straight-through gradient of [`binarize_forward`]: identity where
/// `|latent| <= 1`, zero elsewhere; the scale is treated as a constant.
pub fn binarize_backward<T: Scalar>(upstream: &Tensor<T>, latent: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.shape() != latent.shape() {
        return Err(Error::dim("binarize backward", upstream.shape(), latent.shape()));
    }
    let data = upstream
        .data()
        .iter()
        .zip(latent.data())
        .map(|(&g, &w)| if w.abs() > T::one() { T::zero() } else { g })
        .collect();
    Tensor::new(upstream.shape().to_vec(), data)
}

/// Gradient contributions of one node to each parent that requires them.
fn local_grads<T: Scalar>(
    nodes: &[Node<T>],
    op: &Op<T>,
    value: &Tensor<T>,
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let wants = |v: &Var| nodes[v.0].requires_grad;
    let val = |v: &Var| &nodes[v.0].value;
    let mut out = Vec::new();
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (sa, sb) = (val(a).shape(), val(b).shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            if wants(a) {
                let mut da = vec![T::zero(); m * k];
                gemm(MatRef::new(g.data(), m, n), MatRef::new(val(b).data(), k, n).t(), T::zero(), &mut da);
                out.push((*a, Tensor::new(sa.to_vec(), da).expect("matmul grad shape")));
            }
            if wants(b) {
                let mut db = vec![T::zero(); k * n];
                gemm(MatRef::new(val(a).data(), m, k).t(), MatRef::new(g.data(), m, n), T::zero(), &mut db);
                out.push((*b, Tensor::new(sb.to_vec(), db).expect("matmul grad shape")));
            }
        }
        Op::Linear { x, weight, bias } => {
            let (batch, inputs) = (val(x).shape()[0], val(x).shape()[1]);
            let outputs = val(weight).shape()[0];
            let gm = MatRef::new(g.data(), batch, outputs);
            if wants(x) {
                let mut dx = vec![T::zero(); batch * inputs];
                gemm(gm, MatRef::new(val(weight).data(), outputs, inputs), T::zero(), &mut dx);
                out.push((*x, Tensor::new(vec![batch, inputs], dx).expect("linear grad shape")));
            }
            if wants(weight) {
                let mut dw = vec![T::zero(); outputs * inputs];
                gemm(gm.t(), MatRef::new(val(x).data(), batch, inputs), T::zero(), &mut dw);
                out.push((*weight, Tensor::new(vec![outputs, inputs], dw).expect("linear grad shape")));
            }
            if wants(bias) {
                let mut db = vec![T::zero(); outputs];
                for row in g.data().chunks(outputs) {
                    for (d, &r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
                out.push((*bias, Tensor::from_vec(db)));
            }
        }
        Op::Conv2d { x, weight, bias, geom } => {
            let mut dx = wants(x).then(|| vec![T::zero(); val(x).len()]);
            let mut dw = wants(weight).then(|| vec![T::zero(); val(weight).len()]);
            let mut db = wants(bias).then(|| vec![T::zero(); val(bias).len()]);
            conv::conv2d_backward(
                geom,
                val(x).data(),
                val(weight).data(),
                g.data(),
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (v, d) in [(x, dx), (weight, dw), (bias, db)] {
                if let Some(d) = d {
                    out.push((*v, Tensor::new(val(v).shape().to_vec(), d).expect("conv grad shape")));
                }
            }
        }
        Op::Add { a, b } => {
            if wants(a) {
                out.push((*a, g.clone()));
            }
            if wants(b) {
                out.push((*b, g.clone()));
            }
        }
        Op::Scale { x, factor } => {
            if wants(x) {
                out.push((*x, g.map(|v| v * *factor)));
            }
        }
        Op::LeakyRelu { x, slope } => {
            if wants(x) {
                let data = g
                    .data()
                    .iter()
                    .zip(val(x).data())
                    .map(|(&gi, &xi)| if xi >= T::zero() { gi } else { gi * *slope })
                    .collect();
                out.push((*x, Tensor::new(g.shape().to_vec(), data).expect("shape")));
            }
        }
        Op::Sigmoid { x } => {
            if wants(x) {
                let data =
                    g.data().iter().zip(value.data()).map(|(&gi, &y)| gi * y * (T::one() - y)).collect();
                out.push((*x, Tensor::new(g.shape().to_vec(), data).expect("shape")));
            }
        }
        Op::Mse { a, b } => {
            let n = T::from_f64(val(a).len() as f64);
            let coef = g.item() * (T::one() + T::one()) / n;
            let diff: Vec<T> = val(a).data().iter().zip(val(b).data()).map(|(&p, &q)| coef * (p - q)).collect();
            if wants(b) {
                let neg = diff.iter().map(|&d| -d).collect();
                out.push((*b, Tensor::new(val(b).shape().to_vec(), neg).expect("shape")));
            }
            if wants(a) {
                out.push((*a, Tensor::new(val(a).shape().to_vec(), diff).expect("shape")));
            }
        }
        Op::Sum { x } => {
            if wants(x) {
                out.push((*x, Tensor::full(val(x).shape(), g.item())));
            }
        }
        Op::Concat { parts } => {
            let outer = g.shape()[0];
            let inner: usize = g.shape()[2..].iter().product();
            let total_c = g.shape()[1];
            let mut offset = 0;
            for p in parts {
                let c = val(p).shape()[1];
                if wants(p) {
                    let mut d = Vec::with_capacity(outer * c * inner);
                    for o in 0..outer {
                        let start = (o * total_c + offset) * inner;
                        d.extend_from_slice(&g.data()[start..start + c * inner]);
                    }
                    out.push((*p, Tensor::new(val(p).shape().to_vec(), d).expect("concat grad shape")));
                }
                offset += c;
            }
        }
        Op::Reshape { x } => {
            if wants(x) {
                out.push((*x, g.clone().reshape(val(x).shape()).expect("reshape grad")));
            }
        }
        Op::Binarize { latent } => {
            if wants(latent) {
                out.push((*latent, binarize_backward(g, val(latent)).expect("binarize grad shape")));
            }
        }
    }
    out
}
