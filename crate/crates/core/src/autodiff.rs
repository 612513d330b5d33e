//! Reverse-mode differentiation over a recording tape.
//!
//! Every operation appends a node holding its value and enough context to
//! apply its backward rule. Nodes only reference earlier nodes, so the tape
//! order is a topological order and [`Tape::backward`] is a single reverse
//! sweep with a fixed accumulation order.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kspace::{self, SincKernel};
use crate::ops::{self, Axis, ConvGeom};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale {
        x: Var,
        factor: f64,
    },
    Offset {
        x: Var,
    },
    Abs(Var),
    Powf {
        x: Var,
        exponent: f64,
    },
    ClampMin {
        x: Var,
        floor: f64,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    PixelUnshuffle {
        x: Var,
        r: usize,
    },
    FCrop {
        x: Var,
        factor: usize,
    },
    SincDown {
        x: Var,
        kernel: Arc<SincKernel>,
    },
    Blur {
        x: Var,
        kernel: Arc<[f64]>,
    },
    AvgPool2(Var),
    MeanPerItem(Var),
    MeanAll(Var),
    SumAll(Var),
    Concat(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        debug_assert_eq!(t.numel(), 1);
        t.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records `value` as a constant copy of `v`, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let geom = ConvGeom::conv2d(self.value(x), self.value(w), self.value(b))?;
        self.conv(x, w, b, geom)
    }

    pub fn conv1d_axis(&mut self, x: Var, w: Var, b: Var, axis: Axis) -> Result<Var> {
        let geom = ConvGeom::conv1d(self.value(x), self.value(w), self.value(b), axis)?;
        self.conv(x, w, b, geom)
    }

    fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let y = ops::conv_forward(
            self.value(x),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        Ok(self.push(y, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let y = ops::leaky_relu(self.value(x), slope)?;
        Ok(self.push(y, Op::LeakyRelu { x, slope }, &[x]))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |p, q| p - q)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |p, q| p * q)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |p, q| p / q)?;
        Ok(self.push(y, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let s = T::from_f64(factor);
        let y = self.value(x).map(|v| v * s);
        self.push(y, Op::Scale { x, factor }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::Offset { x }, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.abs());
        self.push(y, Op::Abs(x), &[x])
    }

    pub fn powf(&mut self, x: Var, exponent: f64) -> Var {
        let e = T::from_f64(exponent);
        let y = self.value(x).map(|v| v.powf(e));
        self.push(y, Op::Powf { x, exponent }, &[x])
    }

    /// `max(x, floor)` elementwise; the gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let f = T::from_f64(floor);
        let y = self.value(x).map(|v| if v > f { v } else { f });
        self.push(y, Op::ClampMin { x, floor }, &[x])
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(y, Op::PixelShuffle { x, r }, &[x]))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_unshuffle(self.value(x), r)?;
        Ok(self.push(y, Op::PixelUnshuffle { x, r }, &[x]))
    }

    /// Differentiable [`kspace::f_crop`].
    pub fn f_crop(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = kspace::f_crop(self.value(x), factor)?;
        Ok(self.push(y, Op::FCrop { x, factor }, &[x]))
    }

    /// Differentiable [`kspace::sinc_downsample`].
    pub fn sinc_downsample(&mut self, x: Var, kernel: &Arc<SincKernel>) -> Result<Var> {
        let y = kspace::sinc_downsample(self.value(x), kernel)?;
        let kernel = Arc::clone(kernel);
        Ok(self.push(y, Op::SincDown { x, kernel }, &[x]))
    }

    /// Separable "valid" filtering of every plane with `kernel` on both axes.
    pub fn blur_valid(&mut self, x: Var, kernel: &Arc<[f64]>) -> Result<Var> {
        let k: Vec<T> = kernel.iter().map(|&v| T::from_f64(v)).collect();
        let y = ops::blur_valid(self.value(x), &k)?;
        let kernel = Arc::clone(kernel);
        Ok(self.push(y, Op::Blur { x, kernel }, &[x]))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let y = ops::avg_pool2(self.value(x))?;
        Ok(self.push(y, Op::AvgPool2(x), &[x]))
    }

    /// Mean over all but the leading axis: `[B, ...] -> [B]`.
    pub fn mean_per_item(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let b = *t
            .shape()
            .first()
            .ok_or_else(|| Error::shape("mean_per_item on rank-0 tensor"))?;
        let n = T::from_f64((t.numel() / b) as f64);
        let means: Vec<T> = t
            .data()
            .chunks_exact(t.numel() / b)
            .map(|c| c.iter().copied().sum::<T>() / n)
            .collect();
        let y = Tensor::new(&[b], means)?;
        Ok(self.push(y, Op::MeanPerItem(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        self.push(y, Op::MeanAll(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::SumAll(x), &[x])
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = Tensor::concat(&vals)?;
        Ok(self.push(y, Op::Concat(xs.to_vec()), xs))
    }

    /// Reverse sweep from a single-element root.
    ///
    /// Returns gradients for every node that requires one and lies on a path
    /// to `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::full(root_val.shape(), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        // only report gradients of nodes that asked for them
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor<T>| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Conv { x, w, b, geom } => {
                let cg = ops::conv_backward(
                    self.value(x),
                    self.value(w).data(),
                    g,
                    &geom,
                    self.wants(x),
                );
                if self.wants(w) {
                    acc(w, Tensor::new(self.value(w).shape(), cg.dw)?)?;
                }
                if self.wants(b) {
                    acc(b, Tensor::new(self.value(b).shape(), cg.db)?)?;
                }
                if let Some(dx) = cg.dx {
                    acc(x, dx)?;
                }
            }
            &Op::LeakyRelu { x, slope } => {
                let s = T::from_f64(slope);
                let d = self
                    .value(x)
                    .zip_map(g, |v, gv| if v >= T::zero() { gv } else { gv * s })?;
                acc(x, d)?;
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    acc(a, g.clone())?;
                }
                if self.wants(b) {
                    acc(b, g.clone())?;
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    acc(a, g.clone())?;
                }
                if self.wants(b) {
                    acc(b, g.map(|v| -v))?;
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    acc(a, g.zip_map(self.value(b), |gv, bv| gv * bv)?)?;
                }
                if self.wants(b) {
                    acc(b, g.zip_map(self.value(a), |gv, av| gv * av)?)?;
                }
            }
            &Op::Div(a, b) => {
                let bv = self.value(b);
                if self.wants(a) {
                    acc(a, g.zip_map(bv, |gv, q| gv / q)?)?;
                }
                if self.wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let ratio = &node.value;
                    let d = g
                        .zip_map(ratio, |gv, r| gv * r)?
                        .zip_map(bv, |p, q| -p / q)?;
                    acc(b, d)?;
                }
            }
            &Op::Scale { x, factor } => {
                let s = T::from_f64(factor);
                acc(x, g.map(|v| v * s))?;
            }
            &Op::Offset { x } => acc(x, g.clone())?,
            &Op::Abs(x) => {
                let d = self.value(x).zip_map(g, |v, gv| {
                    if v > T::zero() {
                        gv
                    } else if v < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })?;
                acc(x, d)?;
            }
            &Op::Powf { x, exponent } => {
                let e = T::from_f64(exponent);
                let em1 = T::from_f64(exponent - 1.0);
                let d = self.value(x).zip_map(g, |v, gv| gv * e * v.powf(em1))?;
                acc(x, d)?;
            }
            &Op::ClampMin { x, floor } => {
                let f = T::from_f64(floor);
                let d = self
                    .value(x)
                    .zip_map(g, |v, gv| if v > f { gv } else { T::zero() })?;
                acc(x, d)?;
            }
            &Op::PixelShuffle { x, r } => acc(x, ops::pixel_unshuffle(g, r)?)?,
            &Op::PixelUnshuffle { x, r } => acc(x, ops::pixel_shuffle(g, r)?)?,
            &Op::FCrop { x, factor } => acc(x, kspace::f_crop_adjoint(g, factor)?)?,
            Op::SincDown { x, kernel } => acc(*x, kspace::sinc_downsample_adjoint(g, kernel)?)?,
            Op::Blur { x, kernel } => {
                let k: Vec<T> = kernel.iter().map(|&v| T::from_f64(v)).collect();
                acc(*x, ops::blur_valid_backward(g, &k, self.value(*x).shape()))?;
            }
            &Op::AvgPool2(x) => acc(x, ops::avg_pool2_backward(g, self.value(x).shape()))?,
            &Op::MeanPerItem(x) => {
                let xv = self.value(x);
                let b = g.numel();
                let per = xv.numel() / b;
                let inv = T::one() / T::from_f64(per as f64);
                let d: Vec<T> = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, per))
                    .collect();
                acc(x, Tensor::new(xv.shape(), d)?)?;
            }
            &Op::MeanAll(x) => {
                let xv = self.value(x);
                let v = g.data()[0] / T::from_f64(xv.numel() as f64);
                acc(x, Tensor::full(xv.shape(), v))?;
            }
            &Op::SumAll(x) => {
                acc(x, Tensor::full(self.value(x).shape(), g.data()[0]))?;
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let xv = self.value(x);
                    let n = xv.numel();
                    if self.wants(x) {
                        acc(x, Tensor::new(xv.shape(), g.data()[off..off + n].to_vec())?)?;
                    }
                    off += n;
                }
            }
        }
        Ok(())
    }
}
