//! Reverse-mode differentiation over a recorded list of tensor operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are read from
//! a borrowed [`ParamStore`] and enter the graph as leaves the first time they
//! are used; [`Graph::backward`] returns gradients for every node that
//! depends on a parameter or on an input created with
//! [`Graph::input_with_grad`].

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, GroupNormSaved};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<f64>>,
    },
    Relu(Var),
    Sigmoid(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        saved: GroupNormSaved,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBatch {
        x: Var,
        s: Var,
    },
    Concat(Vec<Var>),
    Resize(Var),
    GlobalAvgPool(Var),
    /// Scalar function of `x` whose gradient was computed alongside its value.
    Scalar {
        x: Var,
        grad: Tensor,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Graph::backward`].
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (y, cols) = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            geom,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Conv { x, w, b, geom, cols }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (y, saved) =
            kernels::group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            y,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                saved,
            },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!(
                "{what}: operand shapes differ, {} vs {}",
                va.shape(),
                vb.shape()
            )));
        }
        va.zip_map(vb, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let y = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(y, Op::Scale(x, k), rg)
    }

    /// Multiplies every element of batch entry `n` of `x` by `s[n]`, where `s`
    /// has shape `(batch, 1, 1, 1)`.
    pub fn scale_batch(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let xs = xv.shape();
        if sv.shape() != Shape::new(xs.n, 1, 1, 1) {
            return Err(Error::shape(format!(
                "per-sample scale of shape {} does not match batch of {xs}",
                sv.shape()
            )));
        }
        let mut y = xv.clone();
        for n in 0..xs.n {
            let k = sv.data()[n];
            y.sample_mut(n).iter_mut().for_each(|v| *v *= k);
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(y, Op::ScaleBatch { x, s }, rg))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::concat_channels(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(y, Op::Concat(parts.to_vec()), rg))
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = kernels::resize_bilinear(self.value(x), h, w)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Resize(x), rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        self.resize(x, s.h * 2, s.w * 2)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.shape();
        let mut y = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
        for n in 0..s.n {
            for c in 0..s.c {
                let m = xv.plane(n, c).iter().sum::<f64>() / s.plane() as f64;
                y.set(n, c, 0, 0, m);
            }
        }
        let rg = self.rg(x);
        self.push(y, Op::GlobalAvgPool(x), rg)
    }

    /// Records a scalar `value` of `x` with a precomputed gradient.
    pub fn scalar_fn(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        grad.expect_shape(self.shape(x), "scalar function gradient")?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(value), Op::Scalar { x, grad }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = xv.sum();
        let grad = Tensor::full(xv.shape(), 1.0);
        self.scalar_fn(x, value, grad).expect("gradient has input shape")
    }

    /// `sum(x * weights)` for a constant `weights` tensor.
    pub fn dot_const(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        weights.expect_shape(xv.shape(), "dot_const weights")?;
        let value = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        self.scalar_fn(x, value, weights.clone())
    }

    /// Differentiates the scalar `loss` with respect to everything it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != Shape::scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(&node.op, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, cols } => {
                let g = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    cols.as_deref(),
                    *geom,
                    dy,
                    self.rg(*x),
                    self.rg(*w),
                    b.is_some_and(|b| self.rg(b)),
                );
                if let Some(dx) = g.dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = g.dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = dy
                    .zip_map(xv, |g, v| if v > 0.0 { g } else { 0.0 })
                    .expect("same shape");
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let xv = self.value(*x);
                let dx = dy
                    .zip_map(xv, |g, v| {
                        let s = sigmoid(v);
                        g * s * (1.0 - s)
                    })
                    .expect("same shape");
                self.accumulate(grads, *x, dx);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                saved,
            } => {
                let (dx, dg, db) =
                    kernels::group_norm_backward(dy, self.value(*gamma), *groups, saved);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dg);
                self.accumulate(grads, *beta, db);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, dy.zip_map(vb, |g, v| g * v).expect("same shape"));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, dy.zip_map(va, |g, v| g * v).expect("same shape"));
                }
            }
            Op::Scale(x, k) => self.accumulate(grads, *x, dy.map(|v| v * k)),
            Op::ScaleBatch { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let n = xv.shape().n;
                if self.rg(*x) {
                    let mut dx = dy.clone();
                    for i in 0..n {
                        let k = sv.data()[i];
                        dx.sample_mut(i).iter_mut().for_each(|v| *v *= k);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.rg(*s) {
                    let mut ds = Tensor::zeros(sv.shape());
                    for i in 0..n {
                        ds.data_mut()[i] = dy
                            .sample(i)
                            .iter()
                            .zip(xv.sample(i))
                            .map(|(g, v)| g * v)
                            .sum();
                    }
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::Concat(parts) => {
                let ys = dy.shape();
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    if self.rg(p) {
                        let mut dp = Tensor::zeros(ps);
                        for n in 0..ys.n {
                            let start = offset * ys.plane();
                            let src = &dy.sample(n)[start..start + ps.sample()];
                            dp.sample_mut(n).copy_from_slice(src);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += ps.c;
                }
            }
            Op::Resize(x) => {
                let dx = kernels::resize_bilinear_backward(dy, self.shape(*x));
                self.accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let inv = 1.0 / s.plane() as f64;
                let dx = Tensor::from_fn(s, |n, c, _, _| dy.at(n, c, 0, 0) * inv);
                self.accumulate(grads, *x, dx);
            }
            Op::Scalar { x, grad } => {
                let k = dy.data()[0];
                self.accumulate(grads, *x, grad.map(|v| v * k));
            }
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a parameter; `None` if the parameter was not used or did
    /// not influence the differentiated scalar.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_use_accumulates_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input_with_grad(Tensor::full(Shape::new(1, 1, 2, 2), 3.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z);
        let grads = g.backward(s).unwrap();
        // d/dx (x^2 + x) = 2x + 1
        assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn detach_blocks_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input_with_grad(Tensor::full(Shape::new(1, 1, 1, 1), 2.0));
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input_with_grad(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
