//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Each recorded node keeps its forward value and the operation that produced
//! it. [`Tape::backward`] walks the tape in reverse, applying each op's
//! reverse rule and accumulating gradients into its inputs.

use crate::engine::kernels;
use crate::engine::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to predictions inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<u32> },
    Upsample { x: Var },
    Concat { a: Var, b: Var, ca: usize },
    Relu { x: Var },
    Sigmoid { x: Var },
    Flatten { x: Var },
    Linear { x: Var, w: Var, b: Var },
    Bce { pred: Var, target: Tensor<T> },
    Mse { pred: Var, target: Tensor<T> },
    WeightedSum { x: Var, weights: Tensor<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf (gradients will be produced for it).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf, such as an input image.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Conv2d { x, w, b }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = kernels::maxpool2x2_forward(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::MaxPool { x, argmax }, rg))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let y = kernels::upsample2x_forward(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::Upsample { x }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::concat_channels_forward(self.value(a), self.value(b))?;
        let ca = self.value(a).shape()[1];
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Concat { a, b, ca }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.needs(x);
        self.push(y, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let rg = self.needs(x);
        self.push(y, Op::Sigmoid { x }, rg)
    }

    /// Collapses all but the leading axis: (N, ...) → (N, F).
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).clone();
        let n = v.shape()[0];
        let f = v.len() / n;
        let y = v.reshape(&[n, f])?;
        let rg = self.needs(x);
        Ok(self.push(y, Op::Flatten { x }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = kernels::linear_forward(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    /// Mean binary cross-entropy with predictions clamped to `[ε, 1−ε]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        check_same_shape("bce_loss", p, target)?;
        let eps = BCE_EPS;
        let mut acc = 0.0f64;
        for (&pv, &tv) in p.data().iter().zip(target.data()) {
            let pc = pv.to_f64_lossy().clamp(eps, 1.0 - eps);
            let t = tv.to_f64_lossy();
            acc -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        let loss = Tensor::scalar(T::from_f64_lossy(acc / p.len() as f64));
        let rg = self.needs(pred);
        Ok(self.push(
            loss,
            Op::Bce {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        check_same_shape("mse_loss", p, target)?;
        let acc: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = (a - b).to_f64_lossy();
                d * d
            })
            .sum();
        let loss = Tensor::scalar(T::from_f64_lossy(acc / p.len() as f64));
        let rg = self.needs(pred);
        Ok(self.push(
            loss,
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// `Σ x·w` over all elements; a generic scalar objective for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let v = self.value(x);
        check_same_shape("weighted_sum", v, weights)?;
        let s = v
            .data()
            .iter()
            .zip(weights.data())
            .fold(T::zero(), |a, (&p, &q)| a + p * q);
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar node, returning gradients for every
    /// node that depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d { x, w, b } => {
                    let cg = kernels::conv2d_backward(self.value(*x), self.value(*w), &g, self.needs(*x))?;
                    if let Some(dx) = cg.input {
                        accumulate(&mut grads, *x, dx);
                    }
                    self.acc_if(&mut grads, *w, cg.weight);
                    self.acc_if(&mut grads, *b, cg.bias);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = kernels::maxpool2x2_backward(self.value(*x).shape(), argmax, &g)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample { x } => {
                    let dx = kernels::upsample2x_backward(self.value(*x).shape(), &g)?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat { a, b, ca } => {
                    let (da, db) = kernels::split_channels(&g, *ca)?;
                    self.acc_if(&mut grads, *a, da);
                    self.acc_if(&mut grads, *b, db);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let mut dx = g;
                    for (d, &s) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d = *d * s * (T::one() - s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Flatten { x } => {
                    let dx = g.reshape(self.value(*x).shape())?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_backward(self.value(*x), self.value(*w), &g)?;
                    self.acc_if(&mut grads, *x, dx);
                    self.acc_if(&mut grads, *w, dw);
                    self.acc_if(&mut grads, *b, db);
                }
                Op::Bce { pred, target } => {
                    let p = self.value(*pred);
                    let scale = g.data()[0].to_f64_lossy() / p.len() as f64;
                    let data = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&pv, &tv)| {
                            let pc = pv.to_f64_lossy().clamp(BCE_EPS, 1.0 - BCE_EPS);
                            let t = tv.to_f64_lossy();
                            T::from_f64_lossy(scale * (pc - t) / (pc * (1.0 - pc)))
                        })
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::from_vec(p.shape(), data)?);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let scale = g.data()[0] * T::from_f64_lossy(2.0 / p.len() as f64);
                    let data = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &b)| scale * (a - b))
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::from_vec(p.shape(), data)?);
                }
                Op::WeightedSum { x, weights } => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *x, weights.map(|w| w * s));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn acc_if(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if self.needs(v) {
            accumulate(grads, v, g);
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn check_same_shape<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: prediction {:?} vs target {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
