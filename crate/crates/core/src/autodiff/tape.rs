//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs. Nodes are only ever appended, so node order is a topological
//! order and [`Tape::backward`] is a single reverse sweep.

use super::kernels;
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: usize,
    },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, T),
    Axpy { y: Var, a: T, x: Var },
    Concat(Var, Var),
    L1 { pred: Var, target: Var },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recording of one forward computation. Confined to a single thread.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`; `None` when `var` does not require grad
    /// or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
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

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias),
            padding,
        )?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = kernels::relu(self.value(input));
        let rg = self.needs(&[input]);
        self.push(out, rg, Op::Relu(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = kernels::scale(self.value(a), s);
        let rg = self.needs(&[a]);
        self.push(out, rg, Op::Scale(a, s))
    }

    /// `y + a * x` as a single node.
    pub fn axpy(&mut self, y: Var, a: T, x: Var) -> Result<Var> {
        let out = kernels::axpy(self.value(y), a, self.value(x))?;
        let rg = self.needs(&[y, x]);
        Ok(self.push(out, rg, Op::Axpy { y, a, x }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, rg, Op::Concat(a, b)))
    }

    /// Constant one-channel plane shaped like `like`, filled with `value`.
    pub fn fill_channel(&mut self, like: Var, value: T) -> Var {
        let out = kernels::fill_channel(self.value(like).shape(), value);
        self.constant(out)
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let out = kernels::l1_loss(self.value(pred), self.value(target))?;
        let rg = self.needs(&[pred, target]);
        Ok(self.push(out, rg, Op::L1 { pred, target }))
    }

    /// Reverse sweep from a single-element `loss`, seeding its gradient with 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).shape() != Shape::scalar() {
            return Err(Error::contract(format!(
                "backward: loss must be a single element, got shape {}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let upstream = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(&node.op, upstream, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op<T>, upstream: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            } => {
                let want = (
                    self.requires_grad(input),
                    self.requires_grad(weight),
                    self.requires_grad(bias),
                );
                let g = kernels::conv2d_backward(
                    self.value(input),
                    self.value(weight),
                    &upstream,
                    padding,
                    want,
                )?;
                if let Some(gx) = g.input {
                    self.accumulate(grads, input, gx);
                }
                if let Some(gw) = g.weight {
                    self.accumulate(grads, weight, gw);
                }
                if let Some(gb) = g.bias {
                    self.accumulate(grads, bias, gb);
                }
            }
            Op::Relu(input) => {
                let g = kernels::relu_backward(self.value(input), &upstream);
                self.accumulate(grads, input, g);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, b, upstream.clone());
                self.accumulate(grads, a, upstream);
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, a, kernels::scale(&upstream, s));
            }
            Op::Axpy { y, a, x } => {
                self.accumulate(grads, x, kernels::scale(&upstream, a));
                self.accumulate(grads, y, upstream);
            }
            Op::Concat(a, b) => {
                let (ga, gb) =
                    kernels::split_channels(&upstream, self.value(a).shape(), self.value(b).shape());
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::L1 { pred, target } => {
                let up = upstream.item();
                let gp = kernels::l1_loss_backward(self.value(pred), self.value(target), up);
                if self.requires_grad(target) {
                    self.accumulate(grads, target, kernels::scale(&gp, -T::one()));
                }
                self.accumulate(grads, pred, gp);
            }
        }
        Ok(())
    }
}
