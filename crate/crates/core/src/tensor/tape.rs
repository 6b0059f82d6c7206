//! Reverse-mode tape over batched primitives.
//!
//! Every node holds one activation per image of the batch. Per-image work is
//! spread over rayon; parameter gradients are summed in image order so the
//! result does not depend on the worker count.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rayon::prelude::*;

use super::ops::{self, BatchNormParams, BnMode};
use super::{lit, Element, ImageTensor, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named, borrowed parameter tensor.
#[derive(Clone, Copy, Debug)]
pub struct Param<'a, T> {
    pub name: &'a str,
    pub tensor: &'a Tensor<T>,
}

impl<'a, T> Param<'a, T> {
    pub fn new(name: &'a str, tensor: &'a Tensor<T>) -> Self {
        Self { name, tensor }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ConvKind {
    K3,
    K1,
    Up2,
}

enum Op<'a, T> {
    Input,
    Conv {
        kind: ConvKind,
        x: Var,
        w: Param<'a, T>,
        b: Param<'a, T>,
    },
    BatchNorm {
        x: Var,
        gamma: Param<'a, T>,
        beta: Param<'a, T>,
        mode: BnMode,
        normalized: Vec<ImageTensor<T>>,
        inv_std: Vec<T>,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<Vec<u32>>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
}

impl<T> Op<'_, T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { kind: ConvKind::K3, .. } => "conv3x3",
            Op::Conv { kind: ConvKind::K1, .. } => "conv1x1",
            Op::Conv {
                kind: ConvKind::Up2, ..
            } => "upsample_tconv2",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu { .. } => "relu",
            Op::MaxPool { .. } => "maxpool2",
            Op::Concat { .. } => "concat_channels",
            Op::Sigmoid { .. } => "sigmoid",
        }
    }
}

struct Node<'a, T> {
    op: Op<'a, T>,
    value: Vec<ImageTensor<T>>,
}

/// Running statistics produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningUpdate<T> {
    pub mean_name: String,
    pub var_name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Result of a reverse pass.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    params: IndexMap<String, Tensor<T>>,
    inputs: BTreeMap<Var, Vec<ImageTensor<T>>>,
    visited: Vec<Var>,
}

impl<T: Element> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> IndexMap<String, Tensor<T>> {
        self.params
    }

    /// Gradient with respect to an input node, one tensor per image.
    pub fn input(&self, var: Var) -> Option<&[ImageTensor<T>]> {
        self.inputs.get(&var).map(Vec::as_slice)
    }

    /// Nodes in the order the reverse pass processed them.
    pub fn visited(&self) -> &[Var] {
        &self.visited
    }
}

/// Ordered record of executed primitives with the values they produced.
pub struct GradTape<'a, T = f32> {
    nodes: Vec<Node<'a, T>>,
    running: Vec<RunningUpdate<T>>,
}

impl<T: Element> Default for GradTape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn par_map<T, F>(xs: &[ImageTensor<T>], f: F) -> Result<Vec<ImageTensor<T>>>
where
    T: Element,
    F: Fn(&ImageTensor<T>) -> Result<ImageTensor<T>> + Sync + Send,
{
    xs.par_iter().map(f).collect()
}

impl<'a, T: Element> GradTape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            running: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the recorded primitives in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Fingerprint of every non-smooth decision on the tape: which ReLU
    /// inputs are positive and which element each max-pool window picked.
    /// Two forward passes with equal signatures lie on the same linear
    /// piece of those primitives.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for t in &self.nodes[x.0].value {
                        for chunk in t.data().chunks(64) {
                            let bits = chunk
                                .iter()
                                .enumerate()
                                .fold(0u64, |acc, (i, &v)| acc | ((v > T::zero()) as u64) << i);
                            mix(bits);
                        }
                    }
                }
                Op::MaxPool { argmax, .. } => {
                    for a in argmax.iter().flatten() {
                        mix(*a as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    pub fn value(&self, v: Var) -> &[ImageTensor<T>] {
        &self.nodes[v.0].value
    }

    pub fn running_updates(&self) -> &[RunningUpdate<T>] {
        &self.running
    }

    fn push(&mut self, op: Op<'a, T>, value: Vec<ImageTensor<T>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("variable {} is not on this tape", v.0)));
        }
        Ok(())
    }

    pub fn input(&mut self, batch: Vec<ImageTensor<T>>) -> Result<Var> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Empty("tape input batch".into()))?
            .shape();
        if batch.iter().any(|t| t.shape() != first) {
            return Err(Error::shape("GradTape::input", "batch images differ in shape"));
        }
        Ok(self.push(Op::Input, batch))
    }

    fn conv(&mut self, kind: ConvKind, x: Var, w: Param<'a, T>, b: Param<'a, T>) -> Result<Var> {
        self.check(x)?;
        let value = {
            let xs = &self.nodes[x.0].value;
            match kind {
                ConvKind::K3 => par_map(xs, |t| ops::conv3x3(t, w.tensor, b.tensor))?,
                ConvKind::K1 => par_map(xs, |t| ops::conv1x1(t, w.tensor, b.tensor))?,
                ConvKind::Up2 => par_map(xs, |t| ops::upsample_tconv2(t, w.tensor, b.tensor))?,
            }
        };
        Ok(self.push(Op::Conv { kind, x, w, b }, value))
    }

    pub fn conv3x3(&mut self, x: Var, w: Param<'a, T>, b: Param<'a, T>) -> Result<Var> {
        self.conv(ConvKind::K3, x, w, b)
    }

    pub fn conv1x1(&mut self, x: Var, w: Param<'a, T>, b: Param<'a, T>) -> Result<Var> {
        self.conv(ConvKind::K1, x, w, b)
    }

    pub fn upsample_tconv2(&mut self, x: Var, w: Param<'a, T>, b: Param<'a, T>) -> Result<Var> {
        self.conv(ConvKind::Up2, x, w, b)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Param<'a, T>,
        beta: Param<'a, T>,
        running_mean: Param<'a, T>,
        running_var: Param<'a, T>,
        mode: BnMode,
    ) -> Result<Var> {
        self.check(x)?;
        let params = BatchNormParams {
            gamma: gamma.tensor.data(),
            beta: beta.tensor.data(),
            running_mean: running_mean.tensor.data(),
            running_var: running_var.tensor.data(),
            eps: lit(ops::BN_EPS),
        };
        let xs = &self.nodes[x.0].value;
        let (value, normalized, inv_std) = match mode {
            BnMode::Train => {
                let out = ops::batch_norm_train(xs, &params, lit(ops::BN_MOMENTUM))?;
                self.running.push(RunningUpdate {
                    mean_name: running_mean.name.to_string(),
                    var_name: running_var.name.to_string(),
                    mean: out.running_mean,
                    var: out.running_var,
                });
                (out.output, out.normalized, out.inv_std)
            }
            BnMode::Infer => {
                let value = par_map(xs, |t| ops::batch_norm_infer(t, &params))?;
                let inv_std: Vec<T> = params
                    .running_var
                    .iter()
                    .map(|&v| T::one() / (v + params.eps).sqrt())
                    .collect();
                let normalized = xs
                    .iter()
                    .map(|t| {
                        let mut n = t.clone();
                        for c in 0..t.channels() {
                            let (m, s) = (params.running_mean[c], inv_std[c]);
                            for v in n.plane_mut(c) {
                                *v = (*v - m) * s;
                            }
                        }
                        n
                    })
                    .collect();
                (value, normalized, inv_std)
            }
        };
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                normalized,
                inv_std,
            },
            value,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.nodes[x.0].value.par_iter().map(ops::relu).collect();
        Ok(self.push(Op::Relu { x }, value))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.nodes[x.0].value.par_iter().map(ops::sigmoid).collect();
        Ok(self.push(Op::Sigmoid { x }, value))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let pooled: Vec<(ImageTensor<T>, Vec<u32>)> = self.nodes[x.0]
            .value
            .par_iter()
            .map(ops::maxpool2)
            .collect::<Result<_>>()?;
        let (value, argmax) = pooled.into_iter().unzip();
        Ok(self.push(Op::MaxPool { x, argmax }, value))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.len() != vb.len() {
            return Err(Error::shape("concat_channels", "batch sizes differ"));
        }
        let value = va
            .iter()
            .zip(vb)
            .map(|(x, y)| ops::concat_channels(x, y))
            .collect::<Result<_>>()?;
        Ok(self.push(Op::Concat { a, b }, value))
    }

    /// Reverse pass seeded with `grad` at `output`.
    pub fn backward(&self, output: Var, grad: Vec<ImageTensor<T>>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward called before any forward pass".into()));
        }
        self.check(output)?;
        let out_val = &self.nodes[output.0].value;
        if grad.len() != out_val.len() || grad.iter().zip(out_val).any(|(g, v)| g.shape() != v.shape()) {
            return Err(Error::shape("backward", "seed gradient does not match the output node"));
        }

        let mut grads: Vec<Option<Vec<ImageTensor<T>>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(grad);
        let mut params: IndexMap<String, Tensor<T>> = IndexMap::new();
        let mut inputs = BTreeMap::new();
        let mut visited = Vec::new();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visited.push(Var(idx));
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    inputs.insert(Var(idx), g);
                }
                Op::Conv { kind, x, w, b } => {
                    let xs = &self.nodes[x.0].value;
                    let per_image: Vec<(ImageTensor<T>, Tensor<T>, Tensor<T>)> = xs
                        .par_iter()
                        .zip(g.par_iter())
                        .map(|(xi, gi)| match kind {
                            ConvKind::K3 => ops::conv3x3_backward(xi, w.tensor, gi),
                            ConvKind::K1 => ops::conv1x1_backward(xi, w.tensor, gi),
                            ConvKind::Up2 => ops::upsample_tconv2_backward(xi, w.tensor, gi),
                        })
                        .collect::<Result<_>>()?;
                    let mut gx = Vec::with_capacity(per_image.len());
                    let mut gw = Tensor::zeros(w.tensor.shape().to_vec());
                    let mut gb = Tensor::zeros(b.tensor.shape().to_vec());
                    for (dx, dw, db) in per_image {
                        gw.add_assign(&dw);
                        gb.add_assign(&db);
                        gx.push(dx);
                    }
                    accumulate_param(&mut params, w.name, gw);
                    accumulate_param(&mut params, b.name, gb);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mode,
                    normalized,
                    inv_std,
                } => {
                    let (gx, dg, db) = ops::batch_norm_backward(&g, normalized, gamma.tensor.data(), inv_std, *mode);
                    accumulate_param(&mut params, gamma.name, Tensor::new(gamma.tensor.shape().to_vec(), dg)?);
                    accumulate_param(&mut params, beta.name, Tensor::new(beta.tensor.shape().to_vec(), db)?);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Relu { x } => {
                    let xs = &self.nodes[x.0].value;
                    let gx = xs
                        .par_iter()
                        .zip(g.par_iter())
                        .map(|(xi, gi)| ops::relu_backward(xi, gi))
                        .collect();
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Sigmoid { x } => {
                    let gx = node
                        .value
                        .par_iter()
                        .zip(g.par_iter())
                        .map(|(si, gi)| ops::sigmoid_backward(si, gi))
                        .collect();
                    accumulate(&mut grads[x.0], gx);
                }
                Op::MaxPool { x, argmax } => {
                    let xs = &self.nodes[x.0].value;
                    let gx = xs
                        .iter()
                        .zip(argmax)
                        .zip(&g)
                        .map(|((xi, am), gi)| ops::maxpool2_backward(xi.shape(), am, gi))
                        .collect();
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Concat { a, b } => {
                    let ca = self.nodes[a.0].value[0].channels();
                    let mut ga = Vec::with_capacity(g.len());
                    let mut gb = Vec::with_capacity(g.len());
                    for gi in &g {
                        let (p, q) = ops::split_channels(gi, ca)?;
                        ga.push(p);
                        gb.push(q);
                    }
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
            }
        }
        Ok(Gradients {
            params,
            inputs,
            visited,
        })
    }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<ImageTensor<T>>>, g: Vec<ImageTensor<T>>) {
    match slot {
        Some(existing) => {
            for (e, gi) in existing.iter_mut().zip(&g) {
                e.add_assign(gi);
            }
        }
        None => *slot = Some(g),
    }
}

fn accumulate_param<T: Element>(params: &mut IndexMap<String, Tensor<T>>, name: &str, g: Tensor<T>) {
    match params.get_mut(name) {
        Some(existing) => existing.add_assign(&g),
        None => {
            params.insert(name.to_string(), g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_before_forward_is_rejected() {
        let tape = GradTape::<f32>::new();
        let err = tape.backward(Var(0), vec![]).unwrap_err();
        assert!(matches!(err, Error::Tape(_)));
    }

    #[test]
    fn relu_and_sigmoid_derivatives() {
        let mut tape = GradTape::<f64>::new();
        let x = tape
            .input(vec![ImageTensor::new(1, 1, 3, vec![1.0, 2.0, 0.0]).unwrap()])
            .unwrap();
        let r = tape.relu(x).unwrap();
        let s = tape.sigmoid(r).unwrap();
        let g = tape.backward(s, vec![ImageTensor::filled(1, 1, 3, 4.0)]).unwrap();
        let gx = &g.input(x).unwrap()[0];
        // at x=0 relu blocks; sigmoid'(0) would be 0.25
        assert_eq!(gx.data()[2], 0.0);
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((gx.data()[0] - 4.0 * s1 * (1.0 - s1)).abs() < 1e-12);

        let mut tape = GradTape::<f64>::new();
        let x = tape.input(vec![ImageTensor::zeros(1, 1, 1)]).unwrap();
        let s = tape.sigmoid(x).unwrap();
        let g = tape.backward(s, vec![ImageTensor::filled(1, 1, 1, 2.0)]).unwrap();
        assert_eq!(g.input(x).unwrap()[0].data(), &[0.5]);
    }

    #[test]
    fn relu_passes_positive_gradient() {
        let mut tape = GradTape::<f32>::new();
        let x = tape.input(vec![ImageTensor::filled(1, 2, 2, 3.0)]).unwrap();
        let r = tape.relu(x).unwrap();
        let up = ImageTensor::new(1, 2, 2, vec![0.1, -2.0, 7.0, 0.0]).unwrap();
        let g = tape.backward(r, vec![up.clone()]).unwrap();
        assert_eq!(g.input(x).unwrap()[0], up);
    }

    #[test]
    fn reverse_pass_visits_in_reverse_order() {
        let w = Tensor::filled(vec![2, 1, 3, 3], 0.1f32);
        let b = Tensor::zeros(vec![2]);
        let mut tape = GradTape::new();
        let x = tape.input(vec![ImageTensor::filled(1, 4, 4, 1.0)]).unwrap();
        let c = tape.conv3x3(x, Param::new("w", &w), Param::new("b", &b)).unwrap();
        let r = tape.relu(c).unwrap();
        let p = tape.maxpool2(r).unwrap();
        let s = tape.sigmoid(p).unwrap();
        let g = tape.backward(s, vec![ImageTensor::filled(2, 2, 2, 1.0)]).unwrap();
        assert_eq!(g.visited(), &[s, p, r, c, x]);
        assert_eq!(tape.op_names(), vec!["input", "conv3x3", "relu", "maxpool2", "sigmoid"]);
        assert_eq!(g.param("w").unwrap().shape(), &[2, 1, 3, 3]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.input(vec![ImageTensor::filled(1, 1, 1, 2.0)]).unwrap();
        let c = tape.concat(x, x).unwrap();
        let g = tape
            .backward(c, vec![ImageTensor::new(2, 1, 1, vec![1.0, 3.0]).unwrap()])
            .unwrap();
        assert_eq!(g.input(x).unwrap()[0].data(), &[4.0]);
    }
}
