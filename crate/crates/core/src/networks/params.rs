use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every tensor of a [`ParamSet`], in the set's order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Index<usize> for Bound {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            kinds: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.kinds.push(kind);
        self.tensors.push(tensor.with_grad());
        self.tensors.len() - 1
    }

    /// Appends a He-initialized conv layer and returns the (weight, bias) slots.
    pub(crate) fn push_conv<R: Rng>(
        &mut self,
        prefix: &str,
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> (usize, usize) {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("positive std");
        let len = out_channels * fan_in;
        let values: Vec<f32> = (0..len).map(|_| normal.sample(rng)).collect();
        let weight = Tensor::from_vec([out_channels, in_channels, kernel, kernel], values)
            .expect("conv weight shape");
        let bias = Tensor::zeros([out_channels]).expect("conv bias shape");
        let w = self.push(format!("{prefix}.weight"), ParamKind::Weight, weight);
        let b = self.push(format!("{prefix}.bias"), ParamKind::Bias, bias);
        (w, b)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kind(&self, i: usize) -> ParamKind {
        self.kinds[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor)> {
        self.names
            .iter()
            .zip(&self.kinds)
            .zip(&self.tensors)
            .map(|((n, &k), t)| (n.as_str(), k, t))
    }

    /// Binds every tensor to `tape`. Frozen binding records them as constants
    /// so no gradient can reach them.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| if trainable { tape.leaf(t) } else { tape.constant(t) })
                .collect(),
        )
    }

    /// Accumulates the gradients of a trainable binding into the grad buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        if bound.0.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "binding has {} vars for {} parameters",
                bound.0.len(),
                self.tensors.len()
            )));
        }
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.0) {
            if let Some(g) = grads.get(var) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Moves the gradients of a trainable binding into the grad buffers,
    /// replacing their contents; tensors the loss does not reach get zeros.
    pub fn set_grads(&mut self, grads: &mut Gradients, bound: &Bound) -> Result<()> {
        if bound.0.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "binding has {} vars for {} parameters",
                bound.0.len(),
                self.tensors.len()
            )));
        }
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.0) {
            match grads.take(var) {
                Some(g) => tensor.set_grad(g)?,
                None => tensor.zero_grad(),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// True when no tensor holds a nonzero gradient entry.
    pub fn grads_all_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)))
    }

    /// Replaces the values of tensor `i`, keeping its shape.
    pub fn set_values(&mut self, i: usize, values: &[f32]) -> Result<()> {
        let t = &mut self.tensors[i];
        if t.numel() != values.len() {
            return Err(Error::shape(
                "set_values",
                format!("{} values for {}", values.len(), self.names[i]),
            ));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }
}
