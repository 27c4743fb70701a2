//! Named parameter storage and the handful of layer helpers the models share.

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{LabError, Result};
use crate::rng::LabRng;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor, checking names and shapes against `self`.
    pub fn assign(&mut self, other: Vec<(String, Tensor)>) -> Result<()> {
        if other.len() != self.tensors.len() {
            return Err(LabError::Checkpoint {
                tensor: "*".into(),
                message: format!("expected {} tensors, found {}", self.len(), other.len()),
            });
        }
        for (i, (name, t)) in other.iter().enumerate() {
            if *name != self.names[i] {
                return Err(LabError::Checkpoint {
                    tensor: name.clone(),
                    message: format!("expected tensor `{}` at position {i}", self.names[i]),
                });
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(LabError::Checkpoint {
                    tensor: name.clone(),
                    message: format!(
                        "shape {:?} does not match configured {:?}",
                        t.shape(),
                        self.tensors[i].shape()
                    ),
                });
            }
        }
        self.tensors = other.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.leaf(t.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant, for inference.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }
}

/// Graph handles for a bound [`ParamSet`], in parameter order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles supplied by the caller, in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Glorot-uniform matrix `[fan_in, fan_out]`.
pub fn xavier(rng: &mut LabRng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

pub fn normal_matrix(rng: &mut LabRng, rows: usize, cols: usize, std: f64) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("std > 0");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

/// Dense layer parameters.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, rng: &mut LabRng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: params.add(format!("{name}.w"), xavier(rng, fan_in, fan_out)),
            b: params.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn zeroed(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: params.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out])),
            b: params.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: params.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gain), p.var(self.bias))
    }
}
