//! Parameter store and the basic layers built on [`super::ops`].

use rand::Rng as _;

use super::graph::{Graph, Var};
use super::{ops, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T = f64> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.values[i])
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `graph`, differentiable when `trainable`.
    pub fn bind<'g>(&self, graph: &'g Graph<T>, trainable: bool) -> Vec<Var<'g, T>> {
        self.values
            .iter()
            .map(|v| {
                if trainable {
                    graph.param(v.clone())
                } else {
                    graph.input(v.clone())
                }
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// He-uniform tensor with the given fan-in.
fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape")
}

/// Builds parameters with hierarchical names and a shared initialization RNG.
pub struct Builder<'a, T> {
    pub params: &'a mut Params<T>,
    pub rng: &'a mut Rng,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(params: &'a mut Params<T>, rng: &'a mut Rng) -> Self {
        Self {
            params,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_, T>) -> R) -> R {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let mut inner = Builder {
            params: &mut *self.params,
            rng: &mut *self.rng,
            prefix,
        };
        f(&mut inner)
    }

    fn add(&mut self, name: &str, value: Tensor<T>) -> usize {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.params.add(full, value)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Square `k x k` convolution with "same" padding for odd `k`.
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        b.scope(name, |b| {
            let w = he_uniform(&[cout, cin, k, k], cin * k * k, b.rng);
            Self {
                weight: b.add("weight", w),
                bias: b.add("bias", Tensor::zeros(&[cout])),
                stride: 1,
                pad: k / 2,
            }
        })
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>) -> Result<Var<'g, T>> {
        ops::conv2d(x, p[self.weight], Some(p[self.bias]), self.stride, self.pad)
    }
}

/// `k x k` transposed convolution with stride `k` (exact `k`-fold upsampling).
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        b.scope(name, |b| {
            let w = he_uniform(&[cin, cout, k, k], cin, b.rng);
            Self {
                weight: b.add("weight", w),
                bias: b.add("bias", Tensor::zeros(&[cout])),
                stride: k,
            }
        })
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>) -> Result<Var<'g, T>> {
        ops::conv_transpose2d(x, p[self.weight], Some(p[self.bias]), self.stride, 0)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub weight: usize,
    pub bias: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-6;

    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        b.scope(name, |b| Self {
            weight: b.add("weight", Tensor::filled(&[channels], T::one())),
            bias: b.add("bias", Tensor::zeros(&[channels])),
            eps: Self::EPS,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>) -> Result<Var<'g, T>> {
        ops::layer_norm(x, p[self.weight], p[self.bias], self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct LayerScale {
    pub weight: usize,
}

impl LayerScale {
    pub const INIT: f64 = 0.1;

    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        b.scope(name, |b| Self {
            weight: b.add("weight", Tensor::filled(&[channels], T::lit(Self::INIT))),
        })
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>) -> Result<Var<'g, T>> {
        ops::layer_scale(x, p[self.weight])
    }
}

/// Two 3x3 convolutions, each followed by ReLU.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub first: Conv2d,
    pub second: Conv2d,
}

impl DoubleConv {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        b.scope(name, |b| Self {
            first: Conv2d::new(b, "conv1", cin, cout, 3),
            second: Conv2d::new(b, "conv2", cout, cout, 3),
        })
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], x: Var<'g, T>) -> Result<Var<'g, T>> {
        let h = ops::relu(self.first.forward(p, x)?);
        Ok(ops::relu(self.second.forward(p, h)?))
    }
}

/// Fuses a local feature `e` with the stack summary `g`: a 1x1 convolution of
/// their channel concatenation back to `C` channels.
#[derive(Clone, Debug)]
pub struct MergeGlobal {
    pub conv: Conv2d,
    pub channels: usize,
}

impl MergeGlobal {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        Self {
            conv: Conv2d::new(b, name, 2 * channels, channels, 1),
            channels,
        }
    }

    pub fn forward<'g, T: Scalar>(&self, p: &[Var<'g, T>], e: Var<'g, T>, g: Var<'g, T>) -> Result<Var<'g, T>> {
        if e.shape() != g.shape() {
            return Err(Error::shape(format!(
                "merge: local {:?} vs global {:?}",
                e.shape(),
                g.shape()
            )));
        }
        let cat = ops::concat_channels(&[e, g])?;
        self.conv.forward(p, cat)
    }
}
