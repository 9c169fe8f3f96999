use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::patches::PatchStack;
use crate::scalar::Scalar;

/// Dense row-major tensor. Four-dimensional tensors use the `[B * N, C, H, W]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 5 {
            return Err(Error::shape(format!("tensor rank {} outside 1..=5", shape.len())));
        }
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected a 4-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Packs a stack into `[N, C, H, W]`.
    pub fn from_stack(stack: &PatchStack<T>) -> Self {
        let (h, w, c) = stack.patch_shape();
        let mut data = Vec::with_capacity(stack.len() * c * h * w);
        for p in stack.patches() {
            data.extend_from_slice(p.data());
        }
        Self {
            shape: vec![stack.len(), c, h, w],
            data,
        }
    }

    /// Packs several equally sized stacks into `[B * N, C, H, W]`.
    pub fn from_stacks(stacks: &[PatchStack<T>]) -> Result<Self> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::invalid("no stacks to pack"))?;
        let (h, w, c) = first.patch_shape();
        let mut data = Vec::new();
        let mut count = 0;
        for s in stacks {
            if s.patch_shape() != (h, w, c) || s.len() != first.len() {
                return Err(Error::shape("stacks differ in size or patch shape"));
            }
            for p in s.patches() {
                data.extend_from_slice(p.data());
                count += 1;
            }
        }
        Tensor::new(&[count, c, h, w], data)
    }

    /// Splits a `[N, C, H, W]` tensor into planar images.
    pub fn to_images(&self) -> Result<Vec<Image<T>>> {
        let (n, c, h, w) = self.dims4()?;
        let step = c * h * w;
        (0..n)
            .map(|i| Image::from_planar(h, w, c, self.data[i * step..(i + 1) * step].to_vec()))
            .collect()
    }
}
