use crate::error::{Error, Result};

use super::real::Real;

/// Dense n-dimensional array, row-major. Activations are laid out as
/// `[batch, channels, height, width]` or `[batch, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "{} values for tensor of shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Concatenates `[batch, f_i]` tensors along the feature axis.
pub fn concat<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let batch = parts
        .first()
        .map(Tensor::batch)
        .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
    if parts
        .iter()
        .any(|p| p.shape().len() != 2 || p.batch() != batch)
    {
        return Err(Error::Shape(
            "concat expects [batch, features] tensors with equal batch".into(),
        ));
    }
    let width: usize = parts.iter().map(Tensor::item_len).sum();
    let mut data = Vec::with_capacity(batch * width);
    for b in 0..batch {
        for p in parts {
            let w = p.item_len();
            data.extend_from_slice(&p.data()[b * w..(b + 1) * w]);
        }
    }
    Tensor::from_vec(&[batch, width], data)
}

/// Inverse of [`concat`]: splits `[batch, Σw]` into pieces of the given widths.
pub fn split<T: Real>(t: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let batch = t.batch();
    if t.shape().len() != 2 || widths.iter().sum::<usize>() != t.item_len() {
        return Err(Error::Shape(format!(
            "cannot split {:?} into {widths:?}",
            t.shape()
        )));
    }
    let total = t.item_len();
    let mut out: Vec<Vec<T>> = widths
        .iter()
        .map(|w| Vec::with_capacity(batch * w))
        .collect();
    for b in 0..batch {
        let mut off = b * total;
        for (o, &w) in out.iter_mut().zip(widths) {
            o.extend_from_slice(&t.data()[off..off + w]);
            off += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::from_vec(&[batch, w], d))
        .collect()
}
