use crate::error::{Error, Result};

use super::real::Real;
use super::tensor::Tensor;

/// Lower clamp applied to predicted probabilities before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean categorical cross-entropy `J = −(1/B) Σ_i Σ_c y_ic·ln ŷ_ic` over a
/// `[B, C]` batch, with the gradient with respect to `probs`.
pub fn cross_entropy<T: Real>(onehot: &Tensor<T>, probs: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if onehot.shape() != probs.shape() || probs.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "cross-entropy targets {:?} vs predictions {:?}",
            onehot.shape(),
            probs.shape()
        )));
    }
    let b = probs.batch() as f64;
    let floor = T::of(PROB_FLOOR);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(probs.shape());
    for ((g, &y), &p) in grad
        .data_mut()
        .iter_mut()
        .zip(onehot.data())
        .zip(probs.data())
    {
        if y == T::zero() {
            continue;
        }
        let pc = p.max(floor);
        loss -= y.as_f64() * pc.as_f64().ln();
        if p > floor {
            *g = -y / (pc * T::of(b));
        }
    }
    Ok((loss / b, grad))
}

/// Gradient of mean cross-entropy with respect to the logits feeding a
/// softmax: `(ŷ − y)/B`.
pub fn softmax_cross_entropy_grad<T: Real>(
    onehot: &Tensor<T>,
    probs: &Tensor<T>,
) -> Result<Tensor<T>> {
    if onehot.shape() != probs.shape() {
        return Err(Error::Shape("cross-entropy shape mismatch".into()));
    }
    let inv_b = T::of(1.0 / probs.batch() as f64);
    let data = probs
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&p, &y)| (p - y) * inv_b)
        .collect();
    Tensor::from_vec(probs.shape(), data)
}

pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (row, &l) in t.data_mut().chunks_exact_mut(classes).zip(labels) {
        row[l] = T::one();
    }
    t
}
