//! Mini-batch Adam training with early stopping on validation loss.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix_seed;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::layers::Mode;
use super::loss::{cross_entropy, one_hot, softmax_cross_entropy_grad};
use super::model::Model;
use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 16,
            max_epochs: 300,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig(
                "learning rate, batch size and epoch limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Network inputs for a set of samples: one `[n, 1, h, w]` tensor per view
/// plus class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset<T> {
    pub views: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> TensorDataset<T> {
    pub fn new(views: Vec<Tensor<T>>, labels: Vec<usize>) -> Result<Self> {
        if views.is_empty()
            || views
                .iter()
                .any(|v| v.shape().len() != 4 || v.batch() != labels.len())
        {
            return Err(Error::Shape(
                "every view must be [n, 1, h, w] with one row per label".into(),
            ));
        }
        Ok(TensorDataset { views, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the given samples into fresh batch tensors.
    pub fn gather(&self, idx: &[usize]) -> Vec<Tensor<T>> {
        self.views
            .iter()
            .map(|v| {
                let item = v.item_len();
                let mut data = Vec::with_capacity(idx.len() * item);
                for &i in idx {
                    data.extend_from_slice(&v.data()[i * item..(i + 1) * item]);
                }
                let mut shape = v.shape().to_vec();
                shape[0] = idx.len();
                Tensor::from_vec(&shape, data).expect("sized")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,val_acc")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_acc
            )?;
        }
        Ok(())
    }
}

pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &TensorDataset<T>,
    val_set: &TensorDataset<T>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let classes = model.spec().num_classes;
    if let Some(&bad) = train_set
        .labels
        .iter()
        .chain(&val_set.labels)
        .find(|&&l| l >= classes)
    {
        return Err(Error::InvalidLabel(format!(
            "class index {bad} for a {classes}-class model"
        )));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 1]));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2]));
    model.set_input_grads(false);
    let mut states: Vec<AdamState<T>> = model
        .params()
        .iter()
        .map(|p| AdamState::new(p.len()))
        .collect();
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_loss = f64::INFINITY;
    let mut best_params = model.flat_params();
    let mut wait = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs = train_set.gather(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let y = one_hot::<T>(&labels, classes);
            model.zero_grad();
            let probs = model.forward(&inputs, Mode::Train, &mut dropout_rng)?;
            let (loss, _) = cross_entropy(&y, &probs)?;
            if !loss.is_finite() {
                return Err(
                    Error::NonFinite { row: epoch, col: 0 }.context("training loss diverged")
                );
            }
            loss_sum += loss * batch.len() as f64;
            model.backward_from_logits(softmax_cross_entropy_grad(&y, &probs)?)?;
            step += 1;
            for ((p, g), s) in model.params_mut().into_iter().zip(&mut states) {
                adam_step(p.data_mut(), g.data(), s, step, &adam);
            }
        }
        let (val_loss, val_acc) = evaluate(model, val_set, cfg.batch_size)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_acc,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_params = model.flat_params();
            history.best_epoch = epoch;
            wait = 0;
        } else {
            wait += 1;
            if wait > cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.load_flat_params(&best_params)?;
    model.set_input_grads(true);
    Ok(history)
}

/// Class probabilities for every sample, computed in inference mode.
pub fn predict_proba<T: Real>(
    model: &mut Model<T>,
    data: &TensorDataset<T>,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    // Inference never draws from the generator; it only satisfies the signature.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for batch in idx.chunks(batch_size.max(1)) {
        let probs = model.forward(&data.gather(batch), Mode::Eval, &mut rng)?;
        let c = probs.item_len();
        out.extend(
            probs
                .data()
                .chunks_exact(c)
                .map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
        );
    }
    Ok(out)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict<T: Real>(
    model: &mut Model<T>,
    data: &TensorDataset<T>,
    batch_size: usize,
) -> Result<Vec<usize>> {
    Ok(predict_proba(model, data, batch_size)?
        .iter()
        .map(|r| argmax(r))
        .collect())
}

/// Mean cross-entropy and accuracy (fraction) on `data`.
pub fn evaluate<T: Real>(
    model: &mut Model<T>,
    data: &TensorDataset<T>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let probs = predict_proba(model, data, batch_size)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, &l) in probs.iter().zip(&data.labels) {
        loss -= p[l].max(super::loss::PROB_FLOOR).ln();
        correct += usize::from(argmax(p) == l);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}
