//! Turns raw frame matrices into the two network views: the time-difference
//! image of the selected range window and its WRTFT image.

use serde::{Deserialize, Serialize};

use crate::augment::{augment_copy, expand_with_provenance, AugmentSpec};
use crate::dataformat::{LabeledSample, RadarFrameMatrix};
use crate::dsp::{crop, select_range_window, suppress_clutter, time_difference, RangeWindow};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Tensor, TensorDataset, View};
use crate::wrtft::{wrtft, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Range window size in bins.
    pub ws: usize,
    pub stft: StftConfig,
    /// Rescale each view of each sample to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ws: 40,
            stft: StftConfig::default(),
            standardize: true,
        }
    }
}

impl FeatureConfig {
    /// `[rows, cols]` of the TD and WRTFT images for `n` frames.
    pub fn shapes(&self, n: usize) -> Result<([usize; 2], [usize; 2])> {
        let (k, t) = self
            .stft
            .output_shape(n)
            .ok_or_else(|| Error::Shape(format!("{n} frames shorter than STFT segment")))?;
        if n < 2 {
            return Err(Error::Shape("need at least two frames".into()));
        }
        Ok(([self.ws, n - 1], [k, t]))
    }
}

/// Clutter-suppressed frames cropped to the most energetic window of the
/// differenced matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub window: RangeWindow,
    pub cropped: Matrix,
}

pub fn preprocess(frames: &RadarFrameMatrix, ws: usize) -> Result<Preprocessed> {
    let y = suppress_clutter(frames.matrix());
    let yd = time_difference(&y)?;
    let window = select_range_window(&yd, ws)?;
    Ok(Preprocessed {
        window,
        cropped: crop(&y, window)?,
    })
}

/// Both views of one cropped matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    pub td: Matrix,
    pub wrtft: Matrix,
}

impl Views {
    pub fn get(&self, view: View) -> &Matrix {
        match view {
            View::Td => &self.td,
            View::Wrtft => &self.wrtft,
        }
    }
}

pub fn standardize(x: &Matrix) -> Matrix {
    let n = x.as_slice().len() as f64;
    let mean = x.as_slice().iter().sum::<f64>() / n;
    let var = x.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 0.0 {
        x.map(|v| (v - mean) / sd)
    } else {
        x.map(|v| v - mean)
    }
}

pub fn views_of_cropped(cropped: &Matrix, cfg: &FeatureConfig) -> Result<Views> {
    let td = time_difference(cropped)?;
    let wr = wrtft(cropped, &cfg.stft)?.image;
    Ok(if cfg.standardize {
        Views {
            td: standardize(&td),
            wrtft: standardize(&wr),
        }
    } else {
        Views { td, wrtft: wr }
    })
}

/// Cropped samples (frames replaced by the ws×N window).
pub fn crop_samples(samples: &[LabeledSample], ws: usize) -> Result<Vec<LabeledSample>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = preprocess(&s.frames, ws)
                .map_err(|e| e.context(format!("preprocessing sample {i}")))?;
            Ok(LabeledSample {
                frames: RadarFrameMatrix::new(p.cropped)?,
                ..s.clone()
            })
        })
        .collect()
}

/// Network-ready features for a set of samples.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub views: Vec<Views>,
    pub labels: Vec<usize>,
    /// Index of the source (pre-augmentation) sample for every row.
    pub provenance: Vec<usize>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Packs the requested views into `[n, 1, h, w]` tensors.
    pub fn to_dataset(&self, views: &[View]) -> Result<TensorDataset<f32>> {
        let tensors = views
            .iter()
            .map(|&v| {
                let (h, w) = self
                    .views
                    .first()
                    .map(|x| x.get(v).shape())
                    .unwrap_or((0, 0));
                let mut data = Vec::with_capacity(self.len() * h * w);
                for x in &self.views {
                    let m = x.get(v);
                    if m.shape() != (h, w) {
                        return Err(Error::Shape("feature images differ in size".into()));
                    }
                    data.extend(m.as_slice().iter().map(|&f| f as f32));
                }
                Tensor::from_vec(&[self.len(), 1, h, w], data)
            })
            .collect::<Result<Vec<_>>>()?;
        TensorDataset::new(tensors, self.labels.clone())
    }
}

/// Featurizes already cropped samples, optionally expanding them with
/// augmentation first.
pub fn featurize_cropped(
    cropped: &[LabeledSample],
    cfg: &FeatureConfig,
    aug: Option<&AugmentSpec>,
) -> Result<FeatureSet> {
    let expanded: Vec<(usize, LabeledSample)> = match aug {
        Some(spec) => expand_with_provenance(cropped, spec)?,
        None => cropped.iter().cloned().enumerate().collect(),
    };
    let mut set = FeatureSet {
        views: Vec::with_capacity(expanded.len()),
        labels: Vec::with_capacity(expanded.len()),
        provenance: Vec::with_capacity(expanded.len()),
    };
    for (src, s) in expanded {
        let v = views_of_cropped(s.frames.matrix(), cfg)
            .map_err(|e| e.context(format!("featurizing sample {src}")))?;
        set.views.push(v);
        set.labels.push(s.label.index());
        set.provenance.push(src);
    }
    Ok(set)
}

/// Packs the requested views of cropped samples straight into f32 tensors,
/// following each sample with its augmented copies when `aug` is given.
/// Copies match `expand_with_provenance` on the same slice. Returns the
/// dataset and the source position of every row.
pub fn build_dataset(
    cropped: &[&LabeledSample],
    cfg: &FeatureConfig,
    aug: Option<&AugmentSpec>,
    views: &[View],
) -> Result<(TensorDataset<f32>, Vec<usize>)> {
    if let Some(spec) = aug {
        spec.validate()?;
    }
    let copies = 1 + aug.map_or(0, |a| a.combos.len());
    let rows = cropped.len() * copies;
    let mut data: Vec<Vec<f32>> = vec![Vec::new(); views.len()];
    let mut dims: Vec<(usize, usize)> = Vec::new();
    let mut labels = Vec::with_capacity(rows);
    let mut provenance = Vec::with_capacity(rows);
    for (i, s) in cropped.iter().enumerate() {
        for c in 0..copies {
            let x = match (c, aug) {
                (0, _) | (_, None) => s.frames.matrix().clone(),
                (_, Some(spec)) => augment_copy(s.frames.matrix(), i, c - 1, spec)?,
            };
            let v = views_of_cropped(&x, cfg)
                .map_err(|e| e.context(format!("featurizing sample {i}")))?;
            for (k, &view) in views.iter().enumerate() {
                let m = v.get(view);
                if dims.len() == k {
                    dims.push(m.shape());
                    data[k].reserve_exact(rows * m.as_slice().len());
                } else if dims[k] != m.shape() {
                    return Err(Error::Shape("feature images differ in size".into()));
                }
                data[k].extend(m.as_slice().iter().map(|&f| f as f32));
            }
            labels.push(s.label.index());
            provenance.push(i);
        }
    }
    if rows == 0 {
        return Err(Error::Empty("no samples to featurize".into()));
    }
    let tensors = data
        .into_iter()
        .zip(&dims)
        .map(|(d, &(h, w))| Tensor::from_vec(&[rows, 1, h, w], d))
        .collect::<Result<Vec<_>>>()?;
    Ok((TensorDataset::new(tensors, labels)?, provenance))
}
