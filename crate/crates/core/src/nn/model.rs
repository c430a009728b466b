//! The three classifier architectures: TD-CNN, WRTFT-CNN and the two-branch
//! fusion network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{Layer, LayerSpec, Mode, Padding};
use super::real::Real;
use super::tensor::{concat, split, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "TD_CNN")]
    TdCnn,
    #[serde(rename = "WRTFT_CNN")]
    WrtftCnn,
    #[serde(rename = "SPN")]
    Spn,
}

/// Which feature image a network branch consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Td,
    Wrtft,
}

impl Architecture {
    pub fn views(self) -> &'static [View] {
        match self {
            Architecture::TdCnn => &[View::Td],
            Architecture::WrtftCnn => &[View::Wrtft],
            Architecture::Spn => &[View::Td, View::Wrtft],
        }
    }
}

fn default_fusion_units() -> Vec<usize> {
    vec![128, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub num_classes: usize,
    /// `[rows, cols]` of the time-difference image.
    pub td_input_shape: Option<[usize; 2]>,
    /// `[freqs, frames]` of the WRTFT image.
    pub wrtft_input_shape: Option<[usize; 2]>,
    /// Hidden widths of the fusion head; dropout follows the first.
    #[serde(default = "default_fusion_units")]
    pub fusion_units: Vec<usize>,
}

impl ModelSpec {
    pub fn new(
        architecture: Architecture,
        num_classes: usize,
        td: [usize; 2],
        wrtft: [usize; 2],
    ) -> Self {
        let uses = |v| architecture.views().contains(&v);
        ModelSpec {
            architecture,
            num_classes,
            td_input_shape: uses(View::Td).then_some(td),
            wrtft_input_shape: uses(View::Wrtft).then_some(wrtft),
            fusion_units: default_fusion_units(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.num_classes, 4 | 5) {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be 4 or 5, got {}",
                self.num_classes
            )));
        }
        for &view in self.architecture.views() {
            let shape = self.input_shape(view).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{:?} requires a {view:?} input shape",
                    self.architecture
                ))
            })?;
            if shape.contains(&0) {
                return Err(Error::InvalidConfig(format!("empty {view:?} input shape")));
            }
        }
        if self.architecture == Architecture::Spn
            && (self.fusion_units.is_empty() || self.fusion_units.contains(&0))
        {
            return Err(Error::InvalidConfig(
                "fusion head needs positive hidden widths".into(),
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self, view: View) -> Option<[usize; 2]> {
        match view {
            View::Td => self.td_input_shape,
            View::Wrtft => self.wrtft_input_shape,
        }
    }
}

fn conv(filters: usize, kh: usize, kw: usize, padding: Padding) -> LayerSpec {
    LayerSpec::Conv2D {
        filters,
        kh,
        kw,
        padding,
    }
}

/// Three conv blocks of 16/32/32 filters (2×3 kernels, 2×3 pooling).
pub fn td_stack() -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for filters in [16, 32, 32] {
        layers.extend([
            conv(filters, 2, 3, Padding::Same),
            LayerSpec::ReLU,
            LayerSpec::SpatialDropout { p: 0.3 },
            LayerSpec::MaxPool2D { kh: 2, kw: 3 },
        ]);
    }
    layers.push(LayerSpec::Flatten);
    layers
}

/// Two conv blocks of 10/20 filters (2×2 kernels, 2×2 pooling).
pub fn wrtft_stack() -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for filters in [10, 20] {
        layers.extend([
            conv(filters, 2, 2, Padding::Valid),
            LayerSpec::ReLU,
            LayerSpec::SpatialDropout { p: 0.3 },
            LayerSpec::MaxPool2D { kh: 2, kw: 2 },
        ]);
    }
    layers.push(LayerSpec::Flatten);
    layers
}

fn head(spec: &ModelSpec) -> Vec<LayerSpec> {
    let dense = |units| LayerSpec::Dense { units };
    let drop = LayerSpec::Dropout { p: 0.5 };
    let mut layers = match spec.architecture {
        Architecture::TdCnn => vec![dense(64), LayerSpec::ReLU, drop],
        Architecture::WrtftCnn => {
            vec![dense(20), LayerSpec::ReLU, dense(10), LayerSpec::ReLU, drop]
        }
        Architecture::Spn => {
            let mut l = Vec::new();
            for (i, &u) in spec.fusion_units.iter().enumerate() {
                l.extend([dense(u), LayerSpec::ReLU]);
                if i == 0 {
                    l.push(drop.clone());
                }
            }
            l
        }
    };
    layers.extend([dense(spec.num_classes), LayerSpec::Softmax]);
    layers
}

#[derive(Debug, Clone)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn build(
        specs: &[LayerSpec],
        input: &[usize],
        rng: &mut impl Rng,
    ) -> Result<(Self, Vec<usize>)> {
        let mut shape = input.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            let (layer, out) = Layer::build(s, &shape, rng)
                .map_err(|e| e.context(format!("layer {i} ({s:?}) on input {shape:?}")))?;
            layers.push(layer);
            shape = out;
        }
        Ok((Sequential { layers }, shape))
    }

    pub fn forward(
        &mut self,
        mut x: Tensor<T>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Tensor<T>> {
        for l in &mut self.layers {
            x = l.forward(x, mode, rng)?;
        }
        Ok(x)
    }

    /// Backpropagates through every layer except the final `skip_last`.
    fn backward_through(&mut self, mut g: Tensor<T>, skip_last: usize) -> Result<Tensor<T>> {
        let n = self.layers.len() - skip_last;
        for l in self.layers[..n].iter_mut().rev() {
            g = l.backward(g)?;
        }
        Ok(g)
    }

    pub fn backward(&mut self, g: Tensor<T>) -> Result<Tensor<T>> {
        self.backward_through(g, 0)
    }
}

/// A network: one convolutional branch per input view, concatenated and fed
/// to a dense head that ends in a softmax.
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    branches: Vec<Sequential<T>>,
    widths: Vec<usize>,
    head: Sequential<T>,
}

pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branches = Vec::new();
    let mut widths = Vec::new();
    for &view in spec.architecture.views() {
        let [h, w] = spec.input_shape(view).expect("validated");
        let stack = match view {
            View::Td => td_stack(),
            View::Wrtft => wrtft_stack(),
        };
        let (seq, out) = Sequential::build(&stack, &[1, h, w], &mut rng).map_err(|e| {
            e.context(format!(
                "{view:?} input {h}x{w} too small for the conv stack"
            ))
        })?;
        branches.push(seq);
        widths.push(out[0]);
    }
    let fused: usize = widths.iter().sum();
    let (head, out) = Sequential::build(&head(spec), &[fused], &mut rng)?;
    debug_assert_eq!(out, vec![spec.num_classes]);
    Ok(Model {
        spec: spec.clone(),
        branches,
        widths,
        head,
    })
}

impl<T: Real> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn views(&self) -> &'static [View] {
        self.spec.architecture.views()
    }

    /// Flattened feature width of each branch.
    pub fn branch_widths(&self) -> &[usize] {
        &self.widths
    }

    /// Class probabilities `[batch, classes]`. `inputs` holds one
    /// `[batch, 1, h, w]` tensor per view, in [`Model::views`] order.
    pub fn forward(
        &mut self,
        inputs: &[Tensor<T>],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Tensor<T>> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "{:?} takes {} inputs, got {}",
                self.spec.architecture,
                self.branches.len(),
                inputs.len()
            )));
        }
        let batch = inputs[0].batch();
        let mut feats = Vec::with_capacity(inputs.len());
        for (b, x) in self.branches.iter_mut().zip(inputs) {
            if x.batch() != batch {
                return Err(Error::Shape("inputs disagree on batch size".into()));
            }
            feats.push(b.forward(x.clone(), mode, rng)?);
        }
        let fused = if feats.len() == 1 {
            feats.pop().expect("one")
        } else {
            concat(&feats)?
        };
        self.head.forward(fused, mode, rng)
    }

    fn backward_branches(&mut self, g: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let parts = if self.branches.len() == 1 {
            vec![g]
        } else {
            split(&g, &self.widths)?
        };
        self.branches
            .iter_mut()
            .zip(parts)
            .map(|(b, g)| b.backward(g))
            .collect()
    }

    /// Backpropagates a gradient with respect to the output probabilities;
    /// returns gradients with respect to each input.
    pub fn backward(&mut self, grad_probs: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let g = self.head.backward(grad_probs)?;
        self.backward_branches(g)
    }

    /// Like [`Model::backward`] but starting from the gradient with respect
    /// to the pre-softmax logits.
    pub fn backward_from_logits(&mut self, grad_logits: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let g = self.head.backward_through(grad_logits, 1)?;
        self.backward_branches(g)
    }

    /// Input gradients are only needed for gradient checks; training turns
    /// them off to save the first convolution's backward data pass.
    pub fn set_input_grads(&mut self, enabled: bool) {
        for b in &mut self.branches {
            if let Some(Layer::Conv2d(c)) = b.layers.first_mut() {
                c.skip_input_grad = !enabled;
            }
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.branches
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|s| s.layers.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.branches
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|s| s.layers.iter_mut())
    }

    /// Parameter tensors in declaration order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        self.layers_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(Layer::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.params()
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    pub fn load_flat_params(&mut self, values: &[T]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: values.len(),
            });
        }
        let mut off = 0;
        for (p, _) in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
