//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`;
//! `backward` consumes the upstream gradient, accumulates parameter
//! gradients and returns the gradient with respect to the layer input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::real::{gemm, MatRef, Real};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; output shrinks by kernel − 1.
    Valid,
    /// Zero padding keeping the spatial size (extra row/column at the end
    /// for even kernels).
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerSpec {
    Conv2D {
        filters: usize,
        kh: usize,
        kw: usize,
        padding: Padding,
    },
    MaxPool2D {
        kh: usize,
        kw: usize,
    },
    SpatialDropout {
        p: f64,
    },
    Dropout {
        p: f64,
    },
    Dense {
        units: usize,
    },
    ReLU,
    Softmax,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    MaxPool2d(MaxPool2d),
    Dropout(Dropout<T>),
    Dense(Dense<T>),
    Relu(Relu),
    Softmax(Softmax<T>),
    Flatten(Flatten),
}

/// Draws Glorot-uniform weights: U(−√(6/(fan_in + fan_out)), √(6/(fan_in + fan_out))).
fn glorot_uniform<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("sized")
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "dropout probability {p} not in [0, 1)"
        )));
    }
    Ok(())
}

impl<T: Real> Layer<T> {
    /// Instantiates `spec` for per-item input shape `input` ([C, H, W] or
    /// [F]); returns the layer and its per-item output shape.
    pub fn build(
        spec: &LayerSpec,
        input: &[usize],
        rng: &mut impl Rng,
    ) -> Result<(Layer<T>, Vec<usize>)> {
        let need3 = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                &[c, h, w] => Ok((c, h, w)),
                _ => Err(Error::Shape(format!(
                    "{what} expects [C, H, W] input, got {input:?}"
                ))),
            }
        };
        Ok(match *spec {
            LayerSpec::Conv2D {
                filters,
                kh,
                kw,
                padding,
            } => {
                let (c, h, w) = need3("Conv2D")?;
                if filters == 0 || kh == 0 || kw == 0 {
                    return Err(Error::InvalidConfig(
                        "conv filters and kernel must be positive".into(),
                    ));
                }
                let conv = Conv2d::new(c, filters, kh, kw, padding, rng);
                let (ho, wo) = conv.output_hw(h, w)?;
                (Layer::Conv2d(conv), vec![filters, ho, wo])
            }
            LayerSpec::MaxPool2D { kh, kw } => {
                let (c, h, w) = need3("MaxPool2D")?;
                let pool = MaxPool2d::new(kh, kw);
                let (ho, wo) = pool.output_hw(h, w)?;
                (Layer::MaxPool2d(pool), vec![c, ho, wo])
            }
            LayerSpec::SpatialDropout { p } => {
                need3("SpatialDropout")?;
                check_p(p)?;
                (Layer::Dropout(Dropout::new(p, true)), input.to_vec())
            }
            LayerSpec::Dropout { p } => {
                check_p(p)?;
                (Layer::Dropout(Dropout::new(p, false)), input.to_vec())
            }
            LayerSpec::Dense { units } => {
                let &[f] = input else {
                    return Err(Error::Shape(format!(
                        "Dense expects flat input, got {input:?}"
                    )));
                };
                if units == 0 {
                    return Err(Error::InvalidConfig("dense units must be positive".into()));
                }
                (Layer::Dense(Dense::new(f, units, rng)), vec![units])
            }
            LayerSpec::ReLU => (Layer::Relu(Relu::default()), input.to_vec()),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::Shape("Softmax expects flat input".into()));
                }
                (Layer::Softmax(Softmax::default()), input.to_vec())
            }
            LayerSpec::Flatten => (
                Layer::Flatten(Flatten::default()),
                vec![input.iter().product()],
            ),
        })
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode, rng: &mut impl Rng) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode, rng),
            Layer::Dense(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Softmax(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::MaxPool2d(l) => l.backward(grad),
            Layer::Dropout(l) => Ok(l.backward(grad)),
            Layer::Dense(l) => l.backward(grad),
            Layer::Relu(l) => Ok(l.backward(grad)),
            Layer::Softmax(l) => Ok(l.backward(grad)),
            Layer::Flatten(l) => l.backward(grad),
        }
    }

    /// (value, gradient) pairs in declaration order: weight then bias.
    pub fn params_mut(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![
                (&mut l.weight, &mut l.grad_weight),
                (&mut l.bias, &mut l.grad_bias),
            ],
            Layer::Dense(l) => vec![
                (&mut l.weight, &mut l.grad_weight),
                (&mut l.bias, &mut l.grad_bias),
            ],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, g) in self.params_mut() {
            g.fill(T::zero());
        }
    }
}

fn expect_rank<T: Real>(x: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if x.shape().len() != rank {
        return Err(Error::Shape(format!(
            "{what} expects rank-{rank} input, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// 2-D cross-correlation, stride 1, computed as im2col followed by GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub padding: Padding,
    /// `[out_channels, in_channels·kh·kw]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    /// When set, `backward` returns zeros instead of the input gradient.
    pub skip_input_grad: bool,
    cols: Vec<T>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kh: usize,
        kw: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let k = in_c * kh * kw;
        Conv2d {
            in_channels: in_c,
            out_channels: out_c,
            kh,
            kw,
            padding,
            weight: glorot_uniform(&[out_c, k], k, out_c * kh * kw, rng),
            bias: Tensor::zeros(&[out_c]),
            grad_weight: Tensor::zeros(&[out_c, k]),
            grad_bias: Tensor::zeros(&[out_c]),
            skip_input_grad: false,
            cols: Vec::new(),
            in_shape: [0; 4],
            out_hw: (0, 0),
        }
    }

    fn pads(&self) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((self.kh - 1) / 2, (self.kw - 1) / 2),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Same => Ok((h, w)),
            Padding::Valid if h >= self.kh && w >= self.kw => {
                Ok((h - self.kh + 1, w - self.kw + 1))
            }
            Padding::Valid => Err(Error::Shape(format!(
                "{}x{} kernel larger than {h}x{w} input",
                self.kh, self.kw
            ))),
        }
    }

    fn k(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        expect_rank(&x, 4, "Conv2D")?;
        let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "Conv2D expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let (pt, pl) = self.pads();
        let (k, p) = (self.k(), ho * wo);
        self.cols.clear();
        self.cols.resize(b * k * p, T::zero());
        let mut out = Tensor::zeros(&[b, self.out_channels, ho, wo]);
        let item_in = c * h * w;
        let item_out = self.out_channels * p;
        for bi in 0..b {
            let col = &mut self.cols[bi * k * p..(bi + 1) * k * p];
            im2col(
                &x.data()[bi * item_in..(bi + 1) * item_in],
                [c, h, w],
                [self.kh, self.kw],
                [pt, pl],
                [ho, wo],
                col,
            );
            let y = &mut out.data_mut()[bi * item_out..(bi + 1) * item_out];
            gemm(
                MatRef::new(self.weight.data(), self.out_channels, k),
                MatRef::new(col, k, p),
                T::zero(),
                y,
            );
            for (oc, chunk) in y.chunks_exact_mut(p).enumerate() {
                let bias = self.bias.data()[oc];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.in_shape = [b, c, h, w];
        self.out_hw = (ho, wo);
        Ok(out)
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = self.in_shape;
        let (ho, wo) = self.out_hw;
        if dy.shape() != [b, self.out_channels, ho, wo] {
            return Err(Error::Shape(
                "Conv2D gradient shape differs from its output".into(),
            ));
        }
        let (pt, pl) = self.pads();
        let (k, p) = (self.k(), ho * wo);
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        let mut dcol = vec![T::zero(); k * p];
        let item_in = c * h * w;
        let item_out = self.out_channels * p;
        for bi in 0..b {
            let g = &dy.data()[bi * item_out..(bi + 1) * item_out];
            let col = &self.cols[bi * k * p..(bi + 1) * k * p];
            gemm(
                MatRef::new(g, self.out_channels, p),
                MatRef::new(col, k, p).t(),
                T::one(),
                self.grad_weight.data_mut(),
            );
            for (oc, chunk) in g.chunks_exact(p).enumerate() {
                self.grad_bias.data_mut()[oc] += chunk.iter().copied().sum::<T>();
            }
            if self.skip_input_grad {
                continue;
            }
            gemm(
                MatRef::new(self.weight.data(), self.out_channels, k).t(),
                MatRef::new(g, self.out_channels, p),
                T::zero(),
                &mut dcol,
            );
            col2im(
                &dcol,
                [c, h, w],
                [self.kh, self.kw],
                [pt, pl],
                [ho, wo],
                &mut dx.data_mut()[bi * item_in..(bi + 1) * item_in],
            );
        }
        Ok(dx)
    }
}

/// Range of output columns `ox` whose source column `ox + j − pl` lies in `[0, w)`.
#[inline]
fn valid_span(j: usize, pl: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pl.saturating_sub(j);
    let hi = (w + pl).saturating_sub(j).min(wo);
    (lo, hi.max(lo))
}

fn im2col<T: Real>(
    x: &[T],
    [c_in, h, w]: [usize; 3],
    [kh, kw]: [usize; 2],
    [pt, pl]: [usize; 2],
    [ho, wo]: [usize; 2],
    col: &mut [T],
) {
    let p = ho * wo;
    for c in 0..c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let r = (c * kh + i) * kw + j;
                let row = &mut col[r * p..(r + 1) * p];
                let (lo, hi) = valid_span(j, pl, w, wo);
                for oy in 0..ho {
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let iy = (oy + i) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi > lo {
                        let s0 = lo + j - pl;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(
    col: &[T],
    [c_in, h, w]: [usize; 3],
    [kh, kw]: [usize; 2],
    [pt, pl]: [usize; 2],
    [ho, wo]: [usize; 2],
    dx: &mut [T],
) {
    let p = ho * wo;
    for c in 0..c_in {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let r = (c * kh + i) * kw + j;
                let row = &col[r * p..(r + 1) * p];
                let (lo, hi) = valid_span(j, pl, w, wo);
                if hi <= lo {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy + i) as isize - pt as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let s0 = lo + j - pl;
                    for (d, &g) in dst[s0..s0 + (hi - lo)]
                        .iter_mut()
                        .zip(&row[oy * wo + lo..oy * wo + hi])
                    {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// whole window are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kh: usize,
    pub kw: usize,
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

impl MaxPool2d {
    pub fn new(kh: usize, kw: usize) -> Self {
        MaxPool2d {
            kh,
            kw,
            argmax: Vec::new(),
            in_shape: [0; 4],
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kh == 0 || self.kw == 0 || h < self.kh || w < self.kw {
            return Err(Error::Shape(format!(
                "{}x{} pool does not fit {h}x{w} input",
                self.kh, self.kw
            )));
        }
        Ok((h / self.kh, w / self.kw))
    }

    pub fn forward<T: Real>(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        expect_rank(&x, 4, "MaxPool2D")?;
        let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (ho, wo) = self.output_hw(h, w)?;
        let (kh, kw) = (self.kh, self.kw);
        let mut out = Tensor::zeros(&[b, c, ho, wo]);
        self.argmax.clear();
        self.argmax.resize(b * c * ho * wo, 0);
        let src = x.data();
        let mut best = vec![T::zero(); wo];
        for (plane, (dst, arg)) in out
            .data_mut()
            .chunks_exact_mut(ho * wo)
            .zip(self.argmax.chunks_exact_mut(ho * wo))
            .enumerate()
        {
            let base = plane * h * w;
            for oy in 0..ho {
                let arg = &mut arg[oy * wo..(oy + 1) * wo];
                best.fill(T::neg_infinity());
                for i in 0..kh {
                    let row0 = base + (oy * kh + i) * w;
                    let row = &src[row0..row0 + wo * kw];
                    for (ox, win) in row.chunks_exact(kw).enumerate() {
                        let (mut b, mut a) = (best[ox], arg[ox]);
                        for (j, &v) in win.iter().enumerate() {
                            // Strict comparison keeps the first maximum.
                            let gt = v > b;
                            b = if gt { v } else { b };
                            a = if gt { row0 + ox * kw + j } else { a };
                        }
                        best[ox] = b;
                        arg[ox] = a;
                    }
                }
                dst[oy * wo..(oy + 1) * wo].copy_from_slice(&best);
            }
        }
        self.in_shape = [b, c, h, w];
        Ok(out)
    }

    pub fn backward<T: Real>(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        if dy.len() != self.argmax.len() {
            return Err(Error::Shape(
                "MaxPool2D gradient shape differs from its output".into(),
            ));
        }
        let mut dx = Tensor::zeros(&self.in_shape);
        let d = dx.data_mut();
        for (&idx, &g) in self.argmax.iter().zip(dy.data()) {
            d[idx] += g;
        }
        Ok(dx)
    }
}

/// Inverted dropout. With `spatial` set, whole channels of a
/// `[batch, channels, h, w]` activation are dropped together.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub p: f64,
    pub spatial: bool,
    /// Multiplier per group (element or channel) from the last training pass.
    mask: Option<(usize, Vec<T>)>,
}

impl<T: Real> Dropout<T> {
    pub fn new(p: f64, spatial: bool) -> Self {
        Dropout {
            p,
            spatial,
            mask: None,
        }
    }

    fn apply(data: &mut [T], group: usize, mask: &[T]) {
        for (chunk, &m) in data.chunks_exact_mut(group).zip(mask) {
            chunk.iter_mut().for_each(|v| *v *= m);
        }
    }

    pub fn forward(
        &mut self,
        mut x: Tensor<T>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Tensor<T>> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let group = if self.spatial {
            expect_rank(&x, 4, "SpatialDropout")?;
            x.shape()[2] * x.shape()[3]
        } else {
            1
        };
        let mask: Vec<T> = (0..x.len() / group.max(1))
            .map(|_| {
                if rng.gen::<f64>() < self.p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Self::apply(x.data_mut(), group.max(1), &mask);
        self.mask = Some((group.max(1), mask));
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Tensor<T> {
        if let Some((group, mask)) = &self.mask {
            Self::apply(dy.data_mut(), *group, mask);
        }
        dy
    }
}

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        Dense {
            in_features: in_f,
            out_features: out_f,
            weight: glorot_uniform(&[out_f, in_f], in_f, out_f, rng),
            bias: Tensor::zeros(&[out_f]),
            grad_weight: Tensor::zeros(&[out_f, in_f]),
            grad_bias: Tensor::zeros(&[out_f]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        expect_rank(&x, 2, "Dense")?;
        if x.shape()[1] != self.in_features {
            return Err(Error::Shape(format!(
                "Dense expects {} features, got {}",
                self.in_features,
                x.shape()[1]
            )));
        }
        let b = x.batch();
        let mut y = Tensor::zeros(&[b, self.out_features]);
        gemm(
            MatRef::new(x.data(), b, self.in_features),
            MatRef::new(self.weight.data(), self.out_features, self.in_features).t(),
            T::zero(),
            y.data_mut(),
        );
        for row in y.data_mut().chunks_exact_mut(self.out_features) {
            for (v, &bias) in row.iter_mut().zip(self.bias.data()) {
                *v += bias;
            }
        }
        self.input = Some(x);
        Ok(y)
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Shape("Dense backward before forward".into()))?;
        let b = x.batch();
        if dy.shape() != [b, self.out_features] {
            return Err(Error::Shape(
                "Dense gradient shape differs from its output".into(),
            ));
        }
        gemm(
            MatRef::new(dy.data(), b, self.out_features).t(),
            MatRef::new(x.data(), b, self.in_features),
            T::one(),
            self.grad_weight.data_mut(),
        );
        for row in dy.data().chunks_exact(self.out_features) {
            for (g, &d) in self.grad_bias.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[b, self.in_features]);
        gemm(
            MatRef::new(dy.data(), b, self.out_features),
            MatRef::new(self.weight.data(), self.out_features, self.in_features),
            T::zero(),
            dx.data_mut(),
        );
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    active: Vec<u8>,
}

impl Relu {
    pub fn forward<T: Real>(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        self.active.clear();
        self.active
            .extend(x.data().iter().map(|&v| u8::from(v > T::zero())));
        for v in x.data_mut() {
            *v = v.max(T::zero());
        }
        x
    }

    pub fn backward<T: Real>(&mut self, mut dy: Tensor<T>) -> Tensor<T> {
        for (g, &on) in dy.data_mut().iter_mut().zip(&self.active) {
            *g = if on != 0 { *g } else { T::zero() };
        }
        dy
    }
}

/// Row-wise softmax over `[batch, classes]`.
#[derive(Debug, Clone, Default)]
pub struct Softmax<T> {
    output: Option<Tensor<T>>,
}

pub fn softmax_rows<T: Real>(x: &mut Tensor<T>) {
    let c = x.item_len();
    for row in x.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

impl<T: Real> Softmax<T> {
    pub fn forward(&mut self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        expect_rank(&x, 2, "Softmax")?;
        softmax_rows(&mut x);
        self.output = Some(x.clone());
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Tensor<T> {
        let y = self
            .output
            .as_ref()
            .expect("Softmax backward before forward");
        let c = y.item_len();
        for (g, p) in dy
            .data_mut()
            .chunks_exact_mut(c)
            .zip(y.data().chunks_exact(c))
        {
            let dot: T = g.iter().zip(p).map(|(&a, &b)| a * b).sum();
            for (gi, &pi) in g.iter_mut().zip(p) {
                *gi = pi * (*gi - dot);
            }
        }
        dy
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Vec<usize>,
}

impl Flatten {
    pub fn forward<T: Real>(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.in_shape = x.shape().to_vec();
        let (b, f) = (x.batch(), x.item_len());
        x.reshape(&[b, f])
    }

    pub fn backward<T: Real>(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        dy.reshape(&self.in_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut conv = Conv2d::<f64>::new(2, 2, 1, 1, Padding::Valid, &mut rng());
        conv.weight = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(conv.forward(x.clone()).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_sums() {
        let mut conv = Conv2d::<f64>::new(1, 1, 2, 2, Padding::Valid, &mut rng());
        conv.weight.fill(1.0);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn same_padding_pads_after_for_even_kernels() {
        let mut conv = Conv2d::<f64>::new(1, 1, 2, 3, Padding::Same, &mut rng());
        conv.weight.fill(1.0);
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = conv.forward(x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 3]);
        // rows: (0,1) and (1, pad); columns centered with one pad each side
        assert_eq!(y.data(), &[12.0, 21.0, 16.0, 9.0, 15.0, 11.0]);
    }

    #[test]
    fn oversized_kernel_rejected() {
        let spec = LayerSpec::Conv2D {
            filters: 2,
            kh: 3,
            kw: 3,
            padding: Padding::Valid,
        };
        assert!(Layer::<f32>::build(&spec, &[1, 2, 5], &mut rng()).is_err());
    }

    #[test]
    fn pool_shapes_and_constants() {
        let mut pool = MaxPool2d::new(2, 3);
        assert_eq!(pool.output_hw(40, 159).unwrap(), (20, 53));
        let x = Tensor::<f32>::from_vec(&[1, 1, 4, 7], vec![2.5; 28]).unwrap();
        let y = pool.forward(x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        assert!(pool.output_hw(1, 7).is_err());
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let mut pool = MaxPool2d::new(2, 2);
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 3], vec![1.0, 5.0, 9.0, 3.0, 2.0, 0.0]).unwrap();
        let y = pool.forward(x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let dx = pool
            .backward(Tensor::from_vec(&[1, 1, 1, 1], vec![7.0]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[0.0, 7.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut s = Softmax::<f64>::default();
        let y = s.forward(Tensor::zeros(&[1, 4])).unwrap();
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn relu_examples() {
        let mut r = Relu::default();
        let y = r.forward(Tensor::<f32>::from_vec(&[1, 3], vec![-2.0, 0.0, 3.5]).unwrap());
        assert_eq!(y.data(), &[0.0, 0.0, 3.5]);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut d = Dropout::new(0.0, false);
        assert_eq!(d.forward(x.clone(), Mode::Train, &mut rng()).unwrap(), x);
        let mut d = Dropout::new(0.5, false);
        assert_eq!(d.forward(x.clone(), Mode::Eval, &mut rng()).unwrap(), x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let draws = 10_000;
        for spatial in [false, true] {
            let mut d = Dropout::<f64>::new(0.3, spatial);
            let mut r = rng();
            let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
                .unwrap();
            let mut acc = vec![0.0; 8];
            for _ in 0..draws {
                let y = d.forward(x.clone(), Mode::Train, &mut r).unwrap();
                for (a, v) in acc.iter_mut().zip(y.data()) {
                    *a += v;
                }
            }
            for (a, v) in acc.iter().zip(x.data()) {
                assert!((a / draws as f64 - v).abs() / v < 0.02, "spatial={spatial}");
            }
        }
    }

    #[test]
    fn spatial_dropout_drops_whole_channels() {
        let mut d = Dropout::<f64>::new(0.5, true);
        let x = Tensor::from_vec(&[4, 8, 3, 3], vec![1.0; 288]).unwrap();
        let y = d.forward(x, Mode::Train, &mut rng()).unwrap();
        for ch in y.data().chunks_exact(9) {
            assert!(ch.iter().all(|&v| v == ch[0]));
        }
        assert!(y.data().iter().any(|&v| v == 0.0));
        assert!(y.data().iter().any(|&v| v == 2.0));
    }

    #[test]
    fn invalid_dropout_probability() {
        assert!(Layer::<f32>::build(&LayerSpec::Dropout { p: 1.0 }, &[4], &mut rng()).is_err());
    }
}
