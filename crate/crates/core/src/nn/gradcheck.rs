//! Central finite-difference checks of the hand-written backward passes,
//! run in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::softmax_rows;
use super::{build_model, cross_entropy, one_hot, softmax_cross_entropy_grad};
use super::{Architecture, Layer, LayerSpec, Mode, Model, ModelSpec, Tensor};
use crate::error::{Error, Result};

/// Relative-error tolerance for every probe.
pub const TOL: f64 = 1e-4;
/// Central-difference step. Rounding in an O(1) objective contributes about
/// 1e-11 absolute error at this step; curvature terms are smaller still.
const STEP: f64 = 1e-5;
/// Layer and loss gradients smaller than this are compared on an absolute
/// scale.
const FLOOR: f64 = 1e-6;
/// Whole networks accumulate more rounding in an O(1) loss, so their floor
/// is higher; below it the check is |analytic - numeric| < 1e-9.
const NET_FLOOR: f64 = 1e-5;
/// One-sided slopes differing by more than this fraction reveal a ReLU or
/// max-pool kink inside the probe interval. An undetected kink biases the
/// central difference by at most half this fraction, inside [`TOL`].
const KINK: f64 = TOL;
/// Largest fraction of probes that may be skipped as kinks.
pub const MAX_KINK_FRACTION: f64 = 0.1;
/// Coordinates probed per tensor per draw.
const PROBES: usize = 24;

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub draws: usize,
    pub probes: usize,
    /// Probes straddling a kink, left out of `max_rel_err`.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Where `max_rel_err` occurred.
    pub worst: String,
}

impl GradReport {
    fn new(draws: usize) -> Self {
        GradReport {
            draws,
            probes: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64, what: impl FnOnce() -> String) {
        self.probes += 1;
        let e = rel_err(analytic, numeric, floor);
        if e > self.max_rel_err || self.worst.is_empty() {
            self.max_rel_err = e;
            self.worst = format!("{}: analytic {analytic} numeric {numeric}", what());
        }
    }

    fn skip(&mut self) {
        self.probes += 1;
        self.skipped += 1;
    }

    pub fn passes(&self) -> bool {
        self.max_rel_err < TOL && self.skipped as f64 <= MAX_KINK_FRACTION * self.probes as f64
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Uniform magnitudes in [0.05, 1) with random sign, so ReLU kinks are not
/// straddled by layer-level probes.
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}

fn probes(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= PROBES {
        (0..len).collect()
    } else {
        (0..PROBES).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Scalar objective `sum r*f(x)` for a layer, with the dropout generator
/// re-seeded so every evaluation sees the same mask.
fn objective(
    layer: &mut Layer<f64>,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
    mode: Mode,
    mask_seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let y = layer.forward(x.clone(), mode, &mut rng)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Checks input and parameter gradients of one layer over `draws` random
/// batches, parameters and upstream gradients.
pub fn check_layer(
    spec: &LayerSpec,
    item_shape: &[usize],
    mode: Mode,
    seed: u64,
    draws: usize,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::new(draws);
    for draw in 0..draws {
        let batch = rng.gen_range(1..4);
        let (mut layer, out_shape) = Layer::<f64>::build(spec, item_shape, &mut rng)?;
        for (p, _) in layer.params_mut() {
            *p = random_tensor(p.shape(), &mut rng);
        }
        let mut in_shape = vec![batch];
        in_shape.extend_from_slice(item_shape);
        let mut y_shape = vec![batch];
        y_shape.extend_from_slice(&out_shape);
        let x = random_tensor(&in_shape, &mut rng);
        let r = random_tensor(&y_shape, &mut rng);
        let mask_seed = rng.gen();

        layer.zero_grad();
        let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
        layer.forward(x.clone(), mode, &mut mrng)?;
        let dx = layer.backward(r.clone())?;
        let grads: Vec<Tensor<f64>> = layer
            .params_mut()
            .into_iter()
            .map(|(_, g)| g.clone())
            .collect();

        for i in probes(x.len(), &mut rng) {
            probe(
                &mut rep,
                dx.data()[i],
                FLOOR,
                |d| {
                    let mut xp = x.clone();
                    xp.data_mut()[i] += d;
                    objective(&mut layer, &xp, &r, mode, mask_seed)
                },
                || format!("{spec:?} draw {draw} input {i}"),
            )?;
        }
        for (k, g) in grads.iter().enumerate() {
            for j in probes(g.len(), &mut rng) {
                let orig = layer.params()[k].data()[j];
                let res = probe(
                    &mut rep,
                    g.data()[j],
                    FLOOR,
                    |d| {
                        layer.params_mut()[k].0.data_mut()[j] = orig + d;
                        objective(&mut layer, &x, &r, mode, mask_seed)
                    },
                    || format!("{spec:?} draw {draw} param {k}[{j}]"),
                );
                layer.params_mut()[k].0.data_mut()[j] = orig;
                res?;
            }
        }
    }
    Ok(rep)
}

fn random_probs(b: usize, c: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let mut p: Vec<f64> = (0..b * c).map(|_| rng.gen_range(0.05..1.0)).collect();
    for row in p.chunks_exact_mut(c) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::from_vec(&[b, c], p).expect("shape matches length")
}

/// Cross-entropy gradient with respect to the probabilities.
pub fn check_cross_entropy(seed: u64, draws: usize) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::new(draws);
    for draw in 0..draws {
        let (b, c) = (rng.gen_range(1..5), rng.gen_range(2..6));
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let y = one_hot::<f64>(&labels, c);
        let p = random_probs(b, c, &mut rng);
        let (_, g) = cross_entropy(&y, &p)?;
        for i in 0..p.len() {
            let mut q = p.clone();
            q.data_mut()[i] += STEP;
            let lp = cross_entropy(&y, &q)?.0;
            q.data_mut()[i] -= 2.0 * STEP;
            let lm = cross_entropy(&y, &q)?.0;
            rep.record(g.data()[i], (lp - lm) / (2.0 * STEP), FLOOR, || {
                format!("cross-entropy draw {draw} [{i}]")
            });
        }
    }
    Ok(rep)
}

/// Fused softmax plus cross-entropy gradient with respect to the logits.
pub fn check_softmax_cross_entropy(seed: u64, draws: usize) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::new(draws);
    for draw in 0..draws {
        let (b, c) = (rng.gen_range(1..5), rng.gen_range(2..6));
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let y = one_hot::<f64>(&labels, c);
        let z = random_tensor(&[b, c], &mut rng);
        let loss = |z: &Tensor<f64>| -> Result<f64> {
            let mut p = z.clone();
            softmax_rows(&mut p);
            Ok(cross_entropy(&y, &p)?.0)
        };
        let mut p = z.clone();
        softmax_rows(&mut p);
        let g = softmax_cross_entropy_grad(&y, &p)?;
        for i in 0..z.len() {
            let mut q = z.clone();
            q.data_mut()[i] += STEP;
            let lp = loss(&q)?;
            q.data_mut()[i] -= 2.0 * STEP;
            let lm = loss(&q)?;
            rep.record(g.data()[i], (lp - lm) / (2.0 * STEP), FLOOR, || {
                format!("softmax-ce draw {draw} [{i}]")
            });
        }
    }
    Ok(rep)
}

/// Compares an analytic derivative with central differences of `f`, the
/// objective as a function of a coordinate offset. Probes whose one-sided
/// slopes disagree straddle a kink and are skipped.
fn probe(
    rep: &mut GradReport,
    analytic: f64,
    floor: f64,
    mut f: impl FnMut(f64) -> Result<f64>,
    what: impl FnOnce() -> String,
) -> Result<()> {
    let (f0, fp, fm) = (f(0.0)?, f(STEP)?, f(-STEP)?);
    let (dp, dm) = ((fp - f0) / STEP, (f0 - fm) / STEP);
    if (dp - dm).abs() > KINK * dp.abs().max(dm.abs()).max(floor) {
        rep.skip();
    } else {
        rep.record(analytic, (fp - fm) / (2.0 * STEP), floor, what);
    }
    Ok(())
}

/// A whole network on small images, including the concat and split between
/// branches and head.
pub fn check_model(arch: Architecture, mode: Mode, seed: u64, draws: usize) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::new(draws);
    for draw in 0..draws {
        let spec = ModelSpec {
            fusion_units: vec![12, 8],
            ..ModelSpec::new(arch, 4, [8, 27], [7, 7])
        };
        let mut model = build_model::<f64>(&spec, rng.gen())?;
        for (p, _) in model.params_mut() {
            let shape = p.shape().to_vec();
            let scale = if shape.len() == 1 { 0.1 } else { 0.5 };
            let t = random_tensor(&shape, &mut rng);
            *p = Tensor::from_vec(&shape, t.data().iter().map(|v| v * scale).collect())?;
        }
        let b = rng.gen_range(1..4);
        let mut inputs = Vec::new();
        for &v in arch.views() {
            let [h, w] = spec
                .input_shape(v)
                .ok_or_else(|| Error::InvalidConfig(format!("{arch:?} has no {v:?} input")))?;
            inputs.push(random_tensor(&[b, 1, h, w], &mut rng));
        }
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..4)).collect();
        let y = one_hot::<f64>(&labels, 4);
        let mask_seed: u64 = rng.gen();
        let loss = |m: &mut Model<f64>, inputs: &[Tensor<f64>]| -> Result<(f64, Tensor<f64>)> {
            let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
            let p = m.forward(inputs, mode, &mut r)?;
            cross_entropy(&y, &p)
        };

        model.zero_grad();
        let (_, gp) = loss(&mut model, &inputs)?;
        let dx = model.backward(gp)?;
        let grads: Vec<Tensor<f64>> = model
            .params_mut()
            .into_iter()
            .map(|(_, g)| g.clone())
            .collect();

        for (k, g) in grads.iter().enumerate() {
            for j in probes(g.len(), &mut rng) {
                let orig = model.params()[k].data()[j];
                let res = probe(
                    &mut rep,
                    g.data()[j],
                    NET_FLOOR,
                    |d| {
                        model.params_mut()[k].0.data_mut()[j] = orig + d;
                        Ok(loss(&mut model, &inputs)?.0)
                    },
                    || format!("{arch:?} draw {draw} param {k}[{j}]"),
                );
                model.params_mut()[k].0.data_mut()[j] = orig;
                res?;
            }
        }
        for (v, x) in inputs.iter().enumerate() {
            for i in probes(x.len(), &mut rng) {
                probe(
                    &mut rep,
                    dx[v].data()[i],
                    NET_FLOOR,
                    |d| {
                        let mut xs = inputs.clone();
                        xs[v].data_mut()[i] += d;
                        Ok(loss(&mut model, &xs)?.0)
                    },
                    || format!("{arch:?} draw {draw} input {v}[{i}]"),
                )?;
            }
        }
    }
    Ok(rep)
}
