//! Time-series augmentation of cropped frame matrices: time shift (TS),
//! range shift (RS), time warping (TW) and magnitude warping (MW).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataformat::{LabeledSample, RadarFrameMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::mix_seed;
use crate::spline::CubicSpline;

pub const MAX_WARP_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AugOp {
    Ts,
    Rs,
    Tw,
    Mw,
}

impl AugOp {
    /// Fixed composition order.
    pub const ORDER: [AugOp; 4] = [AugOp::Ts, AugOp::Rs, AugOp::Tw, AugOp::Mw];
}

/// All 15 non-empty subsets of the four operators, each in composition order.
pub fn all_combos() -> Vec<Vec<AugOp>> {
    (1u8..16)
        .map(|mask| {
            AugOp::ORDER
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &op)| op)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub ts_shifts: Vec<i32>,
    pub rs_shifts: Vec<i32>,
    pub tw_sigma: f64,
    pub mw_sigma: f64,
    pub knots: usize,
    pub combos: Vec<Vec<AugOp>>,
    pub rng_seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            ts_shifts: vec![-10, -5, 5, 10],
            rs_shifts: vec![2, 4],
            tw_sigma: 0.4,
            mw_sigma: 0.4,
            knots: 4,
            combos: all_combos(),
            rng_seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.tw_sigma >= 0.0 && self.mw_sigma >= 0.0) {
            return bad("warp sigmas must be non-negative");
        }
        if self.knots == 0 {
            return bad("knots must be at least 1");
        }
        for combo in &self.combos {
            if combo.is_empty() {
                return bad("augmentation combos must be non-empty");
            }
            if combo.contains(&AugOp::Ts) && self.ts_shifts.is_empty() {
                return bad("TS requested without shift values");
            }
            if combo.contains(&AugOp::Rs) && self.rs_shifts.is_empty() {
                return bad("RS requested without shift values");
            }
        }
        Ok(())
    }
}

/// Shifts columns right by `shift` (left if negative), zero-filling.
pub fn time_shift(x: &Matrix, shift: i32) -> Result<Matrix> {
    let (rows, cols) = x.shape();
    if shift.unsigned_abs() as usize >= cols {
        return Err(Error::InvalidConfig(format!(
            "time shift {shift} not smaller than {cols} frames"
        )));
    }
    let s = shift.unsigned_abs() as usize;
    let mut out = Matrix::zeros(rows, cols);
    for m in 0..rows {
        let src = x.row(m);
        let dst = out.row_mut(m);
        if shift >= 0 {
            dst[s..].copy_from_slice(&src[..cols - s]);
        } else {
            dst[..cols - s].copy_from_slice(&src[s..]);
        }
    }
    Ok(out)
}

/// Shifts rows up by `shift` (`out[m] = x[m + shift]`; down if negative),
/// zero-filling the vacated rows.
pub fn range_shift(x: &Matrix, shift: i32) -> Result<Matrix> {
    let (rows, cols) = x.shape();
    if shift.unsigned_abs() as usize >= rows {
        return Err(Error::InvalidConfig(format!(
            "range shift {shift} not smaller than {rows} rows"
        )));
    }
    let s = shift.unsigned_abs() as usize;
    let mut out = Matrix::zeros(rows, cols);
    for m in 0..rows - s {
        let (dst, src) = if shift >= 0 { (m, m + s) } else { (m + s, m) };
        out.row_mut(dst).copy_from_slice(x.row(src));
    }
    Ok(out)
}

/// Smooth random curve of length `n` around one: a cubic spline through
/// `knots + 2` evenly spaced control points drawn from N(1, sigma²).
pub fn random_curve(n: usize, sigma: f64, knots: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Shape(
            "random curve needs at least two points".into(),
        ));
    }
    let dist = Normal::new(1.0, sigma)
        .map_err(|e| Error::InvalidConfig(format!("bad sigma {sigma}: {e}")))?;
    let count = knots + 2;
    let span = (n - 1) as f64;
    let xs: Vec<f64> = (0..count)
        .map(|j| span * j as f64 / (count - 1) as f64)
        .collect();
    let ys: Vec<f64> = (0..count).map(|_| dist.sample(rng)).collect();
    let spline = CubicSpline::natural(&xs, &ys)?;
    Ok((0..n).map(|i| spline.eval(i as f64)).collect())
}

/// Strictly increasing map of `[0, n−1]` onto itself built from a random
/// speed curve; `None` if the curve is not positive everywhere.
fn warp_path(n: usize, sigma: f64, knots: usize, rng: &mut impl Rng) -> Result<Option<Vec<f64>>> {
    let speed = random_curve(n, sigma, knots, rng)?;
    if speed.iter().any(|&v| !(v > 0.0)) {
        return Ok(None);
    }
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * (speed[i - 1] + speed[i]);
    }
    let total = cum[n - 1];
    let span = (n - 1) as f64;
    let mut path: Vec<f64> = cum.iter().map(|c| c * span / total).collect();
    path[0] = 0.0;
    path[n - 1] = span;
    if path.windows(2).any(|w| !(w[1] > w[0])) {
        return Ok(None);
    }
    Ok(Some(path))
}

/// Resamples every row along one shared random monotone time warp.
pub fn time_warp(x: &Matrix, sigma: f64, knots: usize, rng: &mut impl Rng) -> Result<Matrix> {
    let (rows, cols) = x.shape();
    if cols < 4 {
        return Err(Error::Shape(format!("time warp needs N >= 4, got {cols}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig("sigma must be non-negative".into()));
    }
    let mut path = None;
    for _ in 0..MAX_WARP_ATTEMPTS {
        if let Some(p) = warp_path(cols, sigma, knots, rng)? {
            path = Some(p);
            break;
        }
    }
    let path = path.ok_or(Error::WarpRetriesExhausted(MAX_WARP_ATTEMPTS))?;
    let mut out = Matrix::zeros(rows, cols);
    for m in 0..rows {
        let spline = CubicSpline::uniform(x.row(m))?;
        for (o, &t) in out.row_mut(m).iter_mut().zip(&path) {
            *o = spline.eval(t);
        }
    }
    Ok(out)
}

/// Multiplies every row by one shared smooth random curve around one.
pub fn magnitude_warp(x: &Matrix, sigma: f64, knots: usize, rng: &mut impl Rng) -> Result<Matrix> {
    let (rows, cols) = x.shape();
    let curve = random_curve(cols, sigma, knots, rng)?;
    let mut out = x.clone();
    for m in 0..rows {
        for (v, c) in out.row_mut(m).iter_mut().zip(&curve) {
            *v *= c;
        }
    }
    Ok(out)
}

/// Applies `ops` in composition order with parameters drawn from `spec`.
pub fn apply_combo(
    x: &Matrix,
    ops: &[AugOp],
    spec: &AugmentSpec,
    rng: &mut impl Rng,
) -> Result<Matrix> {
    let mut cur = x.clone();
    for op in AugOp::ORDER.iter().filter(|op| ops.contains(op)) {
        cur = match op {
            AugOp::Ts => time_shift(&cur, *spec.ts_shifts.choose(rng).expect("validated"))?,
            AugOp::Rs => range_shift(&cur, *spec.rs_shifts.choose(rng).expect("validated"))?,
            AugOp::Tw => time_warp(&cur, spec.tw_sigma, spec.knots, rng)?,
            AugOp::Mw => magnitude_warp(&cur, spec.mw_sigma, spec.knots, rng)?,
        };
    }
    Ok(cur)
}

/// Augmented copy `combo` of training sample `sample`, drawn from its own
/// seeded stream so copies can be produced in any order.
pub fn augment_copy(x: &Matrix, sample: usize, combo: usize, spec: &AugmentSpec) -> Result<Matrix> {
    let ops = spec
        .combos
        .get(combo)
        .ok_or_else(|| Error::InvalidConfig(format!("no augmentation combo {combo}")))?;
    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(&[spec.rng_seed, sample as u64, combo as u64]));
    apply_combo(x, ops, spec, &mut rng)
        .map_err(|e| e.context(format!("augmenting sample {sample} with {ops:?}")))
}

/// Original samples followed, per sample, by one augmented copy per combo.
/// Each output carries the index of the input it was derived from.
pub fn expand_with_provenance(
    training: &[LabeledSample],
    spec: &AugmentSpec,
) -> Result<Vec<(usize, LabeledSample)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(training.len() * (1 + spec.combos.len()));
    for (i, s) in training.iter().enumerate() {
        out.push((i, s.clone()));
        for c in 0..spec.combos.len() {
            let data = augment_copy(s.frames.matrix(), i, c, spec)?;
            out.push((
                i,
                LabeledSample {
                    frames: RadarFrameMatrix::new(data)?,
                    ..s.clone()
                },
            ));
        }
    }
    Ok(out)
}

pub fn expand(training: &[LabeledSample], spec: &AugmentSpec) -> Result<Vec<LabeledSample>> {
    Ok(expand_with_provenance(training, spec)?
        .into_iter()
        .map(|(_, s)| s)
        .collect())
}
