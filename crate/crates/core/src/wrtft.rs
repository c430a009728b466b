//! Weighted range-time-frequency transform.
//!
//! Every range bin of the cropped window gets its own magnitude STFT; the
//! spectrograms are then averaged with weights proportional to each bin's
//! slow-time energy, giving a single K×T image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{Complex, Fft};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    Hann,
    Rect,
    Hamming,
}

impl WindowFn {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let tau = 2.0 * std::f64::consts::PI;
        (0..len)
            .map(|n| {
                let phase = tau * n as f64 / len as f64;
                match self {
                    WindowFn::Rect => 1.0,
                    WindowFn::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowFn::Hamming => 0.54 - 0.46 * phase.cos(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub segment_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub window_fn: WindowFn,
    pub one_sided: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            segment_len: 32,
            hop: 4,
            fft_len: 64,
            window_fn: WindowFn::Hann,
            one_sided: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.segment_len == 0 {
            return Err(Error::InvalidConfig(
                "hop and segment length must be positive".into(),
            ));
        }
        if self.segment_len > self.fft_len {
            return Err(Error::InvalidConfig(format!(
                "segment length {} exceeds FFT length {}",
                self.segment_len, self.fft_len
            )));
        }
        if !self.fft_len.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "FFT length {} is not a power of two",
                self.fft_len
            )));
        }
        Ok(())
    }

    pub fn num_freqs(&self) -> usize {
        if self.one_sided {
            self.fft_len / 2 + 1
        } else {
            self.fft_len
        }
    }

    /// Frame count for a series of length `n`, or `None` if too short.
    pub fn num_frames(&self, n: usize) -> Option<usize> {
        (n >= self.segment_len).then(|| (n - self.segment_len) / self.hop + 1)
    }

    /// (K, T) of the feature image for a series of length `n`.
    pub fn output_shape(&self, n: usize) -> Option<(usize, usize)> {
        Some((self.num_freqs(), self.num_frames(n)?))
    }
}

/// Magnitude spectrograms indexed `[bin][freq][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram3D {
    bins: usize,
    freqs: usize,
    frames: usize,
    data: Vec<f64>,
}

impl Spectrogram3D {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.bins, self.freqs, self.frames)
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize, t: usize) -> f64 {
        self.data[(m * self.freqs + k) * self.frames + t]
    }

    /// K×T spectrogram of one range bin.
    pub fn bin(&self, m: usize) -> Matrix {
        let len = self.freqs * self.frames;
        Matrix::from_vec(
            self.freqs,
            self.frames,
            self.data[m * len..(m + 1) * len].to_vec(),
        )
        .expect("slice length matches dims")
    }
}

pub fn stft(y: &Matrix, cfg: &StftConfig) -> Result<Spectrogram3D> {
    cfg.validate()?;
    let (bins, n) = y.shape();
    let frames = cfg.num_frames(n).ok_or_else(|| {
        Error::Shape(format!(
            "series of length {n} shorter than STFT segment {}",
            cfg.segment_len
        ))
    })?;
    let freqs = cfg.num_freqs();
    let window = cfg.window_fn.coefficients(cfg.segment_len);
    let fft = Fft::new(cfg.fft_len);
    let mut buf = vec![Complex::ZERO; cfg.fft_len];
    let mut data = vec![0.0; bins * freqs * frames];
    for m in 0..bins {
        let row = y.row(m);
        for t in 0..frames {
            let seg = &row[t * cfg.hop..t * cfg.hop + cfg.segment_len];
            buf.fill(Complex::ZERO);
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
                b.re = x * w;
            }
            fft.forward(&mut buf);
            for (k, c) in buf.iter().take(freqs).enumerate() {
                data[(m * freqs + k) * frames + t] = c.norm();
            }
        }
    }
    Ok(Spectrogram3D {
        bins,
        freqs,
        frames,
        data,
    })
}

/// Slow-time energy of every range bin.
pub fn bin_energy(y: &Matrix) -> Vec<f64> {
    crate::dsp::row_energies(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrtftFeature {
    /// K×T weighted spectrogram.
    pub image: Matrix,
    pub weights: Vec<f64>,
    pub energies: Vec<f64>,
}

/// Energy weights σ_m = E_m / ΣE.
pub fn energy_weights(energies: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = energies.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok(energies.iter().map(|e| e / total).collect())
}

pub fn wrtft(y: &Matrix, cfg: &StftConfig) -> Result<WrtftFeature> {
    let energies = bin_energy(y);
    let weights = energy_weights(&energies)?;
    let spec = stft(y, cfg)?;
    let (bins, freqs, frames) = spec.dims();
    let plane = freqs * frames;
    let mut image = vec![0.0; plane];
    for (m, &w) in weights.iter().enumerate().take(bins) {
        if w == 0.0 {
            continue;
        }
        for (acc, v) in image.iter_mut().zip(&spec.data[m * plane..(m + 1) * plane]) {
            *acc += w * v;
        }
    }
    Ok(WrtftFeature {
        image: Matrix::from_vec(freqs, frames, image)?,
        weights,
        energies,
    })
}
