//! Sleep postural transition recognition from UWB radar frames.
//!
//! The pipeline runs clutter suppression and range-window selection
//! ([`dsp`]), builds a time-difference view and an energy-weighted
//! spectrogram view ([`wrtft`], [`features`]), optionally expands the
//! training set ([`augment`]) and classifies with small CNNs ([`nn`]).
//! [`simulate`] produces labelled synthetic recordings and [`eval`] runs the
//! cross-validation protocols.

pub mod augment;
pub mod dataformat;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod fft;
pub mod matrix;
pub mod nn;
pub mod seed;
pub mod simulate;
pub mod spline;
pub mod wrtft;

pub use dataformat::{
    ClassMode, DatasetManifest, LabeledSample, ManifestEntry, RadarConfig, RadarFrameMatrix,
    SptClass,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
