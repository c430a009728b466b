//! Radar samples, labels and dataset manifests, plus the `UWBF` sample file
//! format.
//!
//! A sample file holds only the frame matrix:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UWBF"
//! 4       1     version (0x01)
//! 5       4     u32 LE  M (range bins, rows)
//! 9       4     u32 LE  N (slow-time frames, columns)
//! 13      4·M·N f32 LE  row-major payload
//! ```
//!
//! Labels and participant/session metadata live in the JSON manifest that
//! references each file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const UWBF_MAGIC: &[u8; 4] = b"UWBF";
pub const UWBF_VERSION: u8 = 0x01;
pub const UWBF_HEADER_LEN: usize = 13;

/// Acquisition parameters of the radar front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    pub center_frequency_hz: f64,
    pub prf_hz: f64,
    pub sampling_frequency_hz: f64,
    pub range_bin_step_m: f64,
    pub num_range_bins: usize,
    pub frame_rate_hz: f64,
    pub slow_time_len: usize,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            center_frequency_hz: 7.29e9,
            prf_hz: 15.18e6,
            sampling_frequency_hz: 23.32e9,
            range_bin_step_m: 0.0514,
            num_range_bins: 180,
            frame_rate_hz: 10.0,
            slow_time_len: 160,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("center_frequency_hz", self.center_frequency_hz),
            ("prf_hz", self.prf_hz),
            ("sampling_frequency_hz", self.sampling_frequency_hz),
            ("range_bin_step_m", self.range_bin_step_m),
            ("frame_rate_hz", self.frame_rate_hz),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.num_range_bins == 0 || self.slow_time_len < 2 {
            return Err(Error::InvalidConfig(
                "need at least one range bin and two frames".into(),
            ));
        }
        Ok(())
    }

    /// Farthest range covered by the configured bins, in meters.
    pub fn max_range_m(&self) -> f64 {
        self.range_bin_step_m * self.num_range_bins as f64
    }
}

/// M×N baseband amplitudes: rows are range bins (fast time), columns are
/// frames (slow time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct RadarFrameMatrix(Matrix);

impl RadarFrameMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() < 1 || data.cols() < 2 {
            return Err(Error::Shape(format!(
                "frame matrix must be at least 1x2, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        if let Some((row, col)) = data.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        Ok(RadarFrameMatrix(data))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn num_range_bins(&self) -> usize {
        self.0.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.0.cols()
    }
}

impl TryFrom<Matrix> for RadarFrameMatrix {
    type Error = Error;
    fn try_from(m: Matrix) -> Result<Self> {
        RadarFrameMatrix::new(m)
    }
}

impl From<RadarFrameMatrix> for Matrix {
    fn from(f: RadarFrameMatrix) -> Matrix {
        f.0
    }
}

/// Sleep postural transition class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SptClass {
    /// Supine to side.
    Susi,
    /// Supine to prone.
    Supr,
    /// Side to supine.
    Sisu,
    /// Prone to supine.
    Prsu,
    /// Background activity without a posture change.
    Bg,
}

impl SptClass {
    pub const ALL: [SptClass; 5] = [
        SptClass::Susi,
        SptClass::Supr,
        SptClass::Sisu,
        SptClass::Prsu,
        SptClass::Bg,
    ];

    pub fn token(self) -> &'static str {
        match self {
            SptClass::Susi => "SUSI",
            SptClass::Supr => "SUPR",
            SptClass::Sisu => "SISU",
            SptClass::Prsu => "PRSU",
            SptClass::Bg => "BG",
        }
    }

    /// Dense class index, identical in 4- and 5-class mode for the four
    /// transitions; BG is index 4.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<SptClass> {
        SptClass::ALL.get(i).copied()
    }
}

impl fmt::Display for SptClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SptClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SptClass::ALL
            .into_iter()
            .find(|c| c.token() == s)
            .ok_or_else(|| Error::InvalidLabel(s.to_string()))
    }
}

impl TryFrom<String> for SptClass {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SptClass> for String {
    fn from(c: SptClass) -> String {
        c.token().to_string()
    }
}

/// Four transition classes only, or transitions plus background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ClassMode {
    Four,
    Five,
}

impl ClassMode {
    pub fn num_classes(self) -> usize {
        match self {
            ClassMode::Four => 4,
            ClassMode::Five => 5,
        }
    }

    pub fn classes(self) -> &'static [SptClass] {
        &SptClass::ALL[..self.num_classes()]
    }

    pub fn allows(self, label: SptClass) -> bool {
        label.index() < self.num_classes()
    }
}

impl TryFrom<u8> for ClassMode {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(ClassMode::Four),
            5 => Ok(ClassMode::Five),
            other => Err(Error::InvalidConfig(format!(
                "class mode must be 4 or 5, got {other}"
            ))),
        }
    }
}

impl From<ClassMode> for u8 {
    fn from(m: ClassMode) -> u8 {
        m.num_classes() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub frames: RadarFrameMatrix,
    pub label: SptClass,
    pub participant_id: u32,
    /// 1 = static room, 2 = room with a moving object.
    pub session_id: u8,
    pub dataset_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub label: SptClass,
    pub participant: u32,
    pub session: u8,
    pub dataset: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_mode: ClassMode,
    pub radar_config: RadarConfig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        self.radar_config.validate()?;
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.file) {
                return Err(Error::BadFormat(format!(
                    "duplicate manifest entry {}",
                    e.file.display()
                )));
            }
            if !self.class_mode.allows(e.label) {
                return Err(Error::InvalidLabel(format!(
                    "{} is not valid in {}-class mode",
                    e.label,
                    self.class_mode.num_classes()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads every referenced sample; relative paths resolve against `base`.
    pub fn load_samples(&self, base: &Path) -> Result<Vec<LabeledSample>> {
        let expected = (
            self.radar_config.num_range_bins,
            self.radar_config.slow_time_len,
        );
        self.entries
            .iter()
            .map(|e| {
                let s = read_sample(e, base)?;
                let got = (s.frames.num_range_bins(), s.frames.num_frames());
                if got != expected {
                    return Err(Error::BadFormat(format!(
                        "{}: frame matrix is {}x{}, manifest declares {}x{}",
                        e.file.display(),
                        got.0,
                        got.1,
                        expected.0,
                        expected.1
                    )));
                }
                Ok(s)
            })
            .collect()
    }
}

/// Serializes a frame matrix into `UWBF` bytes.
pub fn encode_frames(frames: &RadarFrameMatrix) -> Result<Vec<u8>> {
    let m = frames.matrix();
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Shape("M exceeds u32".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::Shape("N exceeds u32".into()))?;
    let mut out = Vec::with_capacity(UWBF_HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(UWBF_MAGIC);
    out.push(UWBF_VERSION);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_frames(bytes: &[u8]) -> Result<RadarFrameMatrix> {
    if bytes.len() < 4 || &bytes[..4] != UWBF_MAGIC {
        return Err(Error::BadFormat("missing UWBF magic".into()));
    }
    if bytes.len() < UWBF_HEADER_LEN {
        return Err(Error::Truncated {
            expected: UWBF_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[4] != UWBF_VERSION {
        return Err(Error::BadFormat(format!(
            "unsupported UWBF version {}",
            bytes[4]
        )));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(UWBF_HEADER_LEN))
        .ok_or_else(|| Error::BadFormat("dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::BadFormat(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let data = bytes[UWBF_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    RadarFrameMatrix::new(Matrix::from_vec(rows, cols, data)?)
}

pub fn write_frames(frames: &RadarFrameMatrix, path: &Path) -> Result<()> {
    let bytes = encode_frames(frames)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path) -> Result<RadarFrameMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frames(&bytes).map_err(|e| e.context(path.display().to_string()))
}

/// Writes the sample's frame matrix; its metadata belongs in the manifest
/// (see [`ManifestEntry`]).
pub fn write_sample(sample: &LabeledSample, path: &Path) -> Result<()> {
    write_frames(&sample.frames, path)
}

/// Reads the frames referenced by a manifest entry and attaches the entry's
/// metadata.
pub fn read_sample(entry: &ManifestEntry, base: &Path) -> Result<LabeledSample> {
    let path = if entry.file.is_absolute() {
        entry.file.clone()
    } else {
        base.join(&entry.file)
    };
    Ok(LabeledSample {
        frames: read_frames(&path)?,
        label: entry.label,
        participant_id: entry.participant,
        session_id: entry.session,
        dataset_id: entry.dataset,
    })
}

/// Manifest entry describing `sample` stored at `file`.
pub fn manifest_entry(sample: &LabeledSample, file: impl Into<PathBuf>) -> ManifestEntry {
    ManifestEntry {
        file: file.into(),
        label: sample.label,
        participant: sample.participant_id,
        session: sample.session_id,
        dataset: sample.dataset_id,
    }
}

/// Randomly undersamples every class down to the smallest class count.
///
/// The result keeps the input order of the retained samples.
pub fn balance_classes(dataset: &[LabeledSample], rng_seed: u64) -> Vec<LabeledSample> {
    let mut by_class: BTreeMap<SptClass, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let Some(min) = by_class.values().map(Vec::len).min() else {
        return Vec::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut keep = vec![false; dataset.len()];
    for idx in by_class.values() {
        for j in sample_indices(&mut rng, idx.len(), min) {
            keep[idx[j]] = true;
        }
    }
    dataset
        .iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then(|| s.clone()))
        .collect()
}

pub fn class_histogram(samples: &[LabeledSample]) -> BTreeMap<SptClass, usize> {
    let mut h = BTreeMap::new();
    for s in samples {
        *h.entry(s.label).or_insert(0) += 1;
    }
    h
}
