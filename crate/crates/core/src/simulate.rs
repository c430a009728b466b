//! Synthetic UWB frame matrices with the class structure of sleep postural
//! transitions.
//!
//! Each received frame is a superposition of Gaussian pulses, one per body
//! reflector, centered on a slow-time trajectory; static clutter, per-bin DC
//! offsets, white noise and an optional amplitude-modulated distractor are
//! added on top. Transitions move the whole body by a class-specific signed
//! number of range bins along a logistic profile, so direction separates
//! {SUSI, SUPR} from {SISU, PRSU} and extent separates the members of each
//! pair.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataformat::{ClassMode, LabeledSample, RadarConfig, RadarFrameMatrix, SptClass};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    /// Net body displacement in range bins; positive is away from the radar.
    pub delta_bins: f64,
    pub duration_s: f64,
}

/// Periodically modulated reflector standing in for a swinging fan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub range_bin: usize,
    pub period_s: f64,
    pub amplitude: f64,
}

impl Distractor {
    /// A fan-like swinging reflector; its bin is re-drawn per participant.
    pub fn fan() -> Self {
        Distractor {
            range_bin: 30,
            period_s: 2.0,
            amplitude: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub radar: RadarConfig,
    pub class_mode: ClassMode,
    pub num_paths: usize,
    /// Range extent spanned by the body reflectors.
    pub body_extent_bins: f64,
    pub pulse_width_bins: f64,
    pub clutter_amplitude: f64,
    pub dc_offset_scale: f64,
    pub noise_sigma: f64,
    pub breathing_freq_hz: f64,
    pub breathing_amp_bins: f64,
    /// Bounds for the body center bin before the transition.
    pub transition_start_range: [usize; 2],
    /// Bounds for the transition onset time.
    pub onset_range_s: [f64; 2],
    /// Relative standard deviation of per-sample displacement magnitude.
    pub delta_jitter: f64,
    /// Relative spread of per-participant perturbations.
    pub participant_variation: f64,
    /// Limb jitter amplitude for BG samples; zero disables bursts.
    pub bg_jitter_bins: f64,
    pub class_templates: BTreeMap<SptClass, ClassTemplate>,
    pub distractor: Option<Distractor>,
    pub session_id: u8,
    pub dataset_id: u32,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let t = |delta_bins, duration_s| ClassTemplate {
            delta_bins,
            duration_s,
        };
        let class_templates = BTreeMap::from([
            (SptClass::Susi, t(4.0, 2.5)),
            (SptClass::Supr, t(7.0, 3.0)),
            (SptClass::Sisu, t(-4.0, 2.5)),
            (SptClass::Prsu, t(-7.0, 3.0)),
        ]);
        SimConfig {
            radar: RadarConfig::default(),
            class_mode: ClassMode::Four,
            num_paths: 5,
            body_extent_bins: 12.0,
            pulse_width_bins: 2.5,
            clutter_amplitude: 1.0,
            dc_offset_scale: 0.5,
            noise_sigma: 0.02,
            breathing_freq_hz: 0.25,
            breathing_amp_bins: 0.3,
            transition_start_range: [60, 110],
            onset_range_s: [3.0, 9.0],
            delta_jitter: 0.08,
            participant_variation: 0.1,
            bg_jitter_bins: 2.0,
            class_templates,
            distractor: None,
            session_id: 1,
            dataset_id: 1,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_paths == 0 {
            return bad("num_paths must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.pulse_width_bins > 0.0) {
            return bad("pulse_width_bins must be positive");
        }
        let [lo, hi] = self.transition_start_range;
        if lo > hi || hi >= self.radar.num_range_bins {
            return bad("transition_start_range must be an ordered pair inside the range axis");
        }
        if !(self.onset_range_s[0] >= 0.0 && self.onset_range_s[0] <= self.onset_range_s[1]) {
            return bad("onset_range_s must be an ordered non-negative pair");
        }
        for c in &self.class_mode.classes()[..4] {
            let Some(t) = self.class_templates.get(c) else {
                return Err(Error::InvalidConfig(format!("missing template for {c}")));
            };
            if !(t.duration_s > 0.0) {
                return bad("template durations must be positive");
            }
        }
        let get = |c| self.class_templates[&c].delta_bins;
        if get(SptClass::Susi) != -get(SptClass::Sisu)
            || get(SptClass::Supr) != -get(SptClass::Prsu)
        {
            return bad("reverse transitions must have opposite displacements");
        }
        if get(SptClass::Supr).abs() <= get(SptClass::Susi).abs() {
            return bad("prone transitions must be larger than side transitions");
        }
        if let Some(d) = &self.distractor {
            if d.range_bin >= self.radar.num_range_bins || !(d.period_s > 0.0) {
                return bad("distractor must sit inside the range axis with a positive period");
            }
        }
        Ok(())
    }
}

/// Body center bin as a function of slow-time index.
#[derive(Debug, Clone)]
pub struct Trajectory {
    start_bin: f64,
    delta_bins: f64,
    midpoint_s: f64,
    steepness_s: f64,
    breathing_amp: f64,
    breathing_freq: f64,
    breathing_phase: f64,
    frame_rate: f64,
}

impl Trajectory {
    pub fn center_bin(&self, n: usize) -> f64 {
        let t = n as f64 / self.frame_rate;
        let shift = if self.delta_bins == 0.0 {
            0.0
        } else {
            self.delta_bins / (1.0 + (-(t - self.midpoint_s) / self.steepness_s).exp())
        };
        let breath = self.breathing_amp
            * (2.0 * std::f64::consts::PI * self.breathing_freq * t + self.breathing_phase).sin();
        self.start_bin + shift + breath
    }
}

/// Converts a range-bin index to meters.
pub fn range_of_bin(cfg: &RadarConfig, m: usize) -> Result<f64> {
    if m >= cfg.num_range_bins {
        return Err(Error::InvalidConfig(format!(
            "range bin {m} outside [0, {})",
            cfg.num_range_bins
        )));
    }
    Ok(m as f64 * cfg.range_bin_step_m)
}

fn gaussian(d: f64, width: f64) -> f64 {
    (-0.5 * (d / width).powi(2)).exp()
}

/// Synthesizes one sample. All randomness derives from `cfg.rng_seed`.
pub fn synth_sample(
    cfg: &SimConfig,
    label: SptClass,
    participant_id: u32,
) -> Result<LabeledSample> {
    cfg.validate()?;
    if !cfg.class_mode.allows(label) {
        return Err(Error::InvalidLabel(format!(
            "{label} in {}-class mode",
            cfg.class_mode.num_classes()
        )));
    }
    let m_bins = cfg.radar.num_range_bins;
    let n_frames = cfg.radar.slow_time_len;
    let fr = cfg.radar.frame_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let unit = Normal::new(0.0, 1.0).unwrap();

    let [lo, hi] = cfg.transition_start_range;
    let start_bin = rng.gen_range(lo as f64..=hi as f64);
    let onset = rng.gen_range(cfg.onset_range_s[0]..=cfg.onset_range_s[1]);
    let (delta, duration) = match cfg.class_templates.get(&label) {
        Some(t) if label != SptClass::Bg => {
            let scale = (1.0 + cfg.delta_jitter * unit.sample(&mut rng)).max(0.2);
            (t.delta_bins * scale, t.duration_s)
        }
        _ => (0.0, 1.0),
    };
    let traj = Trajectory {
        start_bin,
        delta_bins: delta,
        midpoint_s: onset + duration / 2.0,
        steepness_s: duration / 6.0,
        breathing_amp: cfg.breathing_amp_bins,
        breathing_freq: cfg.breathing_freq_hz,
        breathing_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        frame_rate: fr,
    };

    // Body reflectors spread symmetrically about the trajectory.
    let half = cfg.body_extent_bins / 2.0;
    let paths: Vec<(f64, f64)> = (0..cfg.num_paths)
        .map(|i| {
            let offset = if cfg.num_paths == 1 {
                0.0
            } else {
                -half + cfg.body_extent_bins * i as f64 / (cfg.num_paths - 1) as f64
            };
            let taper = if half > 0.0 {
                1.0 - 0.5 * offset.abs() / half
            } else {
                1.0
            };
            (offset, taper)
        })
        .collect();

    // Limb jitter bursts for BG: (path, peak displacement, center s, half width s).
    let mut bursts: Vec<(usize, f64, f64, f64)> = Vec::new();
    if label == SptClass::Bg && cfg.bg_jitter_bins > 0.0 {
        let span = n_frames as f64 / fr;
        for _ in 0..rng.gen_range(1..=3) {
            bursts.push((
                rng.gen_range(0..cfg.num_paths),
                cfg.bg_jitter_bins * rng.gen_range(-1.0..=1.0),
                rng.gen_range(0.0..span),
                rng.gen_range(0.25..0.75),
            ));
        }
    }
    let burst_shift = |path: usize, t: f64| -> f64 {
        bursts
            .iter()
            .filter(|b| b.0 == path && (t - b.2).abs() < b.3)
            .map(|b| b.1 * 0.5 * (1.0 + (std::f64::consts::PI * (t - b.2) / b.3).cos()))
            .sum()
    };

    let mut data = Matrix::zeros(m_bins, n_frames);
    let max_bin = (m_bins - 1) as f64;
    for n in 0..n_frames {
        let t = n as f64 / fr;
        let c = traj.center_bin(n);
        for (p, &(offset, amp)) in paths.iter().enumerate() {
            let pos = c + offset + burst_shift(p, t);
            if !(0.0..=max_bin).contains(&pos) {
                return Err(Error::TrajectoryOutOfRange {
                    bin: pos,
                    max: m_bins - 1,
                });
            }
            let reach = (4.0 * cfg.pulse_width_bins).ceil() as isize;
            let centre = pos.round() as isize;
            for m in (centre - reach).max(0)..=(centre + reach).min(m_bins as isize - 1) {
                let m = m as usize;
                let v = data.get(m, n) + amp * gaussian(m as f64 - pos, cfg.pulse_width_bins);
                data.set(m, n, v);
            }
        }
    }

    if cfg.clutter_amplitude > 0.0 {
        for _ in 0..3 {
            let bin = rng.gen_range(0.0..max_bin);
            let a = cfg.clutter_amplitude * rng.gen_range(0.5..1.5);
            for m in 0..m_bins {
                let v = a * gaussian(m as f64 - bin, cfg.pulse_width_bins);
                for x in data.row_mut(m) {
                    *x += v;
                }
            }
        }
    }

    if cfg.dc_offset_scale > 0.0 {
        for m in 0..m_bins {
            let off = cfg.dc_offset_scale * unit.sample(&mut rng);
            for x in data.row_mut(m) {
                *x += off;
            }
        }
        // Common per-frame level drift, removed by background suppression.
        for n in 0..n_frames {
            let off = 0.2 * cfg.dc_offset_scale * unit.sample(&mut rng);
            for m in 0..m_bins {
                data.set(m, n, data.get(m, n) + off);
            }
        }
    }

    if let Some(d) = &cfg.distractor {
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for n in 0..n_frames {
            let t = n as f64 / fr;
            let a =
                d.amplitude * 0.5 * (1.0 + (std::f64::consts::TAU * t / d.period_s + phase).sin());
            for m in 0..m_bins {
                let v = data.get(m, n)
                    + a * gaussian(m as f64 - d.range_bin as f64, cfg.pulse_width_bins);
                data.set(m, n, v);
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).unwrap();
        for x in data.as_mut_slice() {
            *x += noise.sample(&mut rng);
        }
    }

    Ok(LabeledSample {
        frames: RadarFrameMatrix::new(data)?,
        label,
        participant_id,
        session_id: cfg.session_id,
        dataset_id: cfg.dataset_id,
    })
}

/// Participant-specific configuration: pulse width, body position, noise
/// level, displacement scale and distractor placement are perturbed
/// deterministically from `rng_seed` and the participant id.
pub fn participant_config(cfg: &SimConfig, participant_id: u32) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        cfg.rng_seed,
        0x5041_5254,
        participant_id as u64,
    ]));
    let v = cfg.participant_variation;
    let mut p = cfg.clone();
    let jitter = |rng: &mut ChaCha8Rng| {
        if v > 0.0 {
            rng.gen_range(1.0 - v..=1.0 + v)
        } else {
            1.0
        }
    };
    p.pulse_width_bins *= jitter(&mut rng);
    p.noise_sigma *= jitter(&mut rng);
    let scale = jitter(&mut rng);
    for t in p.class_templates.values_mut() {
        t.delta_bins *= scale;
    }
    let m = cfg.radar.num_range_bins;
    let [lo, hi] = cfg.transition_start_range;
    let width = hi - lo;
    let max_shift = ((width as f64) * v).round() as i64;
    if max_shift > 0 {
        let shift = rng.gen_range(-max_shift..=max_shift);
        let new_lo = (lo as i64 + shift).clamp(0, (m - 1 - width) as i64) as usize;
        p.transition_start_range = [new_lo, new_lo + width];
    }
    if let Some(d) = p.distractor.as_mut() {
        // The fan is moved for every participant.
        d.range_bin = rng.gen_range(10..m - 10);
        d.period_s *= jitter(&mut rng);
    }
    p
}

/// Generates a class-balanced dataset, participants `0..n_participants`.
pub fn synth_dataset(
    cfg: &SimConfig,
    n_participants: u32,
    samples_per_class_per_participant: usize,
) -> Result<Vec<LabeledSample>> {
    if n_participants == 0 || samples_per_class_per_participant == 0 {
        return Err(Error::InvalidConfig(
            "participant and sample counts must be positive".into(),
        ));
    }
    cfg.validate()?;
    let mut out = Vec::new();
    for pid in 0..n_participants {
        let pcfg = participant_config(cfg, pid);
        for &label in cfg.class_mode.classes() {
            for k in 0..samples_per_class_per_participant {
                let mut scfg = pcfg.clone();
                scfg.rng_seed = mix_seed(&[
                    cfg.rng_seed,
                    pid as u64,
                    label.index() as u64,
                    k as u64,
                    cfg.session_id as u64,
                ]);
                out.push(
                    synth_sample(&scfg, label, pid).map_err(|e| {
                        e.context(format!("participant {pid}, {label}, sample {k}"))
                    })?,
                );
            }
        }
    }
    Ok(out)
}
