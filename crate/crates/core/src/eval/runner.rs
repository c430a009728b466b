//! Experiment orchestration: every method is trained and tested on every
//! split, window size and run seed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::dataformat::{ClassMode, LabeledSample};
use crate::error::{Error, Result};
use crate::features::{build_dataset, crop_samples, FeatureConfig};
use crate::nn::{
    build_model, predict, train, Architecture, History, Model, ModelSpec, TensorDataset,
    TrainConfig, View,
};
use crate::seed::mix_seed;

use super::metrics::{accuracy, confusion_matrix};
use super::report::{EvalReport, RunResult, SessionCount};
use super::splits::{make_splits, Protocol, SampleMeta, Split};

/// A network architecture, optionally trained on the augmented set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodSpec {
    pub architecture: Architecture,
    pub augmented: bool,
}

impl MethodSpec {
    /// All six combinations, augmented first.
    pub fn all() -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for augmented in [true, false] {
            for architecture in [
                Architecture::Spn,
                Architecture::TdCnn,
                Architecture::WrtftCnn,
            ] {
                out.push(MethodSpec {
                    architecture,
                    augmented,
                });
            }
        }
        out
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.architecture {
            Architecture::Spn => "SPN",
            Architecture::TdCnn => "TD-CNN",
            Architecture::WrtftCnn => "WRTFT-CNN",
        };
        if self.augmented {
            write!(f, "AUG-{base}")
        } else {
            f.write_str(base)
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;
    /// `spn`, `td` or `wrtft`, with an optional `+aug` suffix.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, augmented) = match lower.strip_suffix("+aug") {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let architecture = match base {
            "spn" => Architecture::Spn,
            "td" | "td-cnn" => Architecture::TdCnn,
            "wrtft" | "wrtft-cnn" => Architecture::WrtftCnn,
            _ => return Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
        };
        Ok(MethodSpec {
            architecture,
            augmented,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub methods: Vec<MethodSpec>,
    /// Independently seeded runs per split; accuracies of all runs on all
    /// splits are pooled.
    pub runs_per_config: usize,
    pub class_mode: ClassMode,
    /// Restricts test sets to one recording session; training and
    /// validation always use every session.
    pub session_filter: Option<u8>,
    /// Evaluates only the first splits of the protocol.
    pub max_splits: Option<usize>,
    pub features: FeatureConfig,
    pub augment: AugmentSpec,
    /// Training recipe; the seed is replaced per run.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            protocol: Protocol::unseen(),
            methods: MethodSpec::all(),
            runs_per_config: 5,
            class_mode: ClassMode::Four,
            session_filter: None,
            max_splits: None,
            features: FeatureConfig::default(),
            augment: AugmentSpec::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        if self.methods.is_empty() || self.runs_per_config == 0 || self.max_splits == Some(0) {
            return Err(Error::InvalidConfig(
                "need at least one method, one run and one split".into(),
            ));
        }
        Ok(())
    }
}

/// Network inputs of one fold, views ordered as the method's architecture
/// expects them.
pub struct FoldData<'a> {
    pub train: &'a TensorDataset<f32>,
    pub val: &'a TensorDataset<f32>,
    pub test: &'a TensorDataset<f32>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub predictions: Vec<usize>,
    pub epochs: usize,
    pub best_epoch: usize,
}

/// Trains on a fold and predicts its test set.
pub trait Classifier: Sync {
    fn fit_predict(
        &self,
        method: &MethodSpec,
        fold: &FoldData<'_>,
        cfg: &TrainConfig,
    ) -> Result<FitOutcome>;
}

/// The convolutional networks, sized from the fold's input shapes.
pub struct CnnClassifier;

/// Builds the method's network for the fold's input shapes and trains it;
/// initialisation is seeded from `cfg.seed`.
pub fn fit_cnn(
    method: &MethodSpec,
    fold: &FoldData<'_>,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, History)> {
    let views = method.architecture.views();
    if fold.train.views.len() != views.len() {
        return Err(Error::Shape(format!(
            "{method} takes {} views, fold has {}",
            views.len(),
            fold.train.views.len()
        )));
    }
    let shape = |v: View| {
        views
            .iter()
            .position(|&x| x == v)
            .map(|k| {
                let s = fold.train.views[k].shape();
                [s[2], s[3]]
            })
            .unwrap_or_default()
    };
    let spec = ModelSpec::new(
        method.architecture,
        fold.num_classes,
        shape(View::Td),
        shape(View::Wrtft),
    );
    let mut model = build_model::<f32>(&spec, mix_seed(&[cfg.seed, 0x494E_4954]))?;
    let history = train(&mut model, fold.train, fold.val, cfg)?;
    Ok((model, history))
}

impl Classifier for CnnClassifier {
    fn fit_predict(
        &self,
        method: &MethodSpec,
        fold: &FoldData<'_>,
        cfg: &TrainConfig,
    ) -> Result<FitOutcome> {
        let (mut model, history) = fit_cnn(method, fold, cfg)?;
        Ok(FitOutcome {
            predictions: predict(&mut model, fold.test, cfg.batch_size)?,
            epochs: history.epochs.len(),
            best_epoch: history.best_epoch,
        })
    }
}

/// Seed of the augmentation stream for a split.
pub fn augment_seed(spec: &ExperimentSpec, split: usize) -> u64 {
    mix_seed(&[spec.seed, spec.augment.rng_seed, split as u64])
}

/// Training seed of one run on one split.
pub fn run_seed(spec: &ExperimentSpec, split: usize, run: usize) -> u64 {
    mix_seed(&[spec.seed, split as u64, run as u64])
}

pub struct RunOptions<'a> {
    /// Worker threads; 1 runs jobs in order on the calling thread.
    pub jobs: usize,
    /// Called after every finished job.
    pub progress: Option<&'a (dyn Fn(&RunResult) + Sync)>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            progress: None,
        }
    }
}

/// Fails if a training row was derived from a validation or test sample.
pub fn check_no_leakage(train_sources: &[usize], val: &[usize], test: &[usize]) -> Result<()> {
    let held_out: BTreeSet<usize> = val.iter().chain(test).copied().collect();
    match train_sources.iter().find(|i| held_out.contains(i)) {
        Some(i) => Err(Error::Leakage(format!(
            "training row derived from held-out sample {i}"
        ))),
        None => Ok(()),
    }
}

struct Job {
    ws_idx: usize,
    split: usize,
    run: usize,
    method: usize,
}

/// Cropped samples and their plain views at one window size.
struct WindowCache {
    ws: usize,
    cropped: Vec<LabeledSample>,
    /// TD and WRTFT views of every sample, in that order.
    plain: TensorDataset<f32>,
}

const CACHE_VIEWS: [View; 2] = [View::Td, View::Wrtft];

fn subset(cache: &TensorDataset<f32>, idx: &[usize], views: &[View]) -> Result<TensorDataset<f32>> {
    let all = cache.gather(idx);
    let picked = views
        .iter()
        .map(|v| {
            all[CACHE_VIEWS
                .iter()
                .position(|c| c == v)
                .expect("cached view")]
            .clone()
        })
        .collect();
    TensorDataset::new(picked, idx.iter().map(|&i| cache.labels[i]).collect())
}

struct Context<'a> {
    spec: &'a ExperimentSpec,
    samples: &'a [LabeledSample],
    splits: &'a [Split],
    caches: &'a [WindowCache],
    classifier: &'a dyn Classifier,
}

fn run_job(ctx: &Context<'_>, job: &Job) -> Result<RunResult> {
    let spec = ctx.spec;
    let method = spec.methods[job.method];
    let cache = &ctx.caches[job.ws_idx];
    let split = &ctx.splits[job.split];
    let views = method.architecture.views();
    let test_idx: Vec<usize> = split
        .test
        .iter()
        .copied()
        .filter(|&i| {
            spec.session_filter
                .map_or(true, |s| ctx.samples[i].session_id == s)
        })
        .collect();
    if test_idx.is_empty() {
        return Err(Error::Empty(
            "no test samples in the selected session".into(),
        ));
    }

    let (train_set, train_sources) = if method.augmented {
        let aug = AugmentSpec {
            rng_seed: augment_seed(spec, job.split),
            ..spec.augment.clone()
        };
        let refs: Vec<&LabeledSample> = split.train.iter().map(|&i| &cache.cropped[i]).collect();
        let (ds, prov) = build_dataset(&refs, &spec.features_at(cache.ws), Some(&aug), views)?;
        (
            ds,
            prov.into_iter().map(|p| split.train[p]).collect::<Vec<_>>(),
        )
    } else {
        (
            subset(&cache.plain, &split.train, views)?,
            split.train.clone(),
        )
    };
    check_no_leakage(&train_sources, &split.val, &split.test)?;
    let val_set = subset(&cache.plain, &split.val, views)?;
    let test_set = subset(&cache.plain, &test_idx, views)?;

    let cfg = TrainConfig {
        seed: run_seed(spec, job.split, job.run),
        ..spec.train
    };
    let num_classes = spec.class_mode.num_classes();
    let fold = FoldData {
        train: &train_set,
        val: &val_set,
        test: &test_set,
        num_classes,
    };
    let out = ctx.classifier.fit_predict(&method, &fold, &cfg)?;
    let confusion = confusion_matrix(&out.predictions, &test_set.labels, num_classes)?;

    let mut sessions: Vec<SessionCount> = Vec::new();
    for (k, &i) in test_idx.iter().enumerate() {
        let s = ctx.samples[i].session_id;
        let pos = match sessions.iter().position(|c| c.session == s) {
            Some(p) => p,
            None => {
                sessions.push(SessionCount {
                    session: s,
                    correct: 0,
                    total: 0,
                });
                sessions.len() - 1
            }
        };
        sessions[pos].total += 1;
        sessions[pos].correct += u64::from(out.predictions[k] == test_set.labels[k]);
    }
    sessions.sort_by_key(|c| c.session);

    Ok(RunResult {
        method: method.to_string(),
        ws: cache.ws,
        split: job.split,
        run: job.run,
        accuracy: accuracy(&confusion),
        confusion,
        sessions,
        epochs: out.epochs,
        best_epoch: out.best_epoch,
    })
}

impl ExperimentSpec {
    /// Feature settings with the window size replaced.
    pub fn features_at(&self, ws: usize) -> FeatureConfig {
        FeatureConfig {
            ws,
            ..self.features
        }
    }
}

/// Runs every method on every split, window size and run seed, then
/// aggregates into a report. Any failing job aborts the experiment.
pub fn run_experiment(
    spec: &ExperimentSpec,
    samples: &[LabeledSample],
    classifier: &dyn Classifier,
    opts: &RunOptions<'_>,
) -> Result<EvalReport> {
    spec.validate()?;
    if let Some(bad) = samples.iter().find(|s| !spec.class_mode.allows(s.label)) {
        return Err(Error::InvalidLabel(format!(
            "{} in a {}-class experiment",
            bad.label,
            spec.class_mode.num_classes()
        )));
    }
    let meta: Vec<SampleMeta> = samples.iter().map(SampleMeta::from).collect();
    let mut splits = make_splits(&spec.protocol, &meta, spec.seed)?;
    if let Some(max) = spec.max_splits {
        splits.truncate(max);
    }

    let caches = spec
        .protocol
        .window_sizes(spec.features.ws)
        .into_iter()
        .map(|ws| {
            let cropped = crop_samples(samples, ws)?;
            let refs: Vec<&LabeledSample> = cropped.iter().collect();
            let (plain, _) = build_dataset(&refs, &spec.features_at(ws), None, &CACHE_VIEWS)?;
            Ok(WindowCache { ws, cropped, plain })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for ws_idx in 0..caches.len() {
        for split in 0..splits.len() {
            for run in 0..spec.runs_per_config {
                for method in 0..spec.methods.len() {
                    jobs.push(Job {
                        ws_idx,
                        split,
                        run,
                        method,
                    });
                }
            }
        }
    }

    let ctx = Context {
        spec,
        samples,
        splits: &splits,
        caches: &caches,
        classifier,
    };
    let exec = |job: &Job| {
        let r = run_job(&ctx, job).map_err(|e| {
            e.context(format!(
                "{} on split {} (ws {}, run {})",
                spec.methods[job.method], job.split, caches[job.ws_idx].ws, job.run
            ))
        })?;
        if let Some(p) = opts.progress {
            p(&r);
        }
        Ok(r)
    };
    // Results come back in job order whatever the thread count.
    let runs = if opts.jobs <= 1 {
        jobs.iter().map(exec).collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| jobs.par_iter().map(exec).collect::<Result<Vec<_>>>())?
    };
    EvalReport::from_runs(spec.clone(), splits, runs)
}
