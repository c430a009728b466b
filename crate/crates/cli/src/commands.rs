//! Resolved subcommand configurations and their execution.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use spt_core::augment::{augment_copy, AugOp, AugmentSpec};
use spt_core::dataformat::{manifest_entry, read_frames, read_sample, write_sample};
use spt_core::eval::{
    augment_seed, check_no_leakage, fit_cnn, make_splits, run_experiment, run_seed, CnnClassifier,
    EvalReport, ExperimentSpec, FoldData, MethodSpec, Protocol, RunOptions, RunResult, SampleMeta,
};
use spt_core::features::{
    build_dataset, crop_samples, preprocess, views_of_cropped, FeatureConfig,
};
use spt_core::nn::{evaluate, save_checkpoint, Architecture, TrainConfig, View};
use spt_core::simulate::{synth_dataset, Distractor, SimConfig};
use spt_core::wrtft::StftConfig;
use spt_core::{ClassMode, DatasetManifest, LabeledSample, Matrix, RadarFrameMatrix};

use crate::{
    ArchArg, Command, EvalArgs, FeatureArgs, FitArgs, OnOff, ProtocolArg, SessionArg, SimulateArgs,
    SourceArgs, SplitArgs, TrainArgs, ViewArg,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(spt_core::Error),
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub enum ErrorKind {
    Usage,
    Data,
    Runtime,
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Core(e) if matches!(e.root(), spt_core::Error::InvalidConfig(_)) => {
                ErrorKind::Usage
            }
            CliError::Core(e) if e.is_data_error() => ErrorKind::Data,
            CliError::Core(_) | CliError::Write { .. } => ErrorKind::Runtime,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Write { path, source } => {
                write!(f, "cannot write {}: {source}", path.display())
            }
        }
    }
}

impl From<spt_core::Error> for CliError {
    fn from(e: spt_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// A fully resolved invocation, echoed to stdout and accepted by `--config`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Resolved {
    Simulate(SimulateConfig),
    Featurize(FeaturizeConfig),
    AugmentPreview(AugmentPreviewConfig),
    Train(TrainRunConfig),
    Eval(EvalConfig),
    Report(ReportConfig),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub out: PathBuf,
    pub participants: u32,
    pub per_class: usize,
    /// One simulator configuration per recorded session.
    pub sessions: Vec<SimConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSource {
    pub input: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeaturizeConfig {
    pub source: SampleSource,
    pub out: PathBuf,
    pub view: View,
    pub features: FeatureConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AugmentPreviewConfig {
    pub source: SampleSource,
    pub out: PathBuf,
    pub ws: usize,
    pub augment: AugmentSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub method: MethodSpec,
    pub split_index: usize,
    /// Protocol, features, augmentation and recipe; seeds derive from it as
    /// for the first run of `eval` on the same split.
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub jobs: usize,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportConfig {
    pub input: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn load_resolved(path: &Path) -> Result<Resolved> {
    let text = fs::read_to_string(path).map_err(|e| spt_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn features(a: &FeatureArgs) -> Result<FeatureConfig> {
    let cfg = FeatureConfig {
        ws: a.ws,
        stft: StftConfig {
            segment_len: a.stft_seg,
            hop: a.stft_hop,
            fft_len: a.stft_fft,
            ..StftConfig::default()
        },
        standardize: true,
    };
    cfg.stft.validate()?;
    if cfg.ws == 0 {
        return Err(CliError::Usage("--ws must be positive".into()));
    }
    Ok(cfg)
}

fn train_config(a: &FitArgs) -> TrainConfig {
    TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: 0,
    }
}

fn protocol(a: &SplitArgs) -> Result<Protocol> {
    Ok(match a.protocol {
        ProtocolArg::Unseen => match a.partition[..] {
            [train, val, test] => Protocol::UnseenRandomSplit {
                train,
                val,
                test,
                repeats: a.repeats,
            },
            _ => {
                return Err(CliError::Usage(
                    "--partition takes three counts: train,val,test".into(),
                ))
            }
        },
        ProtocolArg::Seen5 => Protocol::seen5(),
        ProtocolArg::Sweep => Protocol::WindowSweep {
            ws_list: a.ws_list.clone(),
        },
        ProtocolArg::Lopo => Protocol::LeaveOneParticipantOut,
        ProtocolArg::Seen6 => Protocol::SeenKFold6,
    })
}

fn source(a: &SourceArgs) -> Result<SampleSource> {
    if a.input.is_none() && a.manifest.is_none() {
        return Err(CliError::Usage(
            "one of --input or --manifest is required".into(),
        ));
    }
    Ok(SampleSource {
        input: a.input.clone(),
        manifest: a.manifest.clone(),
        index: a.index,
    })
}

fn class_mode(flag: Option<u8>, manifest: &Path) -> Result<ClassMode> {
    match flag {
        Some(m) => Ok(ClassMode::try_from(m)?),
        None => Ok(DatasetManifest::load(manifest)?.class_mode),
    }
}

fn architecture(a: ArchArg) -> Architecture {
    match a {
        ArchArg::Spn => Architecture::Spn,
        ArchArg::Td => Architecture::TdCnn,
        ArchArg::Wrtft => Architecture::WrtftCnn,
    }
}

fn simulate_config(a: SimulateArgs) -> Result<SimulateConfig> {
    let base = SimConfig {
        class_mode: ClassMode::try_from(a.class_mode)?,
        dataset_id: a.dataset_id,
        rng_seed: a.seed,
        distractor: a.distractor.then(Distractor::fan),
        ..SimConfig::default()
    };
    let ids: &[u8] = match a.session {
        SessionArg::One => &[1],
        SessionArg::Two => &[2],
        SessionArg::Both => &[1, 2],
    };
    let sessions = ids
        .iter()
        .map(|&session_id| SimConfig {
            session_id,
            distractor: base.distractor.or((session_id == 2).then(Distractor::fan)),
            ..base.clone()
        })
        .collect::<Vec<_>>();
    for s in &sessions {
        s.validate()?;
    }
    Ok(SimulateConfig {
        out: a.out,
        participants: a.participants,
        per_class: a.per_class,
        sessions,
    })
}

fn experiment(
    split: &SplitArgs,
    fit: &FitArgs,
    feats: &FeatureArgs,
    class_mode: ClassMode,
    seed: u64,
) -> Result<ExperimentSpec> {
    Ok(ExperimentSpec {
        protocol: protocol(split)?,
        class_mode,
        features: features(feats)?,
        train: train_config(fit),
        seed,
        ..ExperimentSpec::default()
    })
}

fn eval_config(a: EvalArgs) -> Result<EvalConfig> {
    let mut methods = a
        .methods
        .iter()
        .map(|m| m.parse::<MethodSpec>())
        .collect::<spt_core::Result<Vec<_>>>()?;
    if matches!(a.aug, OnOff::Off) {
        methods.retain(|m| !m.augmented);
    }
    if methods.is_empty() {
        return Err(CliError::Usage("no methods left to evaluate".into()));
    }
    let spec = ExperimentSpec {
        methods,
        runs_per_config: a.runs,
        session_filter: match a.session {
            SessionArg::One => Some(1),
            SessionArg::Two => Some(2),
            SessionArg::Both => None,
        },
        max_splits: a.max_splits,
        ..experiment(
            &a.split,
            &a.fit,
            &a.features,
            class_mode(a.class_mode, &a.manifest)?,
            a.seed,
        )?
    };
    spec.validate()?;
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(EvalConfig {
        manifest: a.manifest,
        out: a.out,
        jobs: a.jobs,
        experiment: spec,
    })
}

fn train_run_config(a: TrainArgs) -> Result<TrainRunConfig> {
    let spec = experiment(
        &a.split,
        &a.fit,
        &a.features,
        class_mode(a.class_mode, &a.manifest)?,
        a.seed,
    )?;
    spec.validate()?;
    Ok(TrainRunConfig {
        manifest: a.manifest,
        out: a.out,
        method: MethodSpec {
            architecture: architecture(a.arch),
            augmented: matches!(a.aug, OnOff::On),
        },
        split_index: a.split_index,
        experiment: spec,
    })
}

pub fn resolve(cmd: Command) -> Result<Resolved> {
    Ok(match cmd {
        Command::Simulate(a) => Resolved::Simulate(simulate_config(a)?),
        Command::Featurize(a) => Resolved::Featurize(FeaturizeConfig {
            source: source(&a.source)?,
            out: a.out,
            view: match a.view {
                ViewArg::Td => View::Td,
                ViewArg::Wrtft => View::Wrtft,
            },
            features: FeatureConfig {
                standardize: !a.raw,
                ..features(&a.features)?
            },
        }),
        Command::AugmentPreview(a) => Resolved::AugmentPreview(AugmentPreviewConfig {
            source: source(&a.source)?,
            out: a.out,
            ws: a.ws,
            augment: AugmentSpec {
                rng_seed: a.seed,
                ..AugmentSpec::default()
            },
        }),
        Command::Train(a) => Resolved::Train(train_run_config(a)?),
        Command::Eval(a) => Resolved::Eval(eval_config(a)?),
        Command::Report(a) => Resolved::Report(ReportConfig {
            input: a.input,
            out: a.out,
        }),
    })
}

pub fn execute(r: &Resolved) -> Result<()> {
    match r {
        Resolved::Simulate(c) => simulate(c),
        Resolved::Featurize(c) => featurize(c),
        Resolved::AugmentPreview(c) => augment_preview(c),
        Resolved::Train(c) => train_one(c),
        Resolved::Eval(c) => eval(c),
        Resolved::Report(c) => report(c),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Write {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Write {
        path: path.to_path_buf(),
        source: e,
    })
}

fn csv_of(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn manifest_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

fn load_dataset(manifest: &Path) -> Result<Vec<LabeledSample>> {
    let m = DatasetManifest::load(manifest)?;
    Ok(m.load_samples(manifest_dir(manifest))?)
}

fn load_frames(src: &SampleSource) -> Result<RadarFrameMatrix> {
    match (&src.input, &src.manifest) {
        (Some(path), _) => Ok(read_frames(path)?),
        (None, Some(manifest)) => {
            let m = DatasetManifest::load(manifest)?;
            let entry = m.entries.get(src.index).ok_or_else(|| {
                CliError::Usage(format!(
                    "--index {} outside a {}-entry manifest",
                    src.index,
                    m.entries.len()
                ))
            })?;
            Ok(read_sample(entry, manifest_dir(manifest))?.frames)
        }
        (None, None) => Err(CliError::Usage(
            "one of --input or --manifest is required".into(),
        )),
    }
}

fn simulate(c: &SimulateConfig) -> Result<()> {
    create_dir(&c.out)?;
    let mut entries = Vec::new();
    for cfg in &c.sessions {
        let samples = synth_dataset(cfg, c.participants, c.per_class)?;
        let mut counter: BTreeMap<(u32, &str), usize> = BTreeMap::new();
        for s in &samples {
            let k = counter
                .entry((s.participant_id, s.label.token()))
                .or_default();
            let file = format!(
                "p{:03}_s{}_{}_{:02}.uwbf",
                s.participant_id, s.session_id, s.label, k
            );
            *k += 1;
            write_sample(s, &c.out.join(&file))?;
            entries.push(manifest_entry(s, file));
        }
    }
    let first = &c.sessions[0];
    let manifest = DatasetManifest {
        class_mode: first.class_mode,
        radar_config: first.radar.clone(),
        entries,
    };
    let path = c.out.join("manifest.json");
    manifest.save(&path)?;
    eprintln!(
        "wrote {} samples and {}",
        manifest.entries.len(),
        path.display()
    );
    Ok(())
}

fn featurize(c: &FeaturizeConfig) -> Result<()> {
    let frames = load_frames(&c.source)?;
    let p = preprocess(&frames, c.features.ws)?;
    let v = views_of_cropped(&p.cropped, &c.features)?;
    if let Some(dir) = c.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let img = v.get(c.view);
    write_file(&c.out, csv_of(img).as_bytes())?;
    eprintln!(
        "range window {}..={}, {}x{} image written to {}",
        p.window.start,
        p.window.end,
        img.rows(),
        img.cols(),
        c.out.display()
    );
    Ok(())
}

fn combo_name(ops: &[AugOp]) -> String {
    ops.iter()
        .map(|op| match op {
            AugOp::Ts => "TS",
            AugOp::Rs => "RS",
            AugOp::Tw => "TW",
            AugOp::Mw => "MW",
        })
        .collect::<Vec<_>>()
        .join("-")
}

fn augment_preview(c: &AugmentPreviewConfig) -> Result<()> {
    c.augment.validate()?;
    let frames = load_frames(&c.source)?;
    let cropped = preprocess(&frames, c.ws)?.cropped;
    create_dir(&c.out)?;
    write_file(&c.out.join("original.csv"), csv_of(&cropped).as_bytes())?;
    for (i, ops) in c.augment.combos.iter().enumerate() {
        let x = augment_copy(&cropped, 0, i, &c.augment)?;
        write_file(
            &c.out
                .join(format!("combo_{:02}_{}.csv", i + 1, combo_name(ops))),
            csv_of(&x).as_bytes(),
        )?;
    }
    eprintln!(
        "wrote {} views to {}",
        c.augment.combos.len() + 1,
        c.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    method: String,
    split: usize,
    epochs: usize,
    best_epoch: usize,
    stopped_early: bool,
    test_loss: f64,
    test_accuracy: f64,
}

fn train_one(c: &TrainRunConfig) -> Result<()> {
    let spec = &c.experiment;
    let samples = load_dataset(&c.manifest)?;
    if let Some(bad) = samples.iter().find(|s| !spec.class_mode.allows(s.label)) {
        return Err(spt_core::Error::InvalidLabel(format!(
            "{} in a {}-class run",
            bad.label,
            spec.class_mode.num_classes()
        ))
        .into());
    }
    let meta: Vec<SampleMeta> = samples.iter().map(SampleMeta::from).collect();
    let splits = make_splits(&spec.protocol, &meta, spec.seed)?;
    let split = splits.get(c.split_index).ok_or_else(|| {
        CliError::Usage(format!(
            "--split-index {} but the protocol has {} splits",
            c.split_index,
            splits.len()
        ))
    })?;
    let cropped = crop_samples(&samples, spec.features.ws)?;
    let refs = |idx: &[usize]| {
        idx.iter()
            .map(|&i| &cropped[i])
            .collect::<Vec<&LabeledSample>>()
    };
    let views = c.method.architecture.views();
    let aug = AugmentSpec {
        rng_seed: augment_seed(spec, c.split_index),
        ..spec.augment.clone()
    };
    let (train_set, prov) = build_dataset(
        &refs(&split.train),
        &spec.features,
        c.method.augmented.then_some(&aug),
        views,
    )?;
    let sources: Vec<usize> = prov.iter().map(|&p| split.train[p]).collect();
    check_no_leakage(&sources, &split.val, &split.test)?;
    let (val_set, _) = build_dataset(&refs(&split.val), &spec.features, None, views)?;
    let (test_set, _) = build_dataset(&refs(&split.test), &spec.features, None, views)?;
    let cfg = TrainConfig {
        seed: run_seed(spec, c.split_index, 0),
        ..spec.train
    };
    let fold = FoldData {
        train: &train_set,
        val: &val_set,
        test: &test_set,
        num_classes: spec.class_mode.num_classes(),
    };
    eprintln!(
        "training {} on {} rows, validating on {}",
        c.method,
        train_set.len(),
        val_set.len()
    );
    let (mut model, history) = fit_cnn(&c.method, &fold, &cfg)?;
    let (test_loss, acc) = evaluate(&mut model, &test_set, cfg.batch_size)?;

    create_dir(&c.out)?;
    save_checkpoint(&model, &c.out.join("model.spnw"))?;
    let mut csv = Vec::new();
    history.write_csv(&mut csv).expect("writing to memory");
    write_file(&c.out.join("history.csv"), &csv)?;
    let summary = TrainSummary {
        method: c.method.to_string(),
        split: c.split_index,
        epochs: history.epochs.len(),
        best_epoch: history.best_epoch,
        stopped_early: history.stopped_early,
        test_loss,
        test_accuracy: 100.0 * acc,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&c.out.join("summary.json"), json.as_bytes())?;
    println!("{json}");
    Ok(())
}

fn class_tokens(spec: &ExperimentSpec) -> Vec<&'static str> {
    spec.class_mode
        .classes()
        .iter()
        .map(|c| c.token())
        .collect()
}

fn write_tables(report: &EvalReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut csv = Vec::new();
    report
        .write_summary_csv(&mut csv)
        .expect("writing to memory");
    write_file(&dir.join("summary.csv"), &csv)?;
    let classes = class_tokens(&report.spec);
    let sweep = matches!(report.spec.protocol, Protocol::WindowSweep { .. });
    for m in &report.methods {
        let name = if sweep {
            format!("confusion_{}_ws{}.csv", m.method, m.ws)
        } else {
            format!("confusion_{}.csv", m.method)
        };
        let mut buf = Vec::new();
        m.write_confusion_csv(&classes, &mut buf)
            .expect("writing to memory");
        write_file(&dir.join(name), &buf)?;
    }
    Ok(())
}

fn print_summary(report: &EvalReport) {
    let mut out = std::io::stdout().lock();
    let _ = report.write_summary_csv(&mut out);
    for m in report.methods.iter().filter(|m| m.sessions.len() > 1) {
        for s in &m.sessions {
            let _ = writeln!(
                out,
                "# {} session {}: {:.2}%",
                m.method, s.session, s.mean_acc
            );
        }
    }
}

fn eval(c: &EvalConfig) -> Result<()> {
    let samples = load_dataset(&c.manifest)?;
    let done = AtomicUsize::new(0);
    let progress = |r: &RunResult| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!(
            "[{k}] {} ws {} split {} run {}: {:.2}% ({} epochs, best {})",
            r.method, r.ws, r.split, r.run, r.accuracy, r.epochs, r.best_epoch
        );
    };
    let report = run_experiment(
        &c.experiment,
        &samples,
        &CnnClassifier,
        &RunOptions {
            jobs: c.jobs,
            progress: Some(&progress),
        },
    )?;
    create_dir(&c.out)?;
    write_file(&c.out.join("report.json"), report.to_json()?.as_bytes())?;
    write_tables(&report, &c.out)?;
    print_summary(&report);
    Ok(())
}

fn report(c: &ReportConfig) -> Result<()> {
    let text = fs::read_to_string(&c.input).map_err(|e| spt_core::Error::Io {
        path: c.input.clone(),
        source: e,
    })?;
    let report = EvalReport::from_json(&text)?;
    if let Some(dir) = &c.out {
        write_tables(&report, dir)?;
    }
    print_summary(&report);
    Ok(())
}
