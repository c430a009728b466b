//! `spt`: simulation, feature dumps, training and experiment runs for sleep
//! postural transition recognition from UWB radar frames.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Resolved;

#[derive(Parser)]
#[command(
    name = "spt",
    version,
    about = "Sleep postural transition recognition from UWB radar frames",
    args_conflicts_with_subcommands = true
)]
struct Cli {
    /// Replays a resolved configuration previously echoed by any subcommand.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a simulated dataset: one UWBF file per sample plus a manifest.
    Simulate(SimulateArgs),
    /// Dumps the WRTFT or TD image of one sample as CSV.
    Featurize(FeaturizeArgs),
    /// Writes the cropped window of one sample under every augmentation combo.
    AugmentPreview(AugmentPreviewArgs),
    /// Trains one network on one split and saves its checkpoint and history.
    Train(TrainArgs),
    /// Runs an evaluation protocol and writes the report.
    Eval(EvalArgs),
    /// Prints the summary of a saved report and optionally re-exports its CSVs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Unseen,
    Seen5,
    Sweep,
    Lopo,
    Seen6,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Td,
    Wrtft,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Spn,
    Td,
    Wrtft,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum SessionArg {
    One,
    Two,
    Both,
}

fn parse_session(s: &str) -> Result<SessionArg, String> {
    match s {
        "1" => Ok(SessionArg::One),
        "2" => Ok(SessionArg::Two),
        "both" => Ok(SessionArg::Both),
        other => Err(format!("expected 1, 2 or both, got `{other}`")),
    }
}

fn parse_class_mode(s: &str) -> Result<u8, String> {
    match s {
        "4" => Ok(4),
        "5" => Ok(5),
        other => Err(format!("expected 4 or 5, got `{other}`")),
    }
}

#[derive(Args, Clone)]
struct FeatureArgs {
    /// Range window size in bins.
    #[arg(long, default_value_t = 40)]
    ws: usize,
    #[arg(long, default_value_t = 32)]
    stft_seg: usize,
    #[arg(long, default_value_t = 4)]
    stft_hop: usize,
    #[arg(long, default_value_t = 64)]
    stft_fft: usize,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// A single UWBF sample file.
    #[arg(long, conflicts_with = "manifest")]
    input: Option<PathBuf>,
    /// Dataset manifest; pick the sample with `--index`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args, Clone)]
struct FitArgs {
    #[arg(long, default_value_t = 300)]
    max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Args, Clone)]
struct SplitArgs {
    #[arg(long, value_enum, default_value = "unseen")]
    protocol: ProtocolArg,
    /// Train, validation and test participant counts for `unseen`.
    #[arg(long, value_delimiter = ',', default_values_t = [18, 4, 4])]
    partition: Vec<usize>,
    /// Number of random partitions for `unseen`.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Window sizes for `sweep`.
    #[arg(long, value_delimiter = ',', default_values_t = [30, 35, 40, 45, 50, 55, 60])]
    ws_list: Vec<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 26)]
    participants: u32,
    #[arg(long, default_value_t = 5)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_class_mode, default_value = "4")]
    class_mode: u8,
    /// Session 2 adds a swinging distractor to the room.
    #[arg(long, value_parser = parse_session, default_value = "1")]
    session: SessionArg,
    /// Adds the distractor to every session.
    #[arg(long)]
    distractor: bool,
    #[arg(long, default_value_t = 1)]
    dataset_id: u32,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "wrtft")]
    view: ViewArg,
    /// Skips per-image standardisation.
    #[arg(long)]
    raw: bool,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args)]
struct AugmentPreviewArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    ws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "spn")]
    arch: ArchArg,
    #[arg(long, value_enum, default_value = "on")]
    aug: OnOff,
    #[command(flatten)]
    split: SplitArgs,
    /// Which split of the protocol to train on.
    #[arg(long, default_value_t = 0)]
    split_index: usize,
    /// Defaults to the manifest's class mode.
    #[arg(long, value_parser = parse_class_mode)]
    class_mode: Option<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Comma-separated: spn, td, wrtft, each optionally suffixed `+aug`.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "spn+aug,td+aug,wrtft+aug,spn,td,wrtft"
    )]
    methods: Vec<String>,
    /// `off` drops the augmented methods.
    #[arg(long, value_enum, default_value = "on")]
    aug: OnOff,
    /// Defaults to the manifest's class mode.
    #[arg(long, value_parser = parse_class_mode)]
    class_mode: Option<u8>,
    /// Test-set session; training and validation always use both.
    #[arg(long, value_parser = parse_session, default_value = "both")]
    session: SessionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Evaluates only the first splits of the protocol.
    #[arg(long)]
    max_splits: Option<usize>,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// A report written by `eval`.
    #[arg(long)]
    input: PathBuf,
    /// Directory for summary and confusion CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let resolved = match (cli.config, cli.command) {
        (Some(path), None) => commands::load_resolved(&path),
        (None, Some(cmd)) => commands::resolve(cmd),
        _ => Err(commands::CliError::Usage(
            "a subcommand or --config is required".into(),
        )),
    };
    let outcome = resolved.and_then(|r: Resolved| {
        println!(
            "{}",
            serde_json::to_string_pretty(&r).expect("config serializes")
        );
        commands::execute(&r)
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                commands::ErrorKind::Usage => EXIT_USAGE,
                commands::ErrorKind::Data => EXIT_DATA,
                commands::ErrorKind::Runtime => EXIT_RUNTIME,
            })
        }
    }
}
