//! `drumscribe`: dataset generation, training, transcription and evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drumscribe_core::{ModelKind, SchemaName};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "drumscribe", version, about = "Drum transcription toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, balance and split synthetic datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Cross-validated training with threshold selection and evaluation.
    Train(TrainArgs),
    /// Transcribe WAV files with a trained checkpoint.
    Transcribe(TranscribeArgs),
    /// Score a directory of predicted onset files against references.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write a generated MIDI corpus.
    ToyCorpus(ToyCorpusArgs),
    /// Render a MIDI corpus into audio, annotations and a manifest.
    Build(BuildArgs),
    /// Swap instruments between tracks to even out class counts.
    Balance(BalanceArgs),
    /// Assign soundfont-group splits and cross-validation folds.
    Split(SplitArgs),
}

/// Dataset directory; also settable through `DRUMSCRIBE_WORKDIR`.
#[derive(Args, Serialize, Deserialize, Default)]
pub struct Workdir {
    #[arg(long, env = "DRUMSCRIBE_WORKDIR")]
    pub workdir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct ToyCorpusArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory for the .mid files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_tracks: Option<usize>,
    /// Probability that a four-bar section rides the ride cymbal instead of the hi-hat.
    #[arg(long)]
    pub ride_prob: Option<f64>,
    #[arg(long)]
    pub min_duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct BuildArgs {
    /// Replay a saved run config; flags given here override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory of .mid/.midi files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub workdir: Workdir,
    /// Label schema: 3, 8 or 18 classes.
    #[arg(long)]
    pub schema: Option<SchemaName>,
    /// `toy`, or `external:<command with {midi_in} and {wav_out}>`.
    #[arg(long)]
    pub renderer: Option<String>,
    /// Soundfont ids assigned round-robin to the files.
    #[arg(long, value_delimiter = ',')]
    pub soundfonts: Option<Vec<u32>>,
    /// Also render drums-only twins for training.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub solos: Option<bool>,
    /// Replacement GM note map (CSV).
    #[arg(long)]
    pub gm_map: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct BalanceArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub workdir: Workdir,
    /// Replacement swap-rule list (CSV).
    #[arg(long)]
    pub swap_rules: Option<PathBuf>,
    #[arg(long)]
    pub gm_map: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub workdir: Workdir,
    /// Soundfont groups, e.g. `0,3;1,4;2,5`.
    #[arg(long)]
    pub groups: Option<String>,
    /// Share of each training pool held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub workdir: Workdir,
    /// Experiment output directory (default: <workdir>/runs/<model>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// `full` for the reference layer widths, `desk` for the reduced ones.
    #[arg(long)]
    pub size: Option<String>,
    /// Must match the dataset's schema when given.
    #[arg(long)]
    pub schema: Option<SchemaName>,
    /// Folds to run (test split indices); all by default.
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub widen_targets: Option<bool>,
    /// Peak-picking window sizes in frames.
    #[arg(long)]
    pub peak_m: Option<usize>,
    #[arg(long)]
    pub peak_a: Option<usize>,
    #[arg(long)]
    pub peak_w: Option<usize>,
    /// Candidate thresholds for validation selection.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Onset matching tolerance in seconds.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Compute missing features (default) or fail.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub auto_featurize: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct TranscribeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// WAV files to transcribe.
    #[arg(required_unless_present = "config")]
    #[serde(default)]
    pub audio: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Fail unless the checkpoint uses this schema.
    #[arg(long)]
    pub schema: Option<SchemaName>,
    /// Peak threshold; the checkpoint's selected value by default.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Output directory for `<stem>.txt` onset files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `<stem>.activations.csv`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub activations: Option<bool>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory of predicted onset files.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Directory of reference onset files with the same stems.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Class set; inferred from the labels present when omitted.
    #[arg(long)]
    pub schema: Option<SchemaName>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Tolerance for the pseudo-confusion matrices (default: --tolerance).
    #[arg(long)]
    pub confusion_tolerance: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Dataset(DatasetCommand::ToyCorpus(a)) => commands::toy_corpus(a),
        Command::Dataset(DatasetCommand::Build(a)) => commands::build(a),
        Command::Dataset(DatasetCommand::Balance(a)) => commands::balance(a),
        Command::Dataset(DatasetCommand::Split(a)) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Transcribe(a) => commands::transcribe(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
