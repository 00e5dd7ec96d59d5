//! Command-line surface.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 I/O or
//! format error, 4 infeasible utterances.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::combiners::CombinerKind;
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_hypotheses};
use crate::feature_store::{read_features, synth_corpus, Manifest, SynthConfig};
use crate::trainer::{train, TrainConfig};

/// Configuration file layout: both sections optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ssl-ensemble", version, about = "Train and score CTC heads over ensembles of frozen speech features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus of complementary feature streams.
    Synth(SynthArgs),
    /// Train a head on a manifest.
    Train(TrainArgs),
    /// Decode a manifest with a checkpoint and print WER/CER.
    Eval(EvalArgs),
    /// Print the header and payload checksum of a feature file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alphabet_size: Option<usize>,
    #[arg(long)]
    num_models: Option<usize>,
    /// Comma-separated embedding widths, one per model.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long)]
    frames_per_char: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Comma-separated character sets, one per model (e.g. `abcd,efgh`).
    #[arg(long, value_delimiter = ',')]
    informative_sets: Vec<String>,
    #[arg(long)]
    num_utterances: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    model_tags: Vec<String>,
    /// Also write `train.jsonl` and `test.jsonl`, holding out the last N utterances.
    #[arg(long)]
    test_utterances: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Two encoder layers.
    Indomain,
    /// Eight encoder layers.
    Mismatched,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated model tags; all manifest tags when omitted.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// concat, sum, weighted or attention.
    #[arg(long)]
    combiner: Option<String>,
    #[arg(long)]
    d_c: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    /// Force sinusoidal positions on or off.
    #[arg(long)]
    positions: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Disable length-sorted batching.
    #[arg(long)]
    no_sort: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    hyp_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    features: PathBuf,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_list<T: Clone>(slot: &mut Vec<T>, value: &[T]) {
    if !value.is_empty() {
        *slot = value.to_vec();
    }
}

impl SynthArgs {
    fn resolve(&self) -> Result<SynthConfig> {
        let mut cfg = CliConfig::load_opt(self.config.as_deref())?.synth;
        set(&mut cfg.alphabet_size, self.alphabet_size);
        set(&mut cfg.num_models, self.num_models);
        set_list(&mut cfg.dims, &self.dims);
        set(&mut cfg.frames_per_char, self.frames_per_char);
        set(&mut cfg.noise_sigma, self.noise_sigma);
        set_list(&mut cfg.informative_sets, &self.informative_sets);
        set(&mut cfg.num_utterances, self.num_utterances);
        set(&mut cfg.utterance_len_range.0, self.min_len);
        set(&mut cfg.utterance_len_range.1, self.max_len);
        set(&mut cfg.seed, self.seed);
        set_list(&mut cfg.model_tags, &self.model_tags);
        Ok(cfg)
    }
}

impl TrainArgs {
    /// Defaults, then the config file, then the preset, then explicit flags.
    fn resolve(&self, manifest: &Manifest) -> Result<TrainConfig> {
        let mut cfg = CliConfig::load_opt(self.config.as_deref())?.train;
        match self.preset {
            Some(Preset::Indomain) => cfg.num_layers = 2,
            Some(Preset::Mismatched) => cfg.num_layers = 8,
            None => {}
        }
        set_list(&mut cfg.model_tags, &self.models);
        if cfg.model_tags.is_empty() {
            cfg.model_tags = manifest.model_tags.clone();
        }
        if let Some(c) = &self.combiner {
            cfg.combiner = c.parse::<CombinerKind>()?;
        }
        set(&mut cfg.d_c, self.d_c);
        set(&mut cfg.num_layers, self.encoder_layers);
        set(&mut cfg.d_model, self.d_model);
        set(&mut cfg.num_heads, self.heads);
        if self.d_ff.is_some() {
            cfg.d_ff = self.d_ff;
        }
        set(&mut cfg.dropout, self.dropout);
        if self.positions.is_some() {
            cfg.positions = self.positions;
        }
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.learning_rate, self.lr);
        set(&mut cfg.batch_size, self.batch);
        set(&mut cfg.seed, self.seed);
        if self.clip_norm.is_some() {
            cfg.clip_norm = self.clip_norm;
        }
        if self.no_sort {
            cfg.sort_by_length = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("standard output", e)
}

fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.resolve()?;
    let manifest = synth_corpus(&cfg, &args.out)?;
    writeln!(out, "manifest {}", args.out.join("manifest.jsonl").display()).map_err(out_err)?;
    if let Some(n) = args.test_utterances {
        let cut = manifest.records.len().checked_sub(n).ok_or_else(|| {
            Error::InvalidConfig(format!("cannot hold out {n} of {} utterances", manifest.records.len()))
        })?;
        let (train_part, test_part) = manifest.split_at(cut)?;
        for (name, part) in [("train.jsonl", train_part), ("test.jsonl", test_part)] {
            let path = args.out.join(name);
            part.save(&path)?;
            writeln!(out, "manifest {}", path.display()).map_err(out_err)?;
        }
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let cfg = args.resolve(&manifest)?;
    let report = train(&manifest, &cfg, &args.out, out)?;
    let total: f64 = report.epoch_seconds.iter().sum();
    writeln!(out, "checkpoint {} seconds {total:.3}", args.out.display()).map_err(out_err)
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let report = evaluate(&manifest, &args.checkpoint)?;
    if let Some(path) = &args.hyp_out {
        write_hypotheses(path, &report.results)?;
    }
    writeln!(out, "{report}").map_err(out_err)
}

fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let fm = read_features(&args.features)?;
    writeln!(
        out,
        "model_tag {}\ndim {}\nnum_frames {}\nframe_stride_ms {}\nchecksum {}",
        fm.model_tag,
        fm.dim,
        fm.num_frames,
        fm.frame_stride_ms,
        fm.payload_checksum()
    )
    .map_err(out_err)
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Normal output goes to `out`, errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
