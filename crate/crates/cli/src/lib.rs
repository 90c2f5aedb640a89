//! Command-line front end: train, eval, gradcheck, sigdump and bench.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod config;
pub mod error;
mod run;
mod tools;

pub use config::RunConfig;
pub use error::CliError;

use config::{parse_align, parse_synth, parse_task, SynthConfig, KEYS_HELP};

#[derive(Debug, Parser)]
#[command(name = "sigrnn", version, about = "Signature-gated LSTM/GRU time-series forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one or more models and write checkpoint, history, config and metrics.
    #[command(after_help = KEYS_HELP)]
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the time-normalized signature stream of a CSV path.
    Sigdump(SigdumpArgs),
    /// Time training epochs of several variants under one configuration.
    Bench(BenchArgs),
}

/// Where the data comes from and how it is preprocessed.
#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    /// TOML run configuration (see `train --help` for keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV with a `timestamp` column followed by series columns.
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// Synthetic series: ar1, levy_area, lagged_mean.
    #[arg(long)]
    pub synth: Option<String>,
    /// Rows of the synthetic series.
    #[arg(long)]
    pub synth_n: Option<usize>,
    /// Seed of the synthetic generator.
    #[arg(long)]
    pub synth_seed: Option<u64>,
    /// Preprocessing: volume, abs_returns, minmax.
    #[arg(long)]
    pub task: Option<String>,
    /// Target column.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Forward-fill empty CSV cells instead of rejecting them.
    #[arg(long)]
    pub forward_fill: bool,
    #[arg(long)]
    pub median_window: Option<usize>,
    /// exclusive or inclusive of sample t−h.
    #[arg(long)]
    pub median_align: Option<String>,
    /// Use |log return| instead of |simple return|.
    #[arg(long)]
    pub log_returns: bool,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

impl SourceArgs {
    /// Config file (if any) with these flags applied on top.
    pub fn base_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
            cfg.synth = None;
        }
        if let Some(kind) = &self.synth {
            let kind = parse_synth(kind)?;
            match &mut cfg.synth {
                Some(s) => s.kind = kind,
                None => cfg.synth = Some(SynthConfig::new(kind)),
            }
            cfg.data = None;
        }
        if self.synth_n.is_some() || self.synth_seed.is_some() {
            let Some(s) = &mut cfg.synth else {
                return Err(CliError::Usage("synth-n/synth-seed need a synthetic source".into()));
            };
            if let Some(n) = self.synth_n {
                s.n = n;
            }
            if let Some(seed) = self.synth_seed {
                s.seed = seed;
            }
        }
        if let Some(t) = &self.task {
            cfg.task = Some(parse_task(t)?);
        }
        if let Some(t) = &self.target {
            cfg.target = Some(t.clone());
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if self.forward_fill {
            cfg.missing = sigrnn::data::MissingPolicy::ForwardFill;
        }
        if let Some(w) = self.median_window {
            cfg.median_window = w;
        }
        if let Some(a) = &self.median_align {
            cfg.median_align = parse_align(a)?;
        }
        if self.log_returns {
            cfg.returns = sigrnn::data::ReturnKind::Log;
        }
        if let Some(f) = self.test_fraction {
            cfg.test_fraction = f;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Variant: lstm, gru, sig_lstm[-M...], sig_gru[-M...].
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Signature projection dimension (5 or 10).
    #[arg(long)]
    pub proj: Option<usize>,
    /// Layer count of baseline variants.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Head reads the hidden states of every timestep.
    #[arg(long)]
    pub flatten: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Output directory; each invocation creates a fresh run directory inside.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    pub patience: Option<usize>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl TrainArgs {
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.source.base_config()?;
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(h) = self.hidden {
            cfg.hidden = h;
        }
        if let Some(p) = self.proj {
            cfg.proj = p;
        }
        if let Some(l) = self.layers {
            cfg.layers = l;
        }
        if self.flatten {
            cfg.flatten = true;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr_init = lr;
        }
        if let Some(p) = self.patience {
            cfg.train.early_stop_patience = p;
        }
        cfg.resolve()
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the metrics as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Variant to check, e.g. sig_lstm or sig_gru-3-2.
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Layer count of baseline variants.
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long)]
    pub flatten: bool,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Test hook: perturb the analytic gradient of this block.
    #[arg(long, hide = true)]
    pub corrupt_block: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SigdumpArgs {
    /// CSV with a `timestamp` column; all other columns form the path.
    #[arg(long)]
    pub csv: PathBuf,
    /// Truncation depth (1..=4).
    #[arg(long)]
    pub depth: usize,
    /// Project the path to this many channels with a seeded random map first.
    #[arg(long)]
    pub proj: Option<usize>,
    /// Seed of the projection.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit the raw prefix signatures instead of the time-normalized ones.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub forward_fill: bool,
    /// Output file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated variants, timed in order.
    #[arg(long, default_value = "lstm,sig_lstm,gru,sig_gru", value_delimiter = ',')]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5)]
    pub proj: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long)]
    pub flatten: bool,
    /// Timed epochs per variant (early stopping disabled).
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => run::train(&a, out).map(|_| ()),
        Command::Eval(a) => run::eval(&a, out).map(|_| ()),
        Command::Gradcheck(a) => tools::gradcheck(&a, out),
        Command::Sigdump(a) => tools::sigdump(&a, out),
        Command::Bench(a) => tools::bench(&a, out).map(|_| ()),
    }
}

pub use run::{eval, train, EvalMetrics, RunMetrics, TrainOutcome};
pub use tools::{bench, gradcheck, gradcheck_instance, sigdump, BenchRow, GRADCHECK_TOLERANCE};
