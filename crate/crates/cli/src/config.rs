//! Run configuration: TOML file keys, command-line overrides, resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigrnn::cells::{ModelConfig, Variant};
use sigrnn::data::{
    prepare, MedianAlign, MissingPolicy, PreprocessSpec, Prepared, ReturnKind, SeriesFrame, SynthKind,
    SynthParams, Task, SYNTH_TARGET,
};
use sigrnn::training::TrainConfig;

use crate::error::CliError;

/// Synthetic source, the `[synth]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    #[serde(default = "default_synth_n")]
    pub n: usize,
    /// Seed of the generator (independent of the training seed).
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ar_coef")]
    pub ar_coef: f64,
    #[serde(default = "default_mean_window")]
    pub mean_window: usize,
    #[serde(default = "default_area_window")]
    pub area_window: usize,
}

fn default_synth_n() -> usize {
    2000
}
fn default_ar_coef() -> f64 {
    SynthParams::default().ar_coef
}
fn default_mean_window() -> usize {
    SynthParams::default().mean_window
}
fn default_area_window() -> usize {
    SynthParams::default().area_window
}

impl SynthConfig {
    pub fn new(kind: SynthKind) -> Self {
        Self {
            kind,
            n: default_synth_n(),
            seed: 0,
            ar_coef: default_ar_coef(),
            mean_window: default_mean_window(),
            area_window: default_area_window(),
        }
    }

    pub fn params(&self) -> SynthParams {
        SynthParams {
            ar_coef: self.ar_coef,
            mean_window: self.mean_window,
            area_window: self.area_window,
        }
    }
}

/// Every key a run understands. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model variant string, e.g. `gru`, `sig_lstm-3-2`.
    pub model: String,
    pub hidden: usize,
    /// Signature projection dimension (5 or 10).
    pub proj: usize,
    /// Layer count of baseline variants.
    pub layers: usize,
    pub flatten: bool,
    pub horizon: usize,
    /// Training seed; repeat `i` uses `seed + i`.
    pub seed: u64,
    pub repeats: usize,
    pub out: PathBuf,
    /// `volume`, `abs_returns` or `minmax`; defaults to `minmax` for synthetic
    /// sources and `volume` for CSV files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub missing: MissingPolicy,
    pub median_window: usize,
    pub median_align: MedianAlign,
    pub returns: ReturnKind,
    pub test_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = PreprocessSpec::new(Task::Minmax, 1, "");
        Self {
            model: "gru".into(),
            hidden: 100,
            proj: 5,
            layers: 1,
            flatten: false,
            horizon: 1,
            seed: 0,
            repeats: 1,
            out: PathBuf::from("runs"),
            task: None,
            data: None,
            target: None,
            missing: MissingPolicy::default(),
            median_window: spec.median_window,
            median_align: spec.median_align,
            returns: spec.returns,
            test_fraction: spec.test_fraction,
            synth: None,
            train: TrainConfig::default(),
        }
    }
}

pub const KEYS_HELP: &str = "\
Config file keys (TOML; command-line flags override them):
  model = \"gru\"            variant: lstm, gru, sig_lstm[-M...], sig_gru[-M...]
  hidden = 100             hidden units per layer
  proj = 5                 signature projection dimension (5 or 10)
  layers = 1               layer count of baseline variants
  flatten = false          head reads every timestep's hidden state
  horizon = 1              prediction horizon h (sequence length max(45, 5h))
  seed = 0                 training seed; repeat i uses seed + i
  repeats = 1              independent training runs
  out = \"runs\"             output directory
  task = \"volume\"          volume | abs_returns | minmax
  data = \"prices.csv\"      CSV source (timestamp + series columns), or:
  [synth]                  kind = ar1 | levy_area | lagged_mean, n, seed,
                           ar_coef, mean_window, area_window
  target = \"BTC\"           target column (default `target` for synth)
  missing = \"reject\"       reject | forward_fill
  median_window = 336      moving-median window (volume task)
  median_align = \"exclusive\"  exclusive | inclusive
  returns = \"simple\"       simple | log (abs_returns task)
  test_fraction = 0.2      trailing test share of windows
  [train]                  batch_size, max_epochs, early_stop_patience,
                           early_stop_min_delta, lr_init, plateau_factor,
                           plateau_patience, lr_min, val_fraction";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Fills defaults that depend on the source and checks every key.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let usage = |key: &str, why: String| Err(CliError::Usage(format!("{key}: {why}")));
        match (&self.data, &self.synth) {
            (Some(_), Some(_)) => return usage("data", "give either `data` or `[synth]`, not both".into()),
            (None, None) => return usage("data", "no data source; set `data` or `[synth]`".into()),
            _ => {}
        }
        let synthetic = self.synth.is_some();
        self.task.get_or_insert(if synthetic { Task::Minmax } else { Task::Volume });
        if self.target.is_none() {
            if synthetic {
                self.target = Some(SYNTH_TARGET.into());
            } else {
                return usage("target", "required for CSV data".into());
            }
        }
        Variant::parse(&self.model).map_err(|e| CliError::Usage(format!("model: {e}")))?;
        if self.hidden == 0 {
            return usage("hidden", "must be >= 1".into());
        }
        if self.proj != 5 && self.proj != 10 {
            return usage("proj", format!("must be 5 or 10, got {}", self.proj));
        }
        if self.layers == 0 {
            return usage("layers", "must be >= 1".into());
        }
        if self.repeats == 0 {
            return usage("repeats", "must be >= 1".into());
        }
        if let Some(s) = &self.synth {
            if s.n < 200 {
                return usage("synth.n", format!("must be >= 200, got {}", s.n));
            }
        }
        self.train.seed = self.seed;
        self.train
            .validate()
            .map_err(|e| CliError::Usage(format!("train.{}", e.to_string().trim_start_matches("invalid configuration: "))))?;
        self.preprocess_spec()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(self)
    }

    pub fn preprocess_spec(&self) -> PreprocessSpec {
        PreprocessSpec {
            task: self.task.unwrap_or(Task::Minmax),
            horizon: self.horizon,
            target_column: self.target.clone().unwrap_or_default(),
            median_window: self.median_window,
            median_align: self.median_align,
            returns: self.returns,
            val_fraction: self.train.val_fraction,
            test_fraction: self.test_fraction,
        }
    }

    pub fn load_frame(&self) -> Result<SeriesFrame, CliError> {
        match (&self.data, &self.synth) {
            (Some(path), _) => Ok(SeriesFrame::read_csv_path(path, self.missing)?),
            (None, Some(s)) => Ok(sigrnn::data::synth_generate_with(s.kind, s.n, s.seed, &s.params())?),
            (None, None) => Err(CliError::Usage("no data source".into())),
        }
    }

    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let frame = self.load_frame()?;
        Ok(prepare(&frame, &self.preprocess_spec())?)
    }

    pub fn model_config(&self, input_dim: usize, seq_len: usize) -> Result<ModelConfig, CliError> {
        let variant = Variant::parse(&self.model).map_err(|e| CliError::Usage(format!("model: {e}")))?;
        variant
            .model_config(input_dim, seq_len, self.hidden, self.proj, self.layers, self.flatten)
            .map_err(|e| CliError::Usage(format!("model: {e}")))
    }
}

pub fn parse_task(s: &str) -> Result<Task, CliError> {
    Task::parse(s).ok_or_else(|| {
        CliError::Usage(format!("task: unknown `{s}`; valid tasks: volume, abs_returns, minmax"))
    })
}

pub fn parse_synth(s: &str) -> Result<SynthKind, CliError> {
    SynthKind::parse(s).ok_or_else(|| {
        CliError::Usage(format!("synth: unknown `{s}`; valid kinds: ar1, levy_area, lagged_mean"))
    })
}

pub fn parse_align(s: &str) -> Result<MedianAlign, CliError> {
    match s {
        "exclusive" => Ok(MedianAlign::Exclusive),
        "inclusive" => Ok(MedianAlign::Inclusive),
        _ => Err(CliError::Usage(format!(
            "median_align: unknown `{s}`; valid: exclusive, inclusive"
        ))),
    }
}
