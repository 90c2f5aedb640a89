//! CSV ingestion, preprocessing pipelines, windowing, and synthetic series.
//!
//! The input dialect is a header row whose first column is `timestamp`
//! (integer epoch seconds, strictly increasing), followed by one numeric
//! column per series.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor3};

/// Timestamped, equally long named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    timestamps: Vec<i64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

/// What to do with empty cells while reading CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    ForwardFill,
}

impl SeriesFrame {
    pub fn new(timestamps: Vec<i64>, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Data(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if columns.is_empty() {
            return Err(Error::Data("frame needs at least one series column".into()));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != timestamps.len() {
                return Err(Error::Data(format!(
                    "column `{name}` has {} rows, timestamps have {}",
                    col.len(),
                    timestamps.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("column `{name}` row {i}: non-finite value")));
            }
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "timestamps must be strictly increasing (row {})",
                i + 1
            )));
        }
        Ok(Self {
            timestamps,
            names,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.columns[i].as_slice())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Mutable access for tests and perturbation experiments.
    pub fn column_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.columns[idx]
    }

    pub fn read_csv<R: Read>(reader: R, missing: MissingPolicy) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("timestamp") {
            return Err(Error::Data("first CSV column must be `timestamp`".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut timestamps = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            let ts = rec.get(0).unwrap_or("").trim();
            let ts: i64 = ts
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad timestamp `{ts}`")))?;
            timestamps.push(ts);
            for (c, col) in columns.iter_mut().enumerate() {
                let cell = rec.get(c + 1).unwrap_or("").trim();
                if cell.is_empty() {
                    match (missing, col.last()) {
                        (MissingPolicy::ForwardFill, Some(&prev)) => col.push(prev),
                        _ => {
                            return Err(Error::Data(format!(
                                "line {line}: missing value in column `{}`",
                                names[c]
                            )))
                        }
                    }
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("line {line}: bad number `{cell}` in `{}`", names[c]))
                })?;
                col.push(v);
            }
        }
        Self::new(timestamps, names, columns)
    }

    pub fn read_csv_path(path: &Path, missing: MissingPolicy) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::read_csv(file, missing)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec = vec![self.timestamps[r].to_string()];
            rec.extend(self.columns.iter().map(|c| c[r].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Keeps rows `range`.
    pub fn slice_rows(&self, range: Range<usize>) -> SeriesFrame {
        SeriesFrame {
            timestamps: self.timestamps[range.clone()].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise transforms

/// Which sample closes the trailing median window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianAlign {
    /// Window `x_{t-h-W} … x_{t-h-1}`.
    #[default]
    Exclusive,
    /// Window `x_{t-h-W+1} … x_{t-h}`.
    Inclusive,
}

/// Number of leading samples without enough history for the median.
pub fn median_warmup(window: usize, horizon: usize, align: MedianAlign) -> usize {
    match align {
        MedianAlign::Exclusive => window + horizon,
        MedianAlign::Inclusive => window + horizon - 1,
    }
}

fn median(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, &mut upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = buf[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// `x_t` divided by the median of a trailing window shifted back by the
/// horizon. Output element `k` corresponds to input index
/// `k + median_warmup(window, horizon, align)`.
pub fn moving_median_scale(series: &[f64], window: usize, horizon: usize, align: MedianAlign) -> Result<Vec<f64>> {
    if window == 0 || horizon == 0 {
        return Err(Error::Config("median window and horizon must be >= 1".into()));
    }
    let start = median_warmup(window, horizon, align);
    if series.len() <= start {
        return Err(Error::Data(format!(
            "moving median needs more than {start} samples, got {}",
            series.len()
        )));
    }
    let mut buf = vec![0.0; window];
    (start..series.len())
        .map(|t| {
            let end = match align {
                MedianAlign::Exclusive => t - horizon,
                MedianAlign::Inclusive => t - horizon + 1,
            };
            buf.copy_from_slice(&series[end - window..end]);
            let m = median(&mut buf);
            if m == 0.0 {
                return Err(Error::Data(format!(
                    "zero moving median at index {t}; series is degenerate"
                )));
            }
            Ok(series[t] / m)
        })
        .collect()
}

/// Min-max scaler fit on a training segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(train: &[f64]) -> Result<Self> {
        let min = train.iter().copied().fold(f64::INFINITY, f64::min);
        let max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::Data(format!(
                "degenerate training range for min-max scaling (min {min}, max {max})"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }
}

pub fn minmax_scale(train: &[f64], full: &[f64]) -> Result<Vec<f64>> {
    let s = MinMaxScaler::fit(train)?;
    Ok(full.iter().map(|&x| s.transform(x)).collect())
}

/// Divides by the training maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxScaler {
    pub max: f64,
}

impl MaxScaler {
    pub fn fit(train: &[f64]) -> Result<Self> {
        let max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0) {
            return Err(Error::Data(format!(
                "max scaling needs a positive training maximum, got {max}"
            )));
        }
        Ok(Self { max })
    }

    pub fn transform(&self, x: f64) -> f64 {
        x / self.max
    }
}

pub fn max_scale(train: &[f64], full: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = full.iter().find(|v| **v < 0.0) {
        return Err(Error::Data(format!("max scaling expects non-negative values, got {v}")));
    }
    let s = MaxScaler::fit(train)?;
    Ok(full.iter().map(|&x| s.transform(x)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    /// `|p_t / p_{t-1} − 1|`
    #[default]
    Simple,
    /// `|ln(p_t / p_{t-1})|`
    Log,
}

/// Absolute one-step returns; output has one element fewer than `prices`.
pub fn abs_returns(prices: &[f64], kind: ReturnKind) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::Data("returns need at least two prices".into()));
    }
    if let Some(i) = prices.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Data(format!(
            "non-positive price {} at index {i}",
            prices[i]
        )));
    }
    Ok(prices
        .windows(2)
        .map(|w| match kind {
            ReturnKind::Simple => (w[1] / w[0] - 1.0).abs(),
            ReturnKind::Log => (w[1] / w[0]).ln().abs(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Windowing

/// Preprocessing pipeline applied to every column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Moving-median scaling, then min-max fit on the training rows.
    Volume,
    /// Absolute returns, then max scaling fit on the training rows.
    AbsReturns,
    /// Min-max fit on the training rows only (synthetic series).
    Minmax,
}

impl Task {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "volume" => Some(Task::Volume),
            "abs_returns" => Some(Task::AbsReturns),
            "minmax" => Some(Task::Minmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    pub task: Task,
    pub horizon: usize,
    pub target_column: String,
    #[serde(default = "default_median_window")]
    pub median_window: usize,
    #[serde(default)]
    pub median_align: MedianAlign,
    #[serde(default)]
    pub returns: ReturnKind,
    #[serde(default = "default_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
}

fn default_median_window() -> usize {
    336
}

fn default_fraction() -> f64 {
    0.2
}

impl PreprocessSpec {
    pub fn new(task: Task, horizon: usize, target_column: impl Into<String>) -> Self {
        Self {
            task,
            horizon,
            target_column: target_column.into(),
            median_window: default_median_window(),
            median_align: MedianAlign::default(),
            returns: ReturnKind::default(),
            val_fraction: default_fraction(),
            test_fraction: default_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.median_window == 0 {
            return Err(Error::Config("median_window must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must be in (0, 1)".into()));
        }
        if !(self.test_fraction >= 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        seq_len_for(self.horizon)
    }
}

/// Sequence length `max(45, 5·h)`.
pub fn seq_len_for(horizon: usize) -> usize {
    45.max(5 * horizon)
}

/// Chronological window ranges; `train < val < test`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Test is the trailing `test_fraction` of all windows; validation the
    /// trailing `val_fraction` of what remains.
    pub fn chronological(n: usize, val_fraction: f64, test_fraction: f64) -> Self {
        let n_test = (n as f64 * test_fraction).round() as usize;
        let rest = n - n_test.min(n);
        let n_val = (rest as f64 * val_fraction).round() as usize;
        let n_train = rest - n_val.min(rest);
        Self {
            train: 0..n_train,
            val: n_train..rest,
            test: rest..n,
        }
    }

    pub fn get(&self, part: SplitPart) -> Range<usize> {
        match part {
            SplitPart::Train => self.train.clone(),
            SplitPart::Val => self.val.clone(),
            SplitPart::Test => self.test.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitPart::Train),
            "val" => Some(SplitPart::Val),
            "test" => Some(SplitPart::Test),
            _ => None,
        }
    }
}

/// Input windows with their scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub x: Tensor3,
    pub y: Vec<f64>,
    pub split: Split,
    pub horizon: usize,
    /// First input row of each window, in the frame the windows were cut from.
    pub starts: Vec<usize>,
    /// Row holding each window's target.
    pub target_rows: Vec<usize>,
    pub feature_names: Vec<String>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.x.time()
    }

    pub fn features(&self) -> usize {
        self.x.features()
    }

    /// Inputs and targets of one split.
    pub fn part(&self, part: SplitPart) -> (Tensor3, Vec<f64>) {
        let idx: Vec<usize> = self.split.get(part).collect();
        let y = idx.iter().map(|&i| self.y[i]).collect();
        (self.x.gather(&idx), y)
    }
}

fn window_count(rows: usize, seq_len: usize, horizon: usize) -> usize {
    (rows + 1).saturating_sub(seq_len + horizon)
}

/// Rows needed so every split gets at least one window.
fn min_rows(spec: &PreprocessSpec) -> usize {
    let mut need = 3;
    while {
        let s = Split::chronological(need, spec.val_fraction, spec.test_fraction);
        s.train.is_empty() || s.val.is_empty() || (spec.test_fraction > 0.0 && s.test.is_empty())
    } {
        need += 1;
    }
    need + spec.seq_len() + spec.horizon - 1
}

/// Cuts stride-1 windows of length `max(45, 5h)`; window `b` reads rows
/// `s_b … s_b+T−1` and targets row `s_b+T−1+h` of the target column. All
/// columns (target included) are input features. No scaling happens here.
pub fn window_sequences(frame: &SeriesFrame, spec: &PreprocessSpec) -> Result<WindowedDataset> {
    spec.validate()?;
    let target = frame.column_index(&spec.target_column).ok_or_else(|| {
        Error::Data(format!(
            "target column `{}` not found (columns: {})",
            spec.target_column,
            frame.names().join(", ")
        ))
    })?;
    let t_len = spec.seq_len();
    let h = spec.horizon;
    let need = min_rows(spec);
    if frame.len() < need {
        return Err(Error::Data(format!(
            "insufficient rows: need at least {need} usable rows for seq_len {t_len}, horizon {h}, got {}",
            frame.len()
        )));
    }
    let n = window_count(frame.len(), t_len, h);
    let f = frame.names().len();
    let mut data = Vec::with_capacity(n * t_len * f);
    let mut y = Vec::with_capacity(n);
    for s in 0..n {
        for r in s..s + t_len {
            data.extend(frame.columns().iter().map(|c| c[r]));
        }
        y.push(frame.columns()[target][s + t_len - 1 + h]);
    }
    Ok(WindowedDataset {
        x: Tensor3::from_vec(n, t_len, f, data)?,
        y,
        split: Split::chronological(n, spec.val_fraction, spec.test_fraction),
        horizon: h,
        starts: (0..n).collect(),
        target_rows: (0..n).map(|s| s + t_len - 1 + h).collect(),
        feature_names: frame.names().to_vec(),
    })
}

/// Result of the full pipeline: the dataset plus where it came from.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: WindowedDataset,
    /// Rows of the input frame dropped by the transform stage.
    pub row_offset: usize,
    /// Last transformed row used to fit the scalers (inclusive).
    pub fit_end: usize,
}

/// Transform, split, fit scalers on the training rows, scale, window.
///
/// `dataset.target_rows`/`starts` index the transformed frame; add
/// `row_offset` to map back to input rows.
pub fn prepare(frame: &SeriesFrame, spec: &PreprocessSpec) -> Result<Prepared> {
    spec.validate()?;
    if frame.column_index(&spec.target_column).is_none() {
        return Err(Error::Data(format!(
            "target column `{}` not found (columns: {})",
            spec.target_column,
            frame.names().join(", ")
        )));
    }
    let (row_offset, columns): (usize, Vec<Vec<f64>>) = match spec.task {
        Task::Volume => {
            let off = median_warmup(spec.median_window, spec.horizon, spec.median_align);
            let cols = frame
                .columns()
                .iter()
                .zip(frame.names())
                .map(|(c, name)| {
                    moving_median_scale(c, spec.median_window, spec.horizon, spec.median_align)
                        .map_err(|e| Error::Data(format!("column `{name}`: {e}")))
                })
                .collect::<Result<_>>()?;
            (off, cols)
        }
        Task::AbsReturns => {
            let cols = frame
                .columns()
                .iter()
                .zip(frame.names())
                .map(|(c, name)| {
                    abs_returns(c, spec.returns).map_err(|e| Error::Data(format!("column `{name}`: {e}")))
                })
                .collect::<Result<_>>()?;
            (1, cols)
        }
        Task::Minmax => (0, frame.columns().to_vec()),
    };
    let rows = frame.len() - row_offset;
    let need = min_rows(spec);
    if rows < need {
        return Err(Error::Data(format!(
            "insufficient rows: need at least {} input rows ({need} after preprocessing) for seq_len {}, horizon {}, got {}",
            need + row_offset,
            spec.seq_len(),
            spec.horizon,
            frame.len()
        )));
    }
    let n = window_count(rows, spec.seq_len(), spec.horizon);
    let split = Split::chronological(n, spec.val_fraction, spec.test_fraction);
    let fit_end = split.train.end - 1 + spec.seq_len() - 1 + spec.horizon;
    let scaled = columns
        .iter()
        .zip(frame.names())
        .map(|(c, name)| {
            let train = &c[..=fit_end];
            let out = match spec.task {
                Task::Volume | Task::Minmax => minmax_scale(train, c),
                Task::AbsReturns => max_scale(train, c),
            };
            out.map_err(|e| Error::Data(format!("column `{name}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let transformed = SeriesFrame::new(
        frame.timestamps()[row_offset..].to_vec(),
        frame.names().to_vec(),
        scaled,
    )?;
    let dataset = window_sequences(&transformed, spec)?;
    Ok(Prepared {
        dataset,
        row_offset,
        fit_end,
    })
}

// ---------------------------------------------------------------------------
// Synthetic series

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Three-dimensional AR(1), `x_t = φ·A·x_{t-1} + ε_t` (100-step burn-in) with
    /// `A = [[1, 0, 0], [0.5, 0.5, 0], [0, 0.5, 0.5]]`, `ε ~ N(0, 1)`.
    /// Columns `x1, x2, target` hold components 2, 3, 1.
    Ar1,
    /// Two-dimensional Gaussian random walk `x, y`; `target` at row `t` is the
    /// Lévy area of the path over the `area_window` increments ending at row
    /// `t−1`.
    LevyArea,
    /// `x ~ U(0, 1)` i.i.d.; `target` at row `t` is the mean of the
    /// `mean_window` samples `x_{t−L} … x_{t−1}`.
    LaggedMean,
}

impl SynthKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ar1" => Some(SynthKind::Ar1),
            "levy_area" => Some(SynthKind::LevyArea),
            "lagged_mean" => Some(SynthKind::LaggedMean),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Ar1 => "ar1",
            SynthKind::LevyArea => "levy_area",
            SynthKind::LaggedMean => "lagged_mean",
        }
    }
}

pub const SYNTH_TARGET: &str = "target";
const SYNTH_T0: i64 = 1_577_836_800;

/// Generator knobs; the defaults are what [`synth_generate`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// AR(1) coefficient `φ`.
    pub ar_coef: f64,
    /// Lag window of `lagged_mean`.
    pub mean_window: usize,
    /// Increments in the trailing `levy_area` window.
    pub area_window: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            ar_coef: 0.8,
            mean_window: 3,
            area_window: 20,
        }
    }
}

/// Signed area between a 2-D polyline and its chord, by the shoelace sum
/// relative to the first point.
pub fn signed_area(xs: &[f64], ys: &[f64]) -> f64 {
    let (x0, y0) = (xs[0], ys[0]);
    let mut area = 0.0;
    for k in 1..xs.len() {
        let (ax, ay) = (xs[k - 1] - x0, ys[k - 1] - y0);
        let (bx, by) = (xs[k] - x0, ys[k] - y0);
        area += 0.5 * (ax * by - ay * bx);
    }
    area
}

pub fn synth_generate(kind: SynthKind, n: usize, seed: u64) -> Result<SeriesFrame> {
    synth_generate_with(kind, n, seed, &SynthParams::default())
}

pub fn synth_generate_with(kind: SynthKind, n: usize, seed: u64, params: &SynthParams) -> Result<SeriesFrame> {
    if params.mean_window == 0 || params.area_window == 0 {
        return Err(Error::Config("synthetic windows must be >= 1".into()));
    }
    if n < 200 {
        return Err(Error::Config(format!("synthetic series need n >= 200, got {n}")));
    }
    let mut rng = RngStream::new(seed);
    let timestamps = (0..n as i64).map(|i| SYNTH_T0 + 3600 * i).collect();
    let (names, columns): (Vec<&str>, Vec<Vec<f64>>) = match kind {
        SynthKind::Ar1 => {
            let burn = 100;
            let mut state = [0.0f64; 3];
            let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
            for i in 0..n + burn {
                let e = [rng.normal(), rng.normal(), rng.normal()];
                let prev = state;
                let phi = params.ar_coef;
                state[0] = phi * prev[0] + e[0];
                state[1] = phi * (0.5 * prev[0] + 0.5 * prev[1]) + e[1];
                state[2] = phi * (0.5 * prev[1] + 0.5 * prev[2]) + e[2];
                if i >= burn {
                    cols[0].push(state[1]);
                    cols[1].push(state[2]);
                    cols[2].push(state[0]);
                }
            }
            (vec!["x1", "x2", SYNTH_TARGET], cols)
        }
        SynthKind::LevyArea => {
            let w = params.area_window;
            let burn = w + 1;
            let total = n + burn;
            let (mut xs, mut ys) = (vec![0.0; total], vec![0.0; total]);
            for i in 1..total {
                xs[i] = xs[i - 1] + rng.normal();
                ys[i] = ys[i - 1] + rng.normal();
            }
            let target = (burn..total)
                .map(|t| signed_area(&xs[t - w - 1..t], &ys[t - w - 1..t]))
                .collect();
            (
                vec!["x", "y", SYNTH_TARGET],
                vec![xs[burn..].to_vec(), ys[burn..].to_vec(), target],
            )
        }
        SynthKind::LaggedMean => {
            let w = params.mean_window;
            let xs: Vec<f64> = (0..n + w).map(|_| rng.uniform(0.0, 1.0)).collect();
            let target = (w..n + w)
                .map(|t| xs[t - w..t].iter().sum::<f64>() / w as f64)
                .collect();
            (vec!["x", SYNTH_TARGET], vec![xs[w..].to_vec(), target])
        }
    };
    SeriesFrame::new(
        timestamps,
        names.into_iter().map(String::from).collect(),
        columns,
    )
}

#[cfg(test)]
mod tests;
