use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sigrnn::cells::Model;
use sigrnn::checkpoint;
use sigrnn::data::{SplitPart, WindowedDataset};
use sigrnn::numerics::RngStream;
use sigrnn::training::{fit_with, mse_loss, predict, r2_score};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{EvalArgs, TrainArgs};

/// One training run's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_r2: Option<f64>,
    pub val_r2: Option<f64>,
    pub test_r2: Option<f64>,
    pub test_mse: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub config: RunConfig,
    pub runs: Vec<RunMetrics>,
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("checkpoint-s{seed}.bin")
}

pub fn history_name(seed: u64) -> String {
    format!("history-s{seed}.csv")
}

/// Creates `<base>/run-<unix seconds>-s<seed>`, adding `-1`, `-2`, ... when
/// the name is taken, so earlier runs are never overwritten.
fn create_run_dir(base: &Path, seed: u64) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(base)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", base.display())))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let stem = format!("run-{stamp}-s{seed}");
    for k in 0.. {
        let name = if k == 0 { stem.clone() } else { format!("{stem}-{k}") };
        let dir = base.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Data(format!("cannot create {}: {e}", dir.display()))),
        }
    }
    unreachable!()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// R² of the model on a split, or `None` when the split is too small or its
/// target is constant.
fn split_r2(model: &Model, ds: &WindowedDataset, part: SplitPart) -> Result<Option<f64>, CliError> {
    let (x, y) = ds.part(part);
    if y.len() < 2 {
        return Ok(None);
    }
    let pred = predict(model, &x)?;
    match r2_score(&pred, &y) {
        Ok(v) => Ok(Some(v)),
        Err(sigrnn::Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn split_mse(model: &Model, ds: &WindowedDataset, part: SplitPart) -> Result<Option<f64>, CliError> {
    let (x, y) = ds.part(part);
    if y.is_empty() {
        return Ok(None);
    }
    Ok(Some(mse_loss(&predict(model, &x)?, &y)?))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const METRICS_HEADER: &str = "run,seed,epochs,best_epoch,train_r2,val_r2,test_r2,test_mse,wall_seconds";

/// Metrics CSV; with more than one run, `mean` and `std` rows follow.
pub fn metrics_csv(runs: &[RunMetrics]) -> String {
    let mut s = String::new();
    writeln!(s, "{METRICS_HEADER}").unwrap();
    for (i, r) in runs.iter().enumerate() {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            i,
            r.seed,
            r.epochs,
            r.best_epoch,
            cell(r.train_r2),
            cell(r.val_r2),
            cell(r.test_r2),
            cell(r.test_mse),
            r.wall_seconds
        )
        .unwrap();
    }
    if runs.len() > 1 {
        let column = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Option<(f64, f64)> {
            let vals: Option<Vec<f64>> = runs.iter().map(f).collect();
            vals.map(|v| mean_std(&v))
        };
        let cols = [
            column(&|r| Some(r.epochs as f64)),
            column(&|r| Some(r.best_epoch as f64)),
            column(&|r| r.train_r2),
            column(&|r| r.val_r2),
            column(&|r| r.test_r2),
            column(&|r| r.test_mse),
            column(&|r| Some(r.wall_seconds)),
        ];
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let cells: Vec<String> = cols
                .iter()
                .map(|c| c.map(|(m, s)| if pick == 0 { m } else { s }))
                .map(cell)
                .collect();
            writeln!(s, "{label},,{}", cells.join(",")).unwrap();
        }
    }
    s
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let cfg = args.run_config()?;
    let prepared = cfg.prepare()?;
    let ds = &prepared.dataset;
    let model_cfg = cfg.model_config(ds.features(), ds.seq_len())?;
    let run_dir = create_run_dir(&cfg.out, cfg.seed)?;
    write_file(&run_dir.join("config.toml"), cfg.to_toml().as_bytes())?;

    let mut runs = Vec::with_capacity(cfg.repeats);
    for i in 0..cfg.repeats as u64 {
        let seed = cfg.seed + i;
        let mut tc = cfg.train.clone();
        tc.seed = seed;
        let started = Instant::now();
        let mut model = Model::init(model_cfg.clone(), &mut RngStream::new(seed))?;
        let quiet = args.quiet;
        let report = fit_with(&mut model, ds, &tc, |e| {
            if !quiet && (e.epoch == 1 || e.epoch % 10 == 0) {
                eprintln!(
                    "[seed {seed}] epoch {:>4}  train {:.4e}  val {:.4e}  lr {:.2e}",
                    e.epoch, e.train_loss, e.val_loss, e.lr
                );
            }
        })?;
        let metrics = RunMetrics {
            seed,
            epochs: report.history.epochs.len(),
            best_epoch: report.history.best_epoch,
            train_r2: split_r2(&model, ds, SplitPart::Train)?,
            val_r2: split_r2(&model, ds, SplitPart::Val)?,
            test_r2: split_r2(&model, ds, SplitPart::Test)?,
            test_mse: split_mse(&model, ds, SplitPart::Test)?,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        write_file(
            &run_dir.join(checkpoint_name(seed)),
            &checkpoint::encode(&model, Some(&report.adam))?,
        )?;
        let mut hist = Vec::new();
        report.history.write_csv(&mut hist)?;
        write_file(&run_dir.join(history_name(seed)), &hist)?;
        writeln!(
            out,
            "seed {seed}: {} epochs (best {}), train R2 {}, val R2 {}, test R2 {}",
            metrics.epochs,
            metrics.best_epoch,
            fmt4(metrics.train_r2),
            fmt4(metrics.val_r2),
            fmt4(metrics.test_r2)
        )?;
        runs.push(metrics);
    }
    write_file(&run_dir.join("metrics.csv"), metrics_csv(&runs).as_bytes())?;
    let tests: Option<Vec<f64>> = runs.iter().map(|r| r.test_r2).collect();
    if let Some(t) = tests {
        let (m, s) = mean_std(&t);
        writeln!(out, "\n{:<24} {:>8} {:>8}", "Model", "Mean", "Std")?;
        writeln!(out, "{:<24} {:>8.4} {:>8.4}", cfg.model, m, s)?;
    }
    writeln!(out, "run directory: {}", run_dir.display())?;
    Ok(TrainOutcome {
        run_dir,
        config: cfg,
        runs,
    })
}

fn fmt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub split: SplitPart,
    pub n: usize,
    pub r2: f64,
    pub mse: f64,
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<EvalMetrics, CliError> {
    let split = SplitPart::parse(&args.split)
        .ok_or_else(|| CliError::Usage(format!("split: unknown `{}`; valid: train, val, test", args.split)))?;
    let (model, _) = checkpoint::load(&args.checkpoint)?;
    let cfg = args.source.base_config()?.resolve()?;
    let prepared = cfg.prepare()?;
    let ds = &prepared.dataset;
    let mc = model.config();
    if mc.input_dim != ds.features() || mc.seq_len != ds.seq_len() {
        return Err(CliError::Data(format!(
            "incompatible checkpoint: model expects sequences of {} steps x {} features, data gives {} x {}",
            mc.seq_len,
            mc.input_dim,
            ds.seq_len(),
            ds.features()
        )));
    }
    let (x, y) = ds.part(split);
    if y.len() < 2 {
        return Err(CliError::Data(format!("{} split has {} windows; need at least 2", args.split, y.len())));
    }
    let pred = predict(&model, &x)?;
    let metrics = EvalMetrics {
        split,
        n: y.len(),
        r2: r2_score(&pred, &y)?,
        mse: mse_loss(&pred, &y)?,
    };
    writeln!(out, "split={} n={} r2={} mse={}", args.split, metrics.n, metrics.r2, metrics.mse)?;
    if let Some(path) = &args.out {
        let text = format!("split,n,r2,mse\n{},{},{},{}\n", args.split, metrics.n, metrics.r2, metrics.mse);
        write_file(path, text.as_bytes())?;
    }
    Ok(metrics)
}
