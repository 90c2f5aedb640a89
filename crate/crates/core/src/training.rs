//! Loss, gradients, optimizer, learning-rate schedule and the epoch loop.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{Model, ParamSet};
use crate::data::{SplitPart, WindowedDataset};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor3};

/// Samples per gradient work unit. Fixed so the reduction order, and hence
/// every bit of the result, does not depend on the thread count.
const CHUNK: usize = 8;

/// RNG stream used for mini-batch shuffling (stream 0 initializes weights).
pub const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub lr_init: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_min: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 1000,
            early_stop_patience: 10,
            early_stop_min_delta: 1e-5,
            lr_init: 1e-3,
            plateau_factor: 0.25,
            plateau_patience: 5,
            lr_min: 2.5e-5,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be >= 1");
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init", "must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor", "must be in (0, 1)");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return bad("lr_min", "must be in (0, lr_init]");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction", "must be in (0, 1)");
        }
        if !(self.early_stop_min_delta >= 0.0) {
            return bad("early_stop_min_delta", "must be >= 0");
        }
        Ok(())
    }
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            format!("pred {}", pred.len()),
            format!("target {}", target.len()),
        ));
    }
    Ok(())
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    if pred.is_empty() {
        return Err(Error::Data("mse of an empty batch".into()));
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / pred.len() as f64)
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    if target.len() < 2 {
        return Err(Error::Degenerate("R2 needs at least two targets".into()));
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("R2 undefined for a constant target".into()));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn check_batch(model: &Model, x: &Tensor3, y: &[f64]) -> Result<()> {
    model.check_input(x)?;
    if x.batch() != y.len() {
        return Err(Error::shape(
            format!("batch {}", x.batch()),
            format!("targets {}", y.len()),
        ));
    }
    if y.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    Ok(())
}

/// Mean-squared-error loss of the model on a batch.
pub fn loss(model: &Model, x: &Tensor3, y: &[f64]) -> Result<f64> {
    check_batch(model, x, y)?;
    mse_loss(&predict(model, x)?, y)
}

/// Batch-parallel prediction; identical to [`Model::predict`].
pub fn predict(model: &Model, x: &Tensor3) -> Result<Vec<f64>> {
    model.check_input(x)?;
    Ok((0..x.batch())
        .into_par_iter()
        .map(|b| model.forward_sample(x.sample(b)).0)
        .collect())
}

/// MSE loss and its exact gradient with respect to every parameter block.
pub fn backward(model: &Model, x: &Tensor3, y: &[f64]) -> Result<(f64, ParamSet)> {
    check_batch(model, x, y)?;
    let n = y.len();
    let scale = 2.0 / n as f64;
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<(f64, ParamSet)> = starts
        .par_iter()
        .map(|&s| {
            let mut grads = model.params().zeros_like();
            let mut sse = 0.0;
            for b in s..(s + CHUNK).min(n) {
                let (pred, traces) = model.forward_sample(x.sample(b));
                let r = pred - y[b];
                sse += r * r;
                model.backward_sample(&traces, scale * r, &mut grads);
            }
            (sse, grads)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut sse, mut grads) = iter.next().expect("non-empty batch");
    for (s, g) in iter {
        sse += s;
        grads.add_assign(&g);
    }
    let loss = sse / n as f64;
    if let Some(block) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            block: format!("gradient of {block}"),
        });
    }
    if !loss.is_finite() {
        let block = model
            .params()
            .first_non_finite()
            .map_or_else(|| "loss".to_string(), |b| format!("parameter {b}"));
        return Err(Error::NonFinite { block });
    }
    Ok((loss, grads))
}

/// Central differences `(L(θ+ε) − L(θ−ε)) / 2ε` for every scalar of `params`.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &ParamSet, eps: f64) -> ParamSet
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut probe = params.clone();
    let mut out = params.zeros_like();
    for i in 0..params.len() {
        for k in 0..params.get(i).len() {
            let orig = params.get(i).as_slice()[k];
            probe.get_mut(i).as_mut_slice()[k] = orig + eps;
            let plus = loss_fn(&probe);
            probe.get_mut(i).as_mut_slice()[k] = orig - eps;
            let minus = loss_fn(&probe);
            probe.get_mut(i).as_mut_slice()[k] = orig;
            out.get_mut(i).as_mut_slice()[k] = (plus - minus) / (2.0 * eps);
        }
    }
    out
}

/// Denominator floor of [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const GRADCHECK_FLOOR: f64 = 1e-7;

/// `|a − n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Worst disagreement within one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

/// Compares [`backward`] against central differences, block by block.
pub fn gradcheck(model: &Model, x: &Tensor3, y: &[f64], eps: f64) -> Result<Vec<BlockCheck>> {
    let (_, analytic) = backward(model, x, y)?;
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.params_mut().clone_from(p);
            loss(&probe, x, y).unwrap_or(f64::NAN)
        },
        model.params(),
        eps,
    );
    Ok(compare_grads(&analytic, &numeric))
}

pub fn compare_grads(analytic: &ParamSet, numeric: &ParamSet) -> Vec<BlockCheck> {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|((name, a), (_, n))| {
            let mut check = BlockCheck {
                name: name.to_string(),
                max_rel_error: 0.0,
                max_abs_error: 0.0,
                worst_index: 0,
            };
            for (k, (&ga, &gn)) in a.as_slice().iter().zip(n.as_slice()).enumerate() {
                let rel = relative_error(ga, gn);
                // NaN compares false, so test the negation to keep it
                if !(rel <= check.max_rel_error) {
                    check.max_rel_error = rel;
                    check.worst_index = k;
                }
                check.max_abs_error = check.max_abs_error.max((ga - gn).abs());
            }
            check
        })
        .collect()
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, shape-mirroring the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(Error::Config("adam: parameter/gradient/moment layouts differ".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - ADAM_BETA1.powf(t);
    let c2 = 1.0 - ADAM_BETA2.powf(t);
    for i in 0..params.len() {
        let g = grads.get(i).as_slice();
        let m = state.m.get_mut(i).as_mut_slice();
        let v = state.v.get_mut(i).as_mut_slice();
        let p = params.get_mut(i).as_mut_slice();
        for k in 0..p.len() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Early stopping plus reduce-on-plateau, driven by one validation loss per
/// epoch.
///
/// Both counters share one reference loss that only moves on an improvement
/// larger than `min_delta`. The best epoch is tracked separately as the plain
/// minimum, so restored weights always belong to the lowest loss seen.
#[derive(Debug, Clone)]
pub struct Scheduler {
    patience: usize,
    min_delta: f64,
    factor: f64,
    plateau_patience: usize,
    lr_min: f64,
    lr: f64,
    reference: f64,
    wait_stop: usize,
    wait_plateau: usize,
    epoch: usize,
    best_epoch: usize,
    best_loss: f64,
}

/// What the scheduler decided after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// This epoch is the new best (lowest validation loss so far).
    pub new_best: bool,
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub stop: bool,
}

impl Scheduler {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            patience: cfg.early_stop_patience,
            min_delta: cfg.early_stop_min_delta,
            factor: cfg.plateau_factor,
            plateau_patience: cfg.plateau_patience,
            lr_min: cfg.lr_min,
            lr: cfg.lr_init,
            reference: f64::INFINITY,
            wait_stop: 0,
            wait_plateau: 0,
            epoch: 0,
            best_epoch: 0,
            best_loss: f64::INFINITY,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn observe(&mut self, val_loss: f64) -> Decision {
        self.epoch += 1;
        let new_best = val_loss < self.best_loss;
        if new_best {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
        }
        if val_loss < self.reference - self.min_delta {
            self.reference = val_loss;
            self.wait_stop = 0;
            self.wait_plateau = 0;
        } else {
            self.wait_stop += 1;
            self.wait_plateau += 1;
            if self.wait_plateau >= self.plateau_patience && self.lr > self.lr_min {
                self.lr = (self.lr * self.factor).max(self.lr_min);
                self.wait_plateau = 0;
            }
        }
        Decision {
            new_best,
            lr: self.lr,
            stop: self.wait_stop >= self.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,lr")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub history: History,
    pub adam: AdamState,
}

/// Trains on the dataset's train split, validating on its val split, and
/// leaves the best-validation weights in `model`.
pub fn fit(model: &mut Model, data: &WindowedDataset, cfg: &TrainConfig) -> Result<FitReport> {
    fit_with(model, data, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<F>(model: &mut Model, data: &WindowedDataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<FitReport>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    let (x_train, y_train) = data.part(SplitPart::Train);
    let (x_val, y_val) = data.part(SplitPart::Val);
    if y_train.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "training split has {} windows, fewer than one batch of {}",
            y_train.len(),
            cfg.batch_size
        )));
    }
    if y_val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    model.check_input(&x_train)?;

    let mut rng = RngStream::new(cfg.seed).fork(SHUFFLE_STREAM);
    let mut adam = AdamState::new(model.params());
    let mut sched = Scheduler::new(cfg);
    let mut best = model.params().clone();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..y_train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        rng.shuffle(&mut order);
        let mut sse = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let xb = x_train.gather(idx);
            let yb: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
            let (l, grads) = backward(model, &xb, &yb)?;
            sse += l * idx.len() as f64;
            adam_step(model.params_mut(), &grads, &mut adam, lr)?;
        }
        let train_loss = sse / order.len() as f64;
        let val_loss = mse_loss(&predict(model, &x_val)?, &y_val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                block: format!("validation loss at epoch {epoch}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        history.epochs.push(record);
        on_epoch(&record);
        let decision = sched.observe(val_loss);
        if decision.new_best {
            best.clone_from(model.params());
        }
        if decision.stop {
            history.stopped_early = true;
            break;
        }
    }
    model.set_params(best)?;
    history.best_epoch = sched.best_epoch();
    history.best_val_loss = sched.best_loss();
    Ok(FitReport { history, adam })
}
