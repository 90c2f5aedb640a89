use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use sigrnn::cells::{Model, Variant};
use sigrnn::data::{MissingPolicy, SeriesFrame};
use sigrnn::numerics::{glorot_uniform, RngStream, Tensor3};
use sigrnn::signature::{project_input, stream_signature, time_normalize, ProjectionParams, SigSpec};
use sigrnn::training::{backward, compare_grads, finite_diff_grad, fit_with, loss, BlockCheck};

use crate::error::CliError;
use crate::{BenchArgs, GradcheckArgs, SigdumpArgs};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// The small instance gradcheck runs on: 4 inputs, 3 hidden units, 6 steps,
/// batch of 2, projection to 3 channels, every parameter drawn from N(0, 0.6²).
pub fn gradcheck_instance(
    variant: &str,
    layers: usize,
    flatten: bool,
    seed: u64,
) -> Result<(Model, Tensor3, Vec<f64>), CliError> {
    let variant = Variant::parse(variant).map_err(|e| CliError::Usage(e.to_string()))?;
    if layers == 0 {
        return Err(CliError::Usage("layers: must be >= 1".into()));
    }
    let (d, t, h, b, p) = (4, 6, 3, 2, 3);
    let cfg = variant.model_config(d, t, h, p, layers, flatten)?;
    let mut rng = RngStream::new(seed);
    let mut model = Model::init(cfg, &mut rng)?;
    for block in model.params_mut().blocks_mut() {
        for v in block.as_mut_slice() {
            *v = 0.6 * rng.normal();
        }
    }
    let x = Tensor3::from_vec(b, t, d, (0..b * t * d).map(|_| rng.normal()).collect())?;
    let y = (0..b).map(|_| rng.normal()).collect();
    Ok((model, x, y))
}

pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(CliError::Usage(format!("eps: must be positive, got {}", args.eps)));
    }
    let (model, x, y) = gradcheck_instance(&args.variant, args.layers, args.flatten, args.seed)?;
    let (_, mut analytic) = backward(&model, &x, &y)?;
    if let Some(name) = &args.corrupt_block {
        let block = analytic
            .by_name_mut(name)
            .ok_or_else(|| CliError::Usage(format!("corrupt-block: no block named `{name}`")))?;
        block.as_mut_slice()[0] += 1e-2;
    }
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.params_mut().clone_from(p);
            loss(&probe, &x, &y).unwrap_or(f64::NAN)
        },
        model.params(),
        args.eps,
    );
    let checks = compare_grads(&analytic, &numeric);
    report_gradcheck(&args.variant, args.seed, &checks, out)
}

fn report_gradcheck(variant: &str, seed: u64, checks: &[BlockCheck], out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "gradcheck {variant} seed {seed}")?;
    writeln!(out, "{:<20} {:>12} {:>12} {:>6}", "block", "max_rel", "max_abs", "at")?;
    for c in checks {
        writeln!(
            out,
            "{:<20} {:>12.3e} {:>12.3e} {:>6}",
            c.name, c.max_rel_error, c.max_abs_error, c.worst_index
        )?;
    }
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("models have parameters");
    if worst.max_rel_error <= GRADCHECK_TOLERANCE {
        writeln!(out, "ok: worst {} at {:.3e}", worst.name, worst.max_rel_error)?;
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed: block {} has relative error {:.3e} (index {}), above {GRADCHECK_TOLERANCE:e}",
            worst.name, worst.max_rel_error, worst.worst_index
        )))
    }
}

pub fn sigdump(args: &SigdumpArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let missing = if args.forward_fill {
        MissingPolicy::ForwardFill
    } else {
        MissingPolicy::Reject
    };
    let frame = SeriesFrame::read_csv_path(&args.csv, missing)?;
    if frame.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", args.csv.display())));
    }
    let (t, n) = (frame.len(), frame.columns().len());
    let mut path = Tensor3::zeros(1, t, n);
    for (j, col) in frame.columns().iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            path.set(0, i, j, v);
        }
    }
    if let Some(p) = args.proj {
        if p == 0 {
            return Err(CliError::Usage("proj: must be >= 1".into()));
        }
        let w = glorot_uniform(&mut RngStream::new(args.seed), p, n)?;
        path = project_input(&path, &ProjectionParams::new(w))?;
    }
    let spec = SigSpec::new(path.features(), args.depth).map_err(|e| CliError::Usage(format!("depth: {e}")))?;
    let raw = stream_signature(&path, spec)?.remove(0);
    let stream = if args.raw { raw } else { time_normalize(&raw) };
    match &args.out {
        Some(file) => {
            let f = std::fs::File::create(file)
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", file.display())))?;
            stream.write_csv(std::io::BufWriter::new(f))?;
        }
        None => stream.write_csv(out)?,
    }
    Ok(())
}

/// Timing of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: String,
    pub epochs: usize,
    /// Median wall-clock seconds of one epoch.
    pub epoch_seconds: f64,
    pub total_seconds: f64,
    /// Epoch time over that of the matching baseline kind, when it was timed too.
    pub ratio: Option<f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn bench(args: &BenchArgs, out: &mut dyn Write) -> Result<Vec<BenchRow>, CliError> {
    if args.epochs == 0 {
        return Err(CliError::Usage("epochs: must be >= 1".into()));
    }
    if args.variants.is_empty() {
        return Err(CliError::Usage("variants: none given".into()));
    }
    let variants: Vec<Variant> = args
        .variants
        .iter()
        .map(|v| Variant::parse(v.trim()).map_err(|e| CliError::Usage(format!("variants: {e}"))))
        .collect::<Result<_, _>>()?;

    let mut base = args.source.base_config()?;
    base.hidden = args.hidden;
    base.proj = args.proj;
    base.layers = args.layers;
    base.flatten = args.flatten;
    base.seed = args.seed;
    base.train.max_epochs = args.epochs;
    // patience beyond the budget: every variant runs exactly `epochs` epochs
    base.train.early_stop_patience = args.epochs + 1;
    let base = base.resolve()?;
    let prepared = base.prepare()?;
    let ds = &prepared.dataset;

    let mut rows: Vec<BenchRow> = Vec::with_capacity(variants.len());
    for variant in &variants {
        let mut cfg = base.clone();
        cfg.model = variant.to_string();
        let model_cfg = cfg.model_config(ds.features(), ds.seq_len())?;
        let mut model = Model::init(model_cfg, &mut RngStream::new(cfg.seed))?;
        let started = Instant::now();
        let mut last = started;
        let mut times = Vec::with_capacity(args.epochs);
        fit_with(&mut model, ds, &cfg.train, |_| {
            let now = Instant::now();
            times.push((now - last).as_secs_f64());
            last = now;
        })?;
        rows.push(BenchRow {
            variant: cfg.model.clone(),
            epochs: times.len(),
            epoch_seconds: median(times),
            total_seconds: started.elapsed().as_secs_f64(),
            ratio: None,
        });
    }
    for i in 0..rows.len() {
        let kind = variants[i].kind;
        if !kind.is_sig() {
            continue;
        }
        let baseline = match kind {
            sigrnn::cells::LayerKind::SigLstm => "lstm",
            _ => "gru",
        };
        if let Some(b) = rows.iter().find(|r| r.variant == baseline) {
            rows[i].ratio = Some(rows[i].epoch_seconds / b.epoch_seconds);
        }
    }

    writeln!(
        out,
        "{:<16} {:>8} {:>14} {:>12} {:>8}",
        "Model", "Epochs", "Epoch (s)", "Total (s)", "Ratio"
    )?;
    for r in &rows {
        let ratio = r.ratio.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:<16} {:>8} {:>14.4} {:>12.2} {:>8}",
            r.variant, r.epochs, r.epoch_seconds, r.total_seconds, ratio
        )?;
    }
    if let Some(path) = &args.out {
        let mut s = String::from("variant,epochs,epoch_seconds,total_seconds,ratio\n");
        for r in &rows {
            let ratio = r.ratio.map(|x| x.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{}", r.variant, r.epochs, r.epoch_seconds, r.total_seconds, ratio).unwrap();
        }
        std::fs::write(path, s).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(rows)
}
