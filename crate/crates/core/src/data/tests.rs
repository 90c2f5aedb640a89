use proptest::prelude::*;

use super::*;
use crate::numerics::Matrix;
use crate::signature::{levy_area, oracle::oracle_signature, SigSpec};

fn frame(cols: &[(&str, Vec<f64>)]) -> SeriesFrame {
    let n = cols[0].1.len();
    SeriesFrame::new(
        (0..n as i64).map(|i| 1000 + 60 * i).collect(),
        cols.iter().map(|(n, _)| n.to_string()).collect(),
        cols.iter().map(|(_, c)| c.clone()).collect(),
    )
    .unwrap()
}

fn positive_series(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed);
    (0..n).map(|_| rng.uniform(1.0, 5.0)).collect()
}

#[test]
fn median_scale_hand_example() {
    let x: Vec<f64> = (1..=10).map(f64::from).collect();
    let out = moving_median_scale(&x, 2, 1, MedianAlign::Exclusive).unwrap();
    // first W+h = 3 points dropped, so out[0] is t = 4 (1-based)
    assert_eq!(out.len(), 7);
    assert!((out[0] - 4.0 / 1.5).abs() < 1e-15);
    assert_eq!(out[6], 10.0 / 7.5);

    let inc = moving_median_scale(&x, 2, 1, MedianAlign::Inclusive).unwrap();
    // window ends at t−h: t=3 (1-based) reads x1, x2
    assert_eq!(inc.len(), 8);
    assert_eq!(inc[0], 3.0 / 1.5);
}

#[test]
fn median_of_odd_and_even_windows() {
    assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    assert_eq!(median(&mut [7.0]), 7.0);
}

#[test]
fn median_scale_constant_and_errors() {
    let out = moving_median_scale(&[3.5; 20], 4, 2, MedianAlign::Exclusive).unwrap();
    assert!(out.iter().all(|&v| v == 1.0));
    let err = moving_median_scale(&[0.0, 0.0, 0.0, 1.0, 2.0], 2, 1, MedianAlign::Exclusive).unwrap_err();
    assert!(err.to_string().contains("index 3"), "{err}");
    assert!(moving_median_scale(&[1.0; 3], 2, 1, MedianAlign::Exclusive).is_err());
}

#[test]
fn median_scale_never_reads_past_t_minus_h() {
    let x = positive_series(60, 3);
    for align in [MedianAlign::Exclusive, MedianAlign::Inclusive] {
        let (w, h) = (5, 3);
        let start = median_warmup(w, h, align);
        let base = moving_median_scale(&x, w, h, align).unwrap();
        for t in start..x.len() {
            // mutate every sample after t; output at t is unchanged
            let mut y = x.clone();
            for v in &mut y[t + 1..] {
                *v *= 7.0;
            }
            let out = moving_median_scale(&y, w, h, align).unwrap();
            assert_eq!(out[t - start], base[t - start]);
            // x_t itself enters only as numerator; samples in (t−h, t) do not enter
            let mut z = x.clone();
            for v in &mut z[t + 1 - h..t] {
                *v *= 7.0;
            }
            let out = moving_median_scale(&z, w, h, align).unwrap();
            assert_eq!(out[t - start], base[t - start]);
        }
    }
}

#[test]
fn minmax_examples_and_round_trip() {
    let s = MinMaxScaler::fit(&[2.0, 10.0, 5.0]).unwrap();
    assert_eq!(s.transform(6.0), 0.5);
    assert_eq!(s.transform(2.0), 0.0);
    assert_eq!(s.transform(10.0), 1.0);
    assert_eq!(s.transform(12.0), 1.25);
    assert!(MinMaxScaler::fit(&[3.0, 3.0]).is_err());
    assert!(MinMaxScaler::fit(&[]).is_err());
    let full = [2.0, 10.0, 12.0];
    assert_eq!(minmax_scale(&[2.0, 10.0], &full).unwrap(), vec![0.0, 1.0, 1.25]);
}

proptest! {
    #[test]
    fn minmax_inverse_round_trip(xs in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
        prop_assume!(xs.iter().any(|&v| v != xs[0]));
        let s = MinMaxScaler::fit(&xs).unwrap();
        for &x in &xs {
            prop_assert!((s.inverse(s.transform(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn window_count_closed_form(n in 20usize..200, h in 1usize..12) {
        let spec = PreprocessSpec::new(Task::Minmax, h, "a");
        let t = spec.seq_len();
        let f = frame(&[("a", (0..n).map(|i| i as f64).collect())]);
        match window_sequences(&f, &spec) {
            Ok(ds) => {
                prop_assert_eq!(ds.len(), n + 1 - t - h);
                let s = &ds.split;
                prop_assert_eq!(s.train.start, 0);
                prop_assert_eq!(s.train.end, s.val.start);
                prop_assert_eq!(s.val.end, s.test.start);
                prop_assert_eq!(s.test.end, ds.len());
                prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
            }
            Err(e) => {
                let windows = (n + 1).saturating_sub(t + h);
                let s = Split::chronological(windows, 0.2, 0.2);
                prop_assert!(
                    s.train.is_empty() || s.val.is_empty() || s.test.is_empty(),
                    "unexpected failure for n={}: {}", n, e
                );
                prop_assert!(e.to_string().contains("need at least"));
            }
        }
    }
}

#[test]
fn max_scale_examples() {
    assert_eq!(max_scale(&[1.0, 4.0], &[4.0, 0.0, 8.0]).unwrap(), vec![1.0, 0.0, 2.0]);
    assert_eq!(max_scale(&[2.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    assert!(max_scale(&[0.0, 0.0], &[0.0]).is_err());
    assert!(max_scale(&[1.0], &[-1.0]).is_err());
}

#[test]
fn abs_returns_examples() {
    assert_eq!(abs_returns(&[5.0; 4], ReturnKind::Simple).unwrap(), vec![0.0; 3]);
    let up = abs_returns(&[100.0, 110.0], ReturnKind::Simple).unwrap()[0];
    assert!((up - 0.1).abs() < 1e-15);
    let down = abs_returns(&[100.0, 90.0], ReturnKind::Simple).unwrap()[0];
    assert!((down - 0.1).abs() < 1e-15);
    let log = abs_returns(&[100.0, 90.0], ReturnKind::Log).unwrap()[0];
    assert!((log - (0.9f64).ln().abs()).abs() < 1e-15);
    assert!(abs_returns(&[1.0, 0.0], ReturnKind::Simple).is_err());
    assert!(abs_returns(&[1.0], ReturnKind::Simple).is_err());
}

#[test]
fn seq_len_rule() {
    assert_eq!(seq_len_for(1), 45);
    assert_eq!(seq_len_for(9), 45);
    assert_eq!(seq_len_for(15), 75);
}

#[test]
fn hundred_rows_give_fifty_five_windows() {
    let f = frame(&[
        ("a", (0..100).map(|i| i as f64).collect()),
        ("b", (0..100).map(|i| -(i as f64)).collect()),
    ]);
    let spec = PreprocessSpec::new(Task::Minmax, 1, "a");
    let ds = window_sequences(&f, &spec).unwrap();
    assert_eq!(ds.len(), 55);
    assert_eq!((ds.seq_len(), ds.features()), (45, 2));
    for b in 0..ds.len() {
        let last = ds.starts[b] + ds.seq_len() - 1;
        assert_eq!(ds.target_rows[b], last + 1);
        assert!(ds.target_rows[b] > last);
        assert_eq!(ds.y[b], ds.target_rows[b] as f64);
        assert_eq!(ds.x.get(b, 0, 0), ds.starts[b] as f64);
        assert_eq!(ds.x.get(b, 44, 1), -(last as f64));
    }
}

#[test]
fn split_fractions() {
    let s = Split::chronological(100, 0.2, 0.2);
    assert_eq!((s.train, s.val, s.test), (0..64, 64..80, 80..100));
    let s = Split::chronological(55, 0.2, 0.0);
    assert_eq!((s.train, s.val, s.test), (0..44, 44..55, 55..55));
}

#[test]
fn insufficient_rows_names_minimum() {
    let f = frame(&[("a", (0..40).map(|i| i as f64).collect())]);
    let err = window_sequences(&f, &PreprocessSpec::new(Task::Minmax, 1, "a")).unwrap_err();
    assert!(err.to_string().contains("need at least 49"), "{err}");
    let err = window_sequences(&f, &PreprocessSpec::new(Task::Minmax, 1, "zz")).unwrap_err();
    assert!(err.to_string().contains("`zz`"));
}

fn assert_window_unchanged(a: &WindowedDataset, b: &WindowedDataset, w: usize) {
    assert_eq!(a.x.sample(w), b.x.sample(w), "window {w} inputs changed");
    assert_eq!(a.y[w], b.y[w], "window {w} target changed");
}

/// For each window the permitted reads are its own rows up to the target and
/// the rows used to fit the scalers. Perturbing anything later must leave the
/// window untouched.
fn check_pipeline_causality(f: &SeriesFrame, spec: &PreprocessSpec) {
    let base = prepare(f, spec).unwrap();
    let ds = &base.dataset;
    let mut rng = RngStream::new(99);
    let probes: Vec<usize> = (0..12).map(|_| (rng.next_u64() % ds.len() as u64) as usize).collect();
    for &w in probes.iter().chain([0, ds.len() - 1].iter()) {
        let permitted = ds.target_rows[w].max(base.fit_end) + base.row_offset;
        if permitted + 1 >= f.len() {
            continue;
        }
        let mut g = f.clone();
        for c in 0..g.names().len() {
            for v in &mut g.column_mut(c)[permitted + 1..] {
                *v *= 3.0;
            }
        }
        let other = prepare(&g, spec).unwrap();
        assert_eq!(other.fit_end, base.fit_end);
        assert_window_unchanged(ds, &other.dataset, w);
    }
    // a test window sees nothing past its own target
    let w = ds.split.test.start;
    assert!(ds.target_rows[w] > base.fit_end);
}

#[test]
fn pipelines_have_no_look_ahead() {
    let n = 600;
    let f = frame(&[("a", positive_series(n, 1)), ("b", positive_series(n, 2))]);
    let mut volume = PreprocessSpec::new(Task::Volume, 3, "a");
    volume.median_window = 24;
    check_pipeline_causality(&f, &volume);
    volume.median_align = MedianAlign::Inclusive;
    check_pipeline_causality(&f, &volume);
    let mut returns = PreprocessSpec::new(Task::AbsReturns, 1, "b");
    check_pipeline_causality(&f, &returns);
    returns.returns = ReturnKind::Log;
    check_pipeline_causality(&f, &returns);
    check_pipeline_causality(&f, &PreprocessSpec::new(Task::Minmax, 9, "b"));
}

#[test]
fn prepare_scales_on_training_rows_only() {
    let f = frame(&[("a", (0..300).map(|i| i as f64).collect())]);
    let p = prepare(&f, &PreprocessSpec::new(Task::Minmax, 1, "a")).unwrap();
    let ds = &p.dataset;
    // train windows end at fit_end, so every train input lies in [0, 1]
    let (xt, yt) = ds.part(SplitPart::Train);
    assert!(xt.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(*yt.last().unwrap(), 1.0);
    let (_, ytest) = ds.part(SplitPart::Test);
    assert!(ytest.iter().all(|&v| v > 1.0));
    assert_eq!(p.fit_end, ds.target_rows[ds.split.train.end - 1]);
}

#[test]
fn prepare_row_offsets() {
    let f = frame(&[("a", positive_series(500, 4))]);
    let mut spec = PreprocessSpec::new(Task::Volume, 2, "a");
    spec.median_window = 10;
    assert_eq!(prepare(&f, &spec).unwrap().row_offset, 12);
    spec.task = Task::AbsReturns;
    assert_eq!(prepare(&f, &spec).unwrap().row_offset, 1);
    let short = f.slice_rows(0..40);
    let err = prepare(&short, &spec).unwrap_err();
    assert!(err.to_string().contains("insufficient rows"));
}

#[test]
fn csv_round_trip_and_missing_values() {
    let f = frame(&[("a", vec![1.5, 2.25, -3.0]), ("b", vec![0.1, 0.2, 0.3])]);
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let back = SeriesFrame::read_csv(buf.as_slice(), MissingPolicy::Reject).unwrap();
    assert_eq!(back, f);

    let text = "timestamp,a,b\n1,1.0,2.0\n2,,3.0\n3,4.0,\n";
    let err = SeriesFrame::read_csv(text.as_bytes(), MissingPolicy::Reject).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    let filled = SeriesFrame::read_csv(text.as_bytes(), MissingPolicy::ForwardFill).unwrap();
    assert_eq!(filled.column("a").unwrap(), &[1.0, 1.0, 4.0]);
    assert_eq!(filled.column("b").unwrap(), &[2.0, 3.0, 3.0]);

    let lead = "timestamp,a\n1,\n2,1.0\n";
    assert!(SeriesFrame::read_csv(lead.as_bytes(), MissingPolicy::ForwardFill).is_err());
    let unordered = "timestamp,a\n2,1.0\n2,1.0\n";
    assert!(SeriesFrame::read_csv(unordered.as_bytes(), MissingPolicy::Reject).is_err());
    let no_ts = "time,a\n1,1.0\n";
    assert!(SeriesFrame::read_csv(no_ts.as_bytes(), MissingPolicy::Reject).is_err());
    let bad = "timestamp,a\n1,abc\n";
    assert!(SeriesFrame::read_csv(bad.as_bytes(), MissingPolicy::Reject).is_err());
}

#[test]
fn synth_is_deterministic() {
    for kind in [SynthKind::Ar1, SynthKind::LevyArea, SynthKind::LaggedMean] {
        let a = synth_generate(kind, 300, 5).unwrap();
        assert_eq!(a, synth_generate(kind, 300, 5).unwrap());
        assert_ne!(a, synth_generate(kind, 300, 6).unwrap());
        assert_eq!(a.len(), 300);
        assert!(a.column(SYNTH_TARGET).is_some());
        assert_eq!(SynthKind::parse(kind.as_str()), Some(kind));
    }
    assert!(synth_generate(SynthKind::Ar1, 199, 0).is_err());
}

#[test]
fn levy_target_on_l_path() {
    assert_eq!(signed_area(&[0.0, 1.0, 1.0], &[0.0, 0.0, 1.0]), 0.5);
    let samples = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]]);
    let sig = oracle_signature(&samples, SigSpec::new(2, 2).unwrap(), 1).unwrap();
    assert!((levy_area(&sig).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn levy_target_matches_signature() {
    let f = synth_generate(SynthKind::LevyArea, 250, 8).unwrap();
    let (xs, ys, tg) = (
        f.column("x").unwrap(),
        f.column("y").unwrap(),
        f.column(SYNTH_TARGET).unwrap(),
    );
    let spec = SigSpec::new(2, 2).unwrap();
    const W: usize = 20;
    for t in [W + 1, 100, 249] {
        let rows: Vec<Vec<f64>> = (t - W - 1..t).map(|r| vec![xs[r], ys[r]]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let sig = oracle_signature(&Matrix::from_rows(&refs), spec, 1).unwrap();
        let area = levy_area(&sig).unwrap();
        assert!((area - tg[t]).abs() < 1e-9 * area.abs().max(1.0), "t={t}");
    }
}

#[test]
fn lagged_mean_target() {
    let f = synth_generate(SynthKind::LaggedMean, 300, 1).unwrap();
    let (x, tg) = (f.column("x").unwrap(), f.column(SYNTH_TARGET).unwrap());
    const L: usize = 3;
    for t in [L, 150, 299] {
        let want = x[t - L..t].iter().sum::<f64>() / L as f64;
        assert!((tg[t] - want).abs() < 1e-15);
    }
}

#[test]
fn ar1_with_zero_coefficient_is_white() {
    let n = 4000;
    let f = synth_generate_with(SynthKind::Ar1, n, 11, &SynthParams { ar_coef: 0.0, ..Default::default() }).unwrap();
    let lag1 = |c: &[f64]| {
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let var: f64 = c.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = c.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        cov / var
    };
    let bound = 3.0 / (n as f64).sqrt();
    for c in f.columns() {
        assert!(lag1(c).abs() < bound, "{}", lag1(c));
    }
    let g = synth_generate(SynthKind::Ar1, n, 11).unwrap();
    assert!(lag1(g.column(SYNTH_TARGET).unwrap()) > 0.6);
}
