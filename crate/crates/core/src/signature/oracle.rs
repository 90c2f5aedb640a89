//! Reference signatures computed straight from the iterated-integral sums.
//!
//! Nothing here uses the Chen recursion of the parent module; these routines
//! exist to check it.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{SigSpec, SignatureVector};

/// Signature of the piecewise-linear interpolant of `samples` (`T × N`).
///
/// Every segment is cut into `subdivisions` equal pieces `Δ_1 … Δ_m`. The
/// level-`k` term for `(i_1, …, i_k)` is then the iterated sum
///
/// `Σ_{s_1 ≤ … ≤ s_k} Δ_{s_1}^{i_1} ⋯ Δ_{s_k}^{i_k} · Π_runs 1/r!`
///
/// where each run of `r` equal piece indices carries the volume `1/r!` of
/// the simplex it sweeps inside one linear piece. The strictly increasing
/// tuples form the iterated left-Riemann sum; the tied tuples are exact for
/// linear pieces, so the result is exact for any `subdivisions >= 1`.
///
/// Cost grows like `C(m + M - 1, M) · N^M`; keep `m` small.
pub fn oracle_signature(
    samples: &Matrix,
    spec: SigSpec,
    subdivisions: usize,
) -> Result<SignatureVector> {
    let pieces = pieces(samples, spec, subdivisions)?;
    let n = spec.dim();
    let mut values = vec![0.0; spec.sig_dim()];
    for k in 1..=spec.depth() {
        let off = spec.level_offset(k);
        let level = &mut values[off..off + spec.level_len(k)];
        let mut tuple = Vec::with_capacity(k);
        enumerate(&pieces, k, 0, &mut tuple, &mut |t| {
            let weight = run_weight(t);
            accumulate_outer(&pieces, t, weight, n, level);
        });
    }
    SignatureVector::from_vec(spec, values)
}

/// Pure iterated left-Riemann sums (no within-piece correction). Converges to
/// the signature at rate `O(1/subdivisions)`.
pub fn left_riemann_signature(
    samples: &Matrix,
    spec: SigSpec,
    subdivisions: usize,
) -> Result<SignatureVector> {
    let pieces = pieces(samples, spec, subdivisions)?;
    let n = spec.dim();
    let mut levels: Vec<Vec<f64>> = (1..=spec.depth())
        .map(|k| vec![0.0; spec.level_len(k)])
        .collect();
    for delta in &pieces {
        // level k picks up S_{k-1}(left endpoint) ⊗ Δ; walk down so the
        // lower level still holds its left-endpoint value.
        for k in (1..spec.depth()).rev() {
            let (lo, hi) = levels.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for (idx, &pv) in prev.iter().enumerate() {
                for i in 0..n {
                    cur[idx * n + i] += pv * delta[i];
                }
            }
        }
        for i in 0..n {
            levels[0][i] += delta[i];
        }
    }
    SignatureVector::from_vec(spec, levels.concat())
}

fn pieces(samples: &Matrix, spec: SigSpec, subdivisions: usize) -> Result<Vec<Vec<f64>>> {
    if subdivisions == 0 {
        return Err(Error::Config("subdivisions must be >= 1".into()));
    }
    if samples.cols() != spec.dim() {
        return Err(Error::shape(
            format!("samples {}x{}", samples.rows(), samples.cols()),
            format!("signature dim {}", spec.dim()),
        ));
    }
    let n = spec.dim();
    let inv = 1.0 / subdivisions as f64;
    let mut out = Vec::new();
    for t in 1..samples.rows() {
        let delta: Vec<f64> = (0..n)
            .map(|i| (samples.get(t, i) - samples.get(t - 1, i)) * inv)
            .collect();
        for _ in 0..subdivisions {
            out.push(delta.clone());
        }
    }
    Ok(out)
}

/// Visits every non-decreasing tuple of piece indices of length `k`.
fn enumerate(
    pieces: &[Vec<f64>],
    k: usize,
    start: usize,
    tuple: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if tuple.len() == k {
        visit(tuple);
        return;
    }
    for s in start..pieces.len() {
        tuple.push(s);
        enumerate(pieces, k, s, tuple, visit);
        tuple.pop();
    }
}

fn run_weight(tuple: &[usize]) -> f64 {
    let mut weight = 1.0;
    let mut run = 1;
    for w in tuple.windows(2) {
        if w[0] == w[1] {
            run += 1;
            weight /= run as f64;
        } else {
            run = 1;
        }
    }
    weight
}

/// `level += weight · Δ_{s_1} ⊗ … ⊗ Δ_{s_k}`.
fn accumulate_outer(pieces: &[Vec<f64>], tuple: &[usize], weight: f64, n: usize, level: &mut [f64]) {
    for (flat, slot) in level.iter_mut().enumerate() {
        let mut prod = weight;
        let mut rem = flat;
        for &s in tuple.iter().rev() {
            prod *= pieces[s][rem % n];
            rem /= n;
        }
        *slot += prod;
    }
}
