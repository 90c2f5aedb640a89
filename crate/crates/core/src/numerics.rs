//! Dense linear algebra, random numbers and weight initialization.
//!
//! Everything is `f64`, row-major, with the last axis fastest. The kernels
//! here are written as plain loops in a fixed summation order so that results
//! are reproducible bit for bit across runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("matrix {rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input (test helper).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Plain matrix product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                format!("lhs {}x{}", self.rows, self.cols),
                format!("rhs {}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                axpy(a, other.row(k), dst);
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Rank-3 block laid out as (batch, time, feature), feature fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    time: usize,
    features: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, time: usize, features: usize) -> Self {
        Self {
            batch,
            time,
            features,
            data: vec![0.0; batch * time * features],
        }
    }

    pub fn from_vec(batch: usize, time: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * time * features {
            return Err(Error::shape(
                format!("tensor {batch}x{time}x{features}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            batch,
            time,
            features,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, b: usize, t: usize, f: usize) -> f64 {
        self.data[(b * self.time + t) * self.features + f]
    }

    pub fn set(&mut self, b: usize, t: usize, f: usize, v: f64) {
        self.data[(b * self.time + t) * self.features + f] = v;
    }

    /// The `time × features` block of one sample.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.time * self.features;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.time * self.features;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn step(&self, b: usize, t: usize) -> &[f64] {
        let start = (b * self.time + t) * self.features;
        &self.data[start..start + self.features]
    }

    /// Copies the listed samples into a new tensor, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Tensor3 {
        let n = self.time * self.features;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor3 {
            batch: indices.len(),
            time: self.time,
            features: self.features,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `Y[b,t,j] = Σ_i X[b,t,i]·K[i,j]`.
pub fn batched_linear(x: &Tensor3, k: &Matrix) -> Result<Tensor3> {
    if k.rows() != x.features() {
        return Err(Error::shape(
            format!(
                "X {}x{}x{} (features {})",
                x.batch(),
                x.time(),
                x.features(),
                x.features()
            ),
            format!("K {}x{} (rows {})", k.rows(), k.cols(), k.rows()),
        ));
    }
    let (i_dim, j_dim) = (k.rows(), k.cols());
    let steps = x.batch() * x.time();
    let mut out = Tensor3::zeros(x.batch(), x.time(), j_dim);
    for s in 0..steps {
        let src = &x.data[s * i_dim..(s + 1) * i_dim];
        let dst = &mut out.data[s * j_dim..(s + 1) * j_dim];
        for (i, &xv) in src.iter().enumerate() {
            axpy(xv, k.row(i), dst);
        }
    }
    Ok(out)
}

/// `W·x + b`.
pub fn matvec_affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::shape(
            format!("W {}x{}", w.rows(), w.cols()),
            format!("x len {}", x.len()),
        ));
    }
    if w.rows() != b.len() {
        return Err(Error::shape(
            format!("W {}x{}", w.rows(), w.cols()),
            format!("b len {}", b.len()),
        ));
    }
    let mut out = b.to_vec();
    gemv_acc(w, x, &mut out);
    Ok(out)
}

// Unchecked kernels shared by the cells. Callers guarantee shapes.

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += W·x`
#[inline]
pub(crate) fn gemv_acc(w: &Matrix, x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate() {
        *yr += dot(w.row(r), x);
    }
}

/// `y += Wᵀ·x`
#[inline]
pub(crate) fn gemv_t_acc(w: &Matrix, x: &[f64], y: &mut [f64]) {
    for (r, &xr) in x.iter().enumerate() {
        if xr != 0.0 {
            axpy(xr, w.row(r), y);
        }
    }
}

/// `G += a·bᵀ`
#[inline]
pub(crate) fn outer_acc(g: &mut Matrix, a: &[f64], b: &[f64]) {
    let cols = g.cols;
    for (r, &ar) in a.iter().enumerate() {
        if ar != 0.0 {
            axpy(ar, b, &mut g.data[r * cols..(r + 1) * cols]);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Seeded random stream.
///
/// Backed by ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`), which is
/// specified independently of platform and word size. Normal draws use the
/// ziggurat sampler from `rand_distr::StandardNormal`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// Entries i.i.d. uniform on `[-L, L]` with `L = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform(rng: &mut RngStream, rows: usize, cols: usize) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "glorot_uniform needs non-zero dimensions, got {rows}x{cols}"
        )));
    }
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-limit, limit))
        .collect();
    Ok(Matrix { rows, cols, data })
}

/// Orthogonal initializer: Gram-Schmidt on a Gaussian matrix, with the sign
/// convention that makes the distribution Haar.
pub fn orthogonal(rng: &mut RngStream, rows: usize, cols: usize) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "orthogonal needs non-zero dimensions, got {rows}x{cols}"
        )));
    }
    // Orthonormalize the columns of a tall matrix, then transpose back if needed.
    let (tall_r, tall_c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let mut cols_vecs: Vec<Vec<f64>> = (0..tall_c)
        .map(|_| (0..tall_r).map(|_| rng.normal()).collect())
        .collect();
    for j in 0..tall_c {
        for k in 0..j {
            let (done, rest) = cols_vecs.split_at_mut(j);
            let proj = dot(&done[k], &rest[0]);
            axpy(-proj, &done[k], &mut rest[0]);
        }
        let norm = dot(&cols_vecs[j], &cols_vecs[j]).sqrt();
        if norm < 1e-12 {
            return Err(Error::Config("orthogonal init hit a rank-deficient draw".into()));
        }
        cols_vecs[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut tall = Matrix::zeros(tall_r, tall_c);
    for (j, col) in cols_vecs.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            tall.data[i * tall_c + j] = v;
        }
    }
    Ok(if rows >= cols { tall } else { tall.transpose() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_contract(x: &Tensor3, k: &Matrix) -> Tensor3 {
        let mut y = Tensor3::zeros(x.batch(), x.time(), k.cols());
        for b in 0..x.batch() {
            for t in 0..x.time() {
                for j in 0..k.cols() {
                    let mut s = 0.0;
                    for i in 0..k.rows() {
                        s += x.get(b, t, i) * k.get(i, j);
                    }
                    y.set(b, t, j, s);
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut RngStream, b: usize, t: usize, f: usize) -> Tensor3 {
        let data = (0..b * t * f).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor3::from_vec(b, t, f, data).unwrap()
    }

    fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
        let data = (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Matrix::from_vec(r, c, data).unwrap()
    }

    #[test]
    fn batched_linear_identity_and_zero() {
        let mut rng = RngStream::new(1);
        let x = random_tensor(&mut rng, 3, 4, 5);
        assert_eq!(batched_linear(&x, &Matrix::identity(5)).unwrap(), x);
        let y = batched_linear(&x, &Matrix::zeros(5, 2)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_linear_small_example() {
        let x = Tensor3::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let expected = naive_contract(&x, &k);
        assert_eq!(expected.as_slice(), &[3.0, 2.0, 7.0, 4.0]);
        assert_eq!(batched_linear(&x, &k).unwrap(), expected);
    }

    #[test]
    fn batched_linear_matches_loop_oracle() {
        let mut rng = RngStream::new(2);
        let x = random_tensor(&mut rng, 4, 7, 6);
        let k = random_matrix(&mut rng, 6, 3);
        let fast = batched_linear(&x, &k).unwrap();
        let slow = naive_contract(&x, &k);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn batched_linear_rejects_mismatch() {
        let x = Tensor3::zeros(1, 2, 3);
        let err = batched_linear(&x, &Matrix::zeros(4, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("X 1x2x3") && msg.contains("K 4x2"), "{msg}");
    }

    #[test]
    fn matvec_affine_examples() {
        let w = Matrix::from_rows(&[&[1.0, 2.0]]);
        assert_eq!(matvec_affine(&w, &[3.0, 4.0], &[5.0]).unwrap(), vec![16.0]);
        let x = [0.3, -1.2, 2.0];
        assert_eq!(
            matvec_affine(&Matrix::identity(3), &x, &[0.0; 3]).unwrap(),
            x.to_vec()
        );
        assert_eq!(
            matvec_affine(&Matrix::zeros(2, 3), &x, &[0.0; 2]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(matvec_affine(&w, &[1.0], &[0.0]).is_err());
        assert!(matvec_affine(&w, &[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let a = glorot_uniform(&mut RngStream::new(7), 2, 2).unwrap();
        let b = glorot_uniform(&mut RngStream::new(7), 2, 2).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 4.0).sqrt();
        assert!(a.as_slice().iter().all(|v| v.abs() <= limit));
        assert!(glorot_uniform(&mut RngStream::new(7), 0, 2).is_err());
    }

    #[test]
    fn glorot_mean_is_centered() {
        let m = glorot_uniform(&mut RngStream::new(11), 100, 100).unwrap();
        let limit = (6.0f64 / 200.0).sqrt();
        let mean = m.as_slice().iter().sum::<f64>() / m.len() as f64;
        // std of the mean of 1e4 uniforms on [-L, L] is L/sqrt(3e4) ≈ 0.0058 L
        assert!(mean.abs() < 0.05 * limit, "mean {mean}");
    }

    #[test]
    fn orthogonal_has_orthonormal_rows() {
        for (r, c) in [(5, 5), (3, 6), (6, 3)] {
            let q = orthogonal(&mut RngStream::new(3), r, c).unwrap();
            let gram = if r <= c {
                q.matmul(&q.transpose()).unwrap()
            } else {
                q.transpose().matmul(&q).unwrap()
            };
            let n = gram.rows();
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram.get(i, j) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = RngStream::new(99);
        let mut b = RngStream::new(99);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut fa = a.fork(3);
        let mut fb = RngStream::new(99).fork(3);
        assert_eq!(fa.normal().to_bits(), fb.normal().to_bits());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rel_close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
        }

        proptest! {
            #[test]
            fn batched_linear_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let mut rng = RngStream::new(seed);
                let x1 = random_tensor(&mut rng, 2, 3, 4);
                let x2 = random_tensor(&mut rng, 2, 3, 4);
                let k = random_matrix(&mut rng, 4, 3);
                let mix: Vec<f64> = x1.as_slice().iter().zip(x2.as_slice())
                    .map(|(a, b)| alpha * a + beta * b).collect();
                let mix = Tensor3::from_vec(2, 3, 4, mix).unwrap();
                let lhs = batched_linear(&mix, &k).unwrap();
                let y1 = batched_linear(&x1, &k).unwrap();
                let y2 = batched_linear(&x2, &k).unwrap();
                for i in 0..lhs.as_slice().len() {
                    let rhs = alpha * y1.as_slice()[i] + beta * y2.as_slice()[i];
                    prop_assert!(rel_close(lhs.as_slice()[i], rhs, 1e-12));
                }
            }

            #[test]
            fn batched_linear_composes(seed in 0u64..1000) {
                let mut rng = RngStream::new(seed);
                let x = random_tensor(&mut rng, 2, 3, 4);
                let k1 = random_matrix(&mut rng, 4, 5);
                let k2 = random_matrix(&mut rng, 5, 2);
                let two_step = batched_linear(&batched_linear(&x, &k1).unwrap(), &k2).unwrap();
                let one_step = batched_linear(&x, &k1.matmul(&k2).unwrap()).unwrap();
                for (a, b) in two_step.as_slice().iter().zip(one_step.as_slice()) {
                    prop_assert!(rel_close(*a, *b, 1e-12));
                }
            }
        }
    }
}
