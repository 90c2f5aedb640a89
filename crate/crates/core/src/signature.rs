//! Truncated path signatures of piecewise-linear paths.
//!
//! A signature truncated at depth `M` over an `N`-dimensional path is stored
//! as one flat vector, level-major. Level `k` occupies `N^k` slots and the
//! multi-index `(i_1, …, i_k)` (0-based) sits at offset `Σ_j i_j·N^{k-j}`
//! inside its level. The constant level-0 term is implicit and never stored.
//!
//! Prefix signatures are built incrementally with Chen's identity: each new
//! sample contributes the tensor exponential of its increment, multiplied on
//! the right of the running signature. The same recursion is differentiated
//! by [`stream_backward`].

use std::io::Write;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tensor3};

pub mod oracle;

pub use oracle::{left_riemann_signature, oracle_signature};

/// Highest supported truncation depth.
pub const MAX_DEPTH: usize = 4;

/// Number of stored signature terms, `Σ_{k=1..M} N^k`.
pub fn sig_dim(n: usize, m: usize) -> usize {
    let mut total = 0;
    let mut level = 1;
    for _ in 0..m {
        level *= n;
        total += level;
    }
    total
}

/// Path dimension and truncation depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SigSpec {
    dim: usize,
    depth: usize,
}

impl SigSpec {
    pub fn new(dim: usize, depth: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("signature path dimension must be >= 1".into()));
        }
        if depth == 0 || depth > MAX_DEPTH {
            return Err(Error::Config(format!(
                "signature depth must be in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        Ok(Self { dim, depth })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn sig_dim(&self) -> usize {
        sig_dim(self.dim, self.depth)
    }

    /// Start offset of level `k` (1-based) in the flat layout.
    pub fn level_offset(&self, k: usize) -> usize {
        sig_dim(self.dim, k - 1)
    }

    pub fn level_len(&self, k: usize) -> usize {
        self.dim.pow(k as u32)
    }

    fn level<'a>(&self, v: &'a [f64], k: usize) -> &'a [f64] {
        let off = self.level_offset(k);
        &v[off..off + self.level_len(k)]
    }
}

/// One truncated signature (level 0 omitted).
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureVector {
    spec: SigSpec,
    values: Vec<f64>,
}

impl SignatureVector {
    /// The signature of a constant path: every stored term is zero.
    pub fn zero(spec: SigSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.sig_dim()],
        }
    }

    pub fn from_vec(spec: SigSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.sig_dim() {
            return Err(Error::shape(
                format!("signature dim {}", spec.sig_dim()),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> SigSpec {
        self.spec
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Terms of level `k` (1-based).
    pub fn level(&self, k: usize) -> &[f64] {
        self.spec.level(&self.values, k)
    }

    /// Entry for a 0-based multi-index.
    pub fn term(&self, index: &[usize]) -> f64 {
        let k = index.len();
        let inner = index.iter().fold(0, |acc, &i| acc * self.spec.dim + i);
        self.values[self.spec.level_offset(k) + inner]
    }
}

/// Truncated tensor exponential of one linear segment: level `k` is `δ^{⊗k}/k!`.
pub fn segment_signature(delta: &[f64], spec: SigSpec) -> Result<SignatureVector> {
    if delta.len() != spec.dim {
        return Err(Error::shape(
            format!("increment len {}", delta.len()),
            format!("path dim {}", spec.dim),
        ));
    }
    let mut out = vec![0.0; spec.sig_dim()];
    exp_into(spec, delta, &mut out);
    Ok(SignatureVector { spec, values: out })
}

/// Chen product: the signature of `A`'s path followed by `B`'s path.
pub fn chen_concat(a: &SignatureVector, b: &SignatureVector) -> Result<SignatureVector> {
    if a.spec != b.spec {
        return Err(Error::shape(
            format!("lhs spec N={} M={}", a.spec.dim, a.spec.depth),
            format!("rhs spec N={} M={}", b.spec.dim, b.spec.depth),
        ));
    }
    let mut out = vec![0.0; a.spec.sig_dim()];
    mul_into(a.spec, &a.values, &b.values, &mut out);
    Ok(SignatureVector {
        spec: a.spec,
        values: out,
    })
}

/// Per-step prefix signatures of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureStream {
    spec: SigSpec,
    steps: usize,
    values: Vec<f64>,
}

impl SignatureStream {
    pub fn spec(&self) -> SigSpec {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Prefix signature after step `t` (0-based).
    pub fn step(&self, t: usize) -> &[f64] {
        let d = self.spec.sig_dim();
        &self.values[t * d..(t + 1) * d]
    }

    pub fn step_vector(&self, t: usize) -> SignatureVector {
        SignatureVector {
            spec: self.spec,
            values: self.step(t).to_vec(),
        }
    }

    pub fn last(&self) -> SignatureVector {
        self.step_vector(self.steps - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Writes `t,level,index,value` rows; `t` is 1-based and `index` is the
    /// flat 0-based position inside the level.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "level", "index", "value"])?;
        for t in 0..self.steps {
            let v = self.step(t);
            for k in 1..=self.spec.depth {
                let off = self.spec.level_offset(k);
                for i in 0..self.spec.level_len(k) {
                    w.write_record(&[
                        (t + 1).to_string(),
                        k.to_string(),
                        i.to_string(),
                        v[off + i].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Streams the prefix signatures of every sample of a `[B, T, N]` path.
pub fn stream_signature(path: &Tensor3, spec: SigSpec) -> Result<Vec<SignatureStream>> {
    if path.time() == 0 {
        return Err(Error::Data("signature stream needs at least one sample".into()));
    }
    if path.features() != spec.dim {
        return Err(Error::shape(
            format!("path features {}", path.features()),
            format!("signature dim {}", spec.dim),
        ));
    }
    let t = path.time();
    Ok((0..path.batch())
        .map(|b| {
            let mut values = vec![0.0; t * spec.sig_dim()];
            stream_into(spec, path.sample(b), t, &mut values);
            SignatureStream {
                spec,
                steps: t,
                values,
            }
        })
        .collect())
}

/// Divides the step-`t` vector by `t` (1-based).
pub fn time_normalize(stream: &SignatureStream) -> SignatureStream {
    let mut values = stream.values.clone();
    normalize_in_place(stream.spec, &mut values);
    SignatureStream {
        spec: stream.spec,
        steps: stream.steps,
        values,
    }
}

/// Projection `X̃_t = W_sig·X_t` with no bias. `W_sig` is `p × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub w_sig: Matrix,
}

impl ProjectionParams {
    pub fn new(w_sig: Matrix) -> Self {
        Self { w_sig }
    }

    pub fn out_dim(&self) -> usize {
        self.w_sig.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w_sig.cols()
    }
}

pub fn project_input(x: &Tensor3, p: &ProjectionParams) -> Result<Tensor3> {
    if x.features() != p.in_dim() {
        return Err(Error::shape(
            format!("X features {}", x.features()),
            format!("W_sig {}x{}", p.w_sig.rows(), p.w_sig.cols()),
        ));
    }
    crate::numerics::batched_linear(x, &p.w_sig.transpose())
}

/// Lévy area `½(S^{12} − S^{21})` of a two-dimensional signature.
pub fn levy_area(sig: &SignatureVector) -> Result<f64> {
    if sig.spec.dim != 2 || sig.spec.depth < 2 {
        return Err(Error::Config(
            "Lévy area needs a 2-dimensional signature of depth >= 2".into(),
        ));
    }
    Ok(0.5 * (sig.term(&[0, 1]) - sig.term(&[1, 0])))
}

// ---------------------------------------------------------------------------
// Slice kernels. Shapes are the caller's responsibility.

pub(crate) fn exp_into(spec: SigSpec, delta: &[f64], out: &mut [f64]) {
    let n = spec.dim;
    out[..n].copy_from_slice(delta);
    for k in 2..=spec.depth {
        let prev_off = spec.level_offset(k - 1);
        let prev_len = spec.level_len(k - 1);
        let off = spec.level_offset(k);
        let inv_k = 1.0 / k as f64;
        let (head, tail) = out.split_at_mut(off);
        let prev = &head[prev_off..prev_off + prev_len];
        for (idx, &pv) in prev.iter().enumerate() {
            let s = pv * inv_k;
            let dst = &mut tail[idx * n..(idx + 1) * n];
            for (d, &dv) in dst.iter_mut().zip(delta) {
                *d = s * dv;
            }
        }
    }
}

/// Truncated product with implicit unit level 0:
/// `C_k = A_k + B_k + Σ_{a=1}^{k-1} A_a ⊗ B_{k-a}`.
pub(crate) fn mul_into(spec: SigSpec, a: &[f64], b: &[f64], out: &mut [f64]) {
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
        *o = x + y;
    }
    for k in 2..=spec.depth {
        let c_off = spec.level_offset(k);
        for la in 1..k {
            let lb = k - la;
            let a_lvl = spec.level(a, la);
            let b_lvl = spec.level(b, lb);
            let b_len = b_lvl.len();
            for (i, &av) in a_lvl.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let dst = &mut out[c_off + i * b_len..c_off + (i + 1) * b_len];
                for (d, &bv) in dst.iter_mut().zip(b_lvl) {
                    *d += av * bv;
                }
            }
        }
    }
}

/// Fills `out` (`T × sig_dim`) with the raw prefix signatures of a `T × N` path.
pub(crate) fn stream_into(spec: SigSpec, path: &[f64], steps: usize, out: &mut [f64]) {
    let n = spec.dim;
    let d = spec.sig_dim();
    out[..d].iter_mut().for_each(|v| *v = 0.0);
    let mut seg = vec![0.0; d];
    let mut delta = vec![0.0; n];
    for t in 1..steps {
        for i in 0..n {
            delta[i] = path[t * n + i] - path[(t - 1) * n + i];
        }
        exp_into(spec, &delta, &mut seg);
        let (done, rest) = out.split_at_mut(t * d);
        mul_into(spec, &done[(t - 1) * d..], &seg, &mut rest[..d]);
    }
}

pub(crate) fn normalize_in_place(spec: SigSpec, values: &mut [f64]) {
    let d = spec.sig_dim();
    for (t, chunk) in values.chunks_mut(d).enumerate() {
        let inv = 1.0 / (t + 1) as f64;
        chunk.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Reverse-mode sweep through [`stream_into`].
///
/// `stream` holds the raw prefix signatures produced by the forward pass and
/// `grad_stream` the loss gradient with respect to each of them (both
/// `T × sig_dim`). Gradients with respect to the path samples are added into
/// `grad_path` (`T × N`).
pub(crate) fn stream_backward(
    spec: SigSpec,
    path: &[f64],
    steps: usize,
    stream: &[f64],
    grad_stream: &[f64],
    grad_path: &mut [f64],
) {
    let n = spec.dim;
    let d = spec.sig_dim();
    let mut g = vec![0.0; d];
    let mut g_prev = vec![0.0; d];
    let mut g_seg = vec![0.0; d];
    let mut seg = vec![0.0; d];
    let mut delta = vec![0.0; n];
    let mut g_delta = vec![0.0; n];
    for t in (1..steps).rev() {
        for (gi, &gs) in g.iter_mut().zip(&grad_stream[t * d..(t + 1) * d]) {
            *gi += gs;
        }
        for i in 0..n {
            delta[i] = path[t * n + i] - path[(t - 1) * n + i];
        }
        exp_into(spec, &delta, &mut seg);
        mul_backward(
            spec,
            &stream[(t - 1) * d..t * d],
            &seg,
            &g,
            &mut g_prev,
            &mut g_seg,
        );
        exp_backward(spec, &delta, &seg, &mut g_seg, &mut g_delta);
        for i in 0..n {
            grad_path[t * n + i] += g_delta[i];
            grad_path[(t - 1) * n + i] -= g_delta[i];
        }
        std::mem::swap(&mut g, &mut g_prev);
    }
    // S_1 is the constant empty-path signature; its gradient goes nowhere.
}

/// Gradients of `C = A ⊗ B` with respect to both factors (overwritten).
fn mul_backward(
    spec: SigSpec,
    a: &[f64],
    b: &[f64],
    g: &[f64],
    g_a: &mut [f64],
    g_b: &mut [f64],
) {
    g_a.copy_from_slice(g);
    g_b.copy_from_slice(g);
    for k in 2..=spec.depth {
        let c_off = spec.level_offset(k);
        for la in 1..k {
            let lb = k - la;
            let a_off = spec.level_offset(la);
            let b_off = spec.level_offset(lb);
            let a_len = spec.level_len(la);
            let b_len = spec.level_len(lb);
            for i in 0..a_len {
                let gc = &g[c_off + i * b_len..c_off + (i + 1) * b_len];
                let b_lvl = &b[b_off..b_off + b_len];
                g_a[a_off + i] += gc.iter().zip(b_lvl).map(|(x, y)| x * y).sum::<f64>();
                let av = a[a_off + i];
                if av != 0.0 {
                    for (gb, &gcv) in g_b[b_off..b_off + b_len].iter_mut().zip(gc) {
                        *gb += av * gcv;
                    }
                }
            }
        }
    }
}

/// Back-propagates through [`exp_into`]. `g_seg` is consumed as scratch.
fn exp_backward(spec: SigSpec, delta: &[f64], seg: &[f64], g_seg: &mut [f64], g_delta: &mut [f64]) {
    let n = spec.dim;
    g_delta.iter_mut().for_each(|v| *v = 0.0);
    for k in (2..=spec.depth).rev() {
        let prev_off = spec.level_offset(k - 1);
        let prev_len = spec.level_len(k - 1);
        let off = spec.level_offset(k);
        let inv_k = 1.0 / k as f64;
        for idx in 0..prev_len {
            let gk = &g_seg[off + idx * n..off + (idx + 1) * n];
            let pv = seg[prev_off + idx] * inv_k;
            let mut acc = 0.0;
            for i in 0..n {
                acc += gk[i] * delta[i];
                g_delta[i] += gk[i] * pv;
            }
            g_seg[prev_off + idx] += acc * inv_k;
        }
    }
    for i in 0..n {
        g_delta[i] += g_seg[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn spec(n: usize, m: usize) -> SigSpec {
        SigSpec::new(n, m).unwrap()
    }

    fn random_path(rng: &mut RngStream, t: usize, n: usize) -> Vec<f64> {
        (0..t * n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    fn path_matrix(path: &[f64], n: usize) -> Matrix {
        Matrix::from_vec(path.len() / n, n, path.to_vec()).unwrap()
    }

    fn path_tensor(path: &[f64], n: usize) -> Tensor3 {
        Tensor3::from_vec(1, path.len() / n, n, path.to_vec()).unwrap()
    }

    fn full_signature(path: &[f64], s: SigSpec) -> SignatureVector {
        stream_signature(&path_tensor(path, s.dim()), s).unwrap()[0].last()
    }

    #[test]
    fn sig_dim_matches_multi_index_count() {
        // count every multi-index of length 1..=M over an alphabet of N
        fn count(n: usize, m: usize) -> usize {
            let mut words: Vec<Vec<usize>> = vec![vec![]];
            let mut total = 0;
            for _ in 0..m {
                words = words
                    .iter()
                    .flat_map(|w| {
                        (0..n).map(move |i| {
                            let mut w = w.clone();
                            w.push(i);
                            w
                        })
                    })
                    .collect();
                total += words.len();
            }
            total
        }
        assert_eq!(count(5, 2), 30);
        assert_eq!(count(5, 3), 155);
        assert_eq!(sig_dim(5, 2), 30);
        assert_eq!(sig_dim(5, 3), 155);
        assert_eq!(sig_dim(1, 4), 4);
        for n in 1..5 {
            for m in 1..5 {
                assert_eq!(sig_dim(n, m), count(n, m));
            }
        }
    }

    #[test]
    fn spec_guards_depth() {
        assert!(SigSpec::new(3, 0).is_err());
        assert!(SigSpec::new(3, 5).is_err());
        assert!(SigSpec::new(0, 2).is_err());
        assert!(SigSpec::new(3, 4).is_ok());
    }

    #[test]
    fn segment_signature_examples() {
        let z = segment_signature(&[0.0, 0.0], spec(2, 3)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));

        let s = segment_signature(&[2.0], spec(1, 3)).unwrap();
        assert_eq!(s.as_slice()[0], 2.0);
        assert_eq!(s.as_slice()[1], 2.0);
        assert!((s.as_slice()[2] - 4.0 / 3.0).abs() < 1e-15);

        let s = segment_signature(&[1.0, 1.0], spec(2, 2)).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 1.0, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn segment_signature_matches_riemann_oracle() {
        let s = segment_signature(&[2.0], spec(1, 3)).unwrap();
        let samples = Matrix::from_rows(&[&[0.0], &[2.0]]);
        let r = left_riemann_signature(&samples, spec(1, 3), 20_000).unwrap();
        for (a, b) in s.as_slice().iter().zip(r.as_slice()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn chen_concat_examples() {
        let s = spec(1, 2);
        let a = segment_signature(&[1.0], s).unwrap();
        let b = segment_signature(&[2.0], s).unwrap();
        let c = chen_concat(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[3.0, 4.5]);
        assert_eq!(c, segment_signature(&[3.0], s).unwrap());

        let zero = SignatureVector::zero(s);
        assert_eq!(chen_concat(&a, &zero).unwrap(), a);

        let other = SignatureVector::zero(spec(2, 2));
        assert!(chen_concat(&a, &other).is_err());
    }

    #[test]
    fn chen_concat_matches_oracle_on_random_paths() {
        let mut rng = RngStream::new(5);
        let s = spec(3, 3);
        let left = random_path(&mut rng, 5, 3);
        let mut right = left[left.len() - 3..].to_vec();
        right.extend(random_path(&mut rng, 4, 3));
        let joined: Vec<f64> = left.iter().chain(&right[3..]).copied().collect();
        let c = chen_concat(&full_signature(&left, s), &full_signature(&right, s)).unwrap();
        let o = oracle_signature(&path_matrix(&joined, 3), s, 1).unwrap();
        for (a, b) in c.as_slice().iter().zip(o.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stream_examples() {
        let s = spec(1, 2);
        let streams = stream_signature(&path_tensor(&[0.0, 1.0, 3.0], 1), s).unwrap();
        let st = &streams[0];
        assert_eq!(st.step(0), &[0.0, 0.0]);
        assert_eq!(st.step(1), &[1.0, 0.5]);
        assert_eq!(st.step(2), &[3.0, 4.5]);

        let flat = stream_signature(&path_tensor(&[0.7; 8], 2), spec(2, 4)).unwrap();
        assert!(flat[0].as_slice().iter().all(|&v| v == 0.0));

        assert!(stream_signature(&Tensor3::zeros(1, 0, 2), spec(2, 2)).is_err());
    }

    #[test]
    fn time_normalize_examples() {
        let s = spec(1, 2);
        let raw = &stream_signature(&path_tensor(&[0.0, 1.0, 3.0], 1), s).unwrap()[0];
        let norm = time_normalize(raw);
        assert_eq!(norm.step(0), raw.step(0));
        assert_eq!(norm.step(1), &[0.5, 0.25]);
        assert_eq!(norm.step(2), &[1.0, 1.5]);

        let zero = &stream_signature(&path_tensor(&[2.0; 4], 1), s).unwrap()[0];
        assert_eq!(&time_normalize(zero), zero);
    }

    #[test]
    fn project_input_examples() {
        let mut rng = RngStream::new(8);
        let x = Tensor3::from_vec(2, 3, 4, random_path(&mut rng, 6, 4)).unwrap();
        let mut sel = Matrix::zeros(2, 4);
        sel.set(0, 0, 1.0);
        sel.set(1, 1, 1.0);
        let y = project_input(&x, &ProjectionParams::new(sel)).unwrap();
        for b in 0..2 {
            for t in 0..3 {
                assert_eq!(y.step(b, t), &x.step(b, t)[..2]);
            }
        }
        let z = project_input(&x, &ProjectionParams::new(Matrix::zeros(5, 4))).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));

        let w = Matrix::from_vec(3, 4, random_path(&mut rng, 3, 4)).unwrap();
        let y = project_input(&x, &ProjectionParams::new(w.clone())).unwrap();
        for b in 0..2 {
            for t in 0..3 {
                for j in 0..3 {
                    let want: f64 = (0..4).map(|i| w.get(j, i) * x.get(b, t, i)).sum();
                    assert!((y.get(b, t, j) - want).abs() <= 1e-14);
                }
            }
        }
        assert!(project_input(&x, &ProjectionParams::new(Matrix::zeros(5, 3))).is_err());
    }

    #[test]
    fn csv_dump_layout() {
        let s = spec(1, 2);
        let st = &stream_signature(&path_tensor(&[0.0, 1.0, 3.0], 1), s).unwrap()[0];
        let mut buf = Vec::new();
        time_normalize(st).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,level,index,value");
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert_eq!(lines[5], "3,1,0,1");
        assert_eq!(lines[6], "3,2,0,1.5");
    }

    #[test]
    fn levy_area_of_l_path() {
        let s = spec(2, 2);
        let sig = full_signature(&[0.0, 0.0, 1.0, 0.0, 1.0, 1.0], s);
        assert!((levy_area(&sig).unwrap() - 0.5).abs() < 1e-15);
        assert!(levy_area(&SignatureVector::zero(spec(3, 2))).is_err());
    }

    #[test]
    fn stream_backward_matches_finite_differences() {
        let mut rng = RngStream::new(21);
        for (n, m) in [(1, 4), (2, 3), (3, 2), (2, 4)] {
            let s = spec(n, m);
            let t = 5;
            let d = s.sig_dim();
            let path = random_path(&mut rng, t, n);
            let weights: Vec<f64> = (0..t * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let loss = |p: &[f64]| {
                let mut out = vec![0.0; t * d];
                stream_into(s, p, t, &mut out);
                out.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut stream = vec![0.0; t * d];
            stream_into(s, &path, t, &mut stream);
            let mut grad = vec![0.0; t * n];
            stream_backward(s, &path, t, &stream, &weights, &mut grad);
            let eps = 1e-6;
            for i in 0..path.len() {
                let mut p = path.clone();
                p[i] += eps;
                let up = loss(&p);
                p[i] -= 2.0 * eps;
                let down = loss(&p);
                let fd = (up - down) / (2.0 * eps);
                assert!(
                    (fd - grad[i]).abs() <= 1e-7 * (1.0 + fd.abs()),
                    "N={n} M={m} i={i}: fd {fd} vs {}",
                    grad[i]
                );
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
            a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
        }

        proptest! {
            #[test]
            fn chen_multiplicativity(seed in 0u64..10_000, n in 1usize..4, m in 1usize..5, t in 3usize..10) {
                let s = spec(n, m);
                let path = random_path(&mut RngStream::new(seed), t, n);
                let split = 1 + (seed as usize % (t - 2));
                let prefix = &path[..(split + 1) * n];
                let suffix = &path[split * n..];
                let joined = chen_concat(&full_signature(prefix, s), &full_signature(suffix, s)).unwrap();
                prop_assert!(close(joined.as_slice(), full_signature(&path, s).as_slice(), 1e-10));
            }

            #[test]
            fn midpoint_insertion_is_invisible(seed in 0u64..10_000, n in 1usize..4, m in 1usize..5) {
                let s = spec(n, m);
                let path = random_path(&mut RngStream::new(seed), 4, n);
                let mut refined = path[..2 * n].to_vec();
                refined.extend((0..n).map(|i| 0.5 * (path[n + i] + path[2 * n + i])));
                refined.extend_from_slice(&path[2 * n..]);
                prop_assert!(close(full_signature(&path, s).as_slice(), full_signature(&refined, s).as_slice(), 1e-12));
            }

            #[test]
            fn scaling_law(seed in 0u64..10_000, n in 1usize..4, m in 1usize..5) {
                let s = spec(n, m);
                let path = random_path(&mut RngStream::new(seed), 6, n);
                let doubled: Vec<f64> = path.iter().map(|v| 2.0 * v).collect();
                let a = full_signature(&path, s);
                let b = full_signature(&doubled, s);
                for k in 1..=m {
                    let factor = 2f64.powi(k as i32);
                    for (x, y) in a.level(k).iter().zip(b.level(k)) {
                        if *x != 0.0 {
                            prop_assert!((factor * x - y).abs() <= 1e-10 * y.abs());
                        }
                    }
                }
            }

            #[test]
            fn reversed_path_is_inverse(seed in 0u64..10_000, n in 1usize..4, m in 1usize..5) {
                let s = spec(n, m);
                let path = random_path(&mut RngStream::new(seed), 6, n);
                let rev: Vec<f64> = path.chunks(n).rev().flatten().copied().collect();
                let prod = chen_concat(&full_signature(&path, s), &full_signature(&rev, s)).unwrap();
                prop_assert!(prod.as_slice().iter().all(|v| v.abs() <= 1e-10));
            }

            #[test]
            fn symmetric_level_two_is_half_square(seed in 0u64..10_000, n in 1usize..4) {
                let s = spec(n, 2);
                let sig = full_signature(&random_path(&mut RngStream::new(seed), 7, n), s);
                let l1 = sig.level(1);
                for i in 0..n {
                    for j in 0..n {
                        let sym = 0.5 * (sig.term(&[i, j]) + sig.term(&[j, i]));
                        prop_assert!((sym - 0.5 * l1[i] * l1[j]).abs() <= 1e-10);
                    }
                }
            }
        }
    }
}
