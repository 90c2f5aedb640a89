//! LSTM/GRU cells, their signature-gated variants, and layer stacks.
//!
//! Parameters of a whole model live in one [`ParamSet`]: a list of named
//! matrices in declaration order (layer order; inside a layer the gates in
//! alphabetical order, each as `b, U, W`; signature layers append
//! `b_gate, W_gate, W_sig`; the linear head comes last as `b, W`). The
//! optimizer, checkpoints, and gradient checks all walk that list.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    axpy, gemv_acc, gemv_t_acc, glorot_uniform, orthogonal, outer_acc, sigmoid, Matrix, RngStream,
    Tensor3,
};
use crate::signature::{self, ProjectionParams, SigSpec};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Lstm,
    Gru,
    SigLstm,
    SigGru,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [
        LayerKind::Lstm,
        LayerKind::Gru,
        LayerKind::SigLstm,
        LayerKind::SigGru,
    ];

    pub fn is_sig(self) -> bool {
        matches!(self, LayerKind::SigLstm | LayerKind::SigGru)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Lstm => "lstm",
            LayerKind::Gru => "gru",
            LayerKind::SigLstm => "sig_lstm",
            LayerKind::SigGru => "sig_gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proj_dim: Option<usize>,
    pub return_sequences: bool,
}

impl LayerConfig {
    fn sig_spec(&self) -> Option<SigSpec> {
        match (self.sig_depth, self.proj_dim) {
            (Some(m), Some(p)) => SigSpec::new(p, m).ok(),
            _ => None,
        }
    }
}

/// A stack of recurrent layers followed by a single linear output unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub seq_len: usize,
    pub flatten_output: bool,
    pub layers: Vec<LayerConfig>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1".into());
        }
        if self.seq_len == 0 {
            return bad("seq_len must be >= 1".into());
        }
        if self.layers.is_empty() {
            return bad("model needs at least one layer".into());
        }
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.hidden == 0 {
                return bad(format!("layer {l}: hidden width must be >= 1"));
            }
            if layer.kind.is_sig() {
                let (Some(m), Some(p)) = (layer.sig_depth, layer.proj_dim) else {
                    return bad(format!(
                        "layer {l}: {} needs sig_depth and proj_dim",
                        layer.kind
                    ));
                };
                if p == 0 {
                    return bad(format!("layer {l}: proj_dim must be >= 1"));
                }
                SigSpec::new(p, m).map_err(|e| Error::Config(format!("layer {l}: {e}")))?;
            } else if layer.sig_depth.is_some() || layer.proj_dim.is_some() {
                return bad(format!(
                    "layer {l}: sig_depth/proj_dim only apply to signature layers"
                ));
            }
            if l < last && !layer.return_sequences {
                return bad(format!(
                    "layer {l}: inner layers must return sequences"
                ));
            }
        }
        if self.layers[last].return_sequences != self.flatten_output {
            return bad("last layer return_sequences must equal flatten_output".into());
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.layers[l - 1].hidden
        }
    }

    pub fn head_input_dim(&self) -> usize {
        let h = self.layers.last().map_or(0, |l| l.hidden);
        if self.flatten_output {
            h * self.seq_len
        } else {
            h
        }
    }
}

/// Model variant names as used on the command line: `lstm`, `gru`,
/// `sig_lstm-3-2`, `sig_gru-3-3-3`, … For signature kinds the numeric suffix
/// lists one truncation depth per layer; a bare signature kind is one layer
/// of depth 2. Baseline kinds take their layer count separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub kind: LayerKind,
    pub depths: Vec<usize>,
}

impl Variant {
    pub const VALID: &'static str =
        "lstm, gru, sig_lstm[-M...], sig_gru[-M...] (M in 1..=4 per layer, e.g. sig_lstm-3-2)";

    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split('-');
        let head = parts.next().unwrap_or_default();
        let err = || {
            Error::Config(format!(
                "unknown model variant `{s}`; valid variants: {}",
                Self::VALID
            ))
        };
        let kind = LayerKind::parse(head).ok_or_else(err)?;
        let depths: Vec<usize> = parts
            .map(|p| p.parse::<usize>().map_err(|_| err()))
            .collect::<Result<_>>()?;
        if !kind.is_sig() && !depths.is_empty() {
            return Err(err());
        }
        if depths.iter().any(|&m| m == 0 || m > signature::MAX_DEPTH) {
            return Err(err());
        }
        let depths = if kind.is_sig() && depths.is_empty() {
            vec![2]
        } else {
            depths
        };
        Ok(Self { kind, depths })
    }

    /// Expands to a validated model configuration.
    pub fn model_config(
        &self,
        input_dim: usize,
        seq_len: usize,
        hidden: usize,
        proj_dim: usize,
        baseline_layers: usize,
        flatten_output: bool,
    ) -> Result<ModelConfig> {
        let count = if self.kind.is_sig() {
            self.depths.len()
        } else {
            baseline_layers
        };
        let layers = (0..count)
            .map(|l| LayerConfig {
                kind: self.kind,
                hidden,
                sig_depth: self.kind.is_sig().then(|| self.depths[l]),
                proj_dim: self.kind.is_sig().then_some(proj_dim),
                return_sequences: l + 1 < count || flatten_output,
            })
            .collect();
        let cfg = ModelConfig {
            input_dim,
            seq_len,
            flatten_output,
            layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())?;
        for d in &self.depths {
            write!(f, "-{d}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Flat parameter namespace

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.names.push(name.into());
        self.values.push(value);
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.values[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.values.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
    }

    /// First block containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, m)| !m.is_finite()).map(|(n, _)| n)
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.values {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            axpy(1.0, b.as_slice(), a.as_mut_slice());
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

// Gate order used inside the kernels.
const I: usize = 0;
const F: usize = 1;
const C: usize = 2;
const O: usize = 3;
const Z: usize = 0;
const R: usize = 1;
const HC: usize = 2;

/// Alphabetical gate letters per kind, i.e. the declaration order.
fn gate_letters(kind: LayerKind) -> &'static [&'static str] {
    match kind {
        LayerKind::Lstm => &["c", "f", "i", "o"],
        LayerKind::SigLstm => &["c", "i", "o"],
        LayerKind::Gru => &["h", "r", "z"],
        LayerKind::SigGru => &["h", "z"],
    }
}

/// Position of each kernel gate (kernel order) within the declaration order.
fn gate_slots(kind: LayerKind) -> &'static [Option<usize>] {
    match kind {
        // kernel order i, f, c, o
        LayerKind::Lstm => &[Some(2), Some(1), Some(0), Some(3)],
        LayerKind::SigLstm => &[Some(1), None, Some(0), Some(2)],
        // kernel order z, r, h
        LayerKind::Gru => &[Some(2), Some(1), Some(0)],
        LayerKind::SigGru => &[Some(1), None, Some(0)],
    }
}

/// `(suffix, rows, cols)` for every block of one layer, in declaration order.
fn layer_layout(cfg: &LayerConfig, in_dim: usize) -> Vec<(String, usize, usize)> {
    let h = cfg.hidden;
    let mut out = Vec::new();
    for g in gate_letters(cfg.kind) {
        out.push((format!("{g}.b"), h, 1));
        out.push((format!("{g}.U"), h, h));
        out.push((format!("{g}.W"), h, in_dim));
    }
    if let Some(spec) = cfg.sig_spec() {
        out.push(("b_gate".into(), h, 1));
        out.push(("W_gate".into(), h, spec.sig_dim()));
        out.push(("W_sig".into(), spec.dim(), in_dim));
    }
    out
}

/// A configured model and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    offsets: Vec<usize>,
}

impl Model {
    /// Glorot-uniform input kernels, orthogonal recurrent kernels, zero biases
    /// except a unit forget-gate bias on LSTM-type layers.
    pub fn init(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (l, layer) in config.layers.iter().enumerate() {
            let in_dim = config.layer_input_dim(l);
            for (suffix, rows, cols) in layer_layout(layer, in_dim) {
                let m = if suffix.ends_with(".U") {
                    orthogonal(rng, rows, cols)?
                } else if suffix.ends_with(".b") || suffix == "b_gate" {
                    let forget = match layer.kind {
                        LayerKind::Lstm => suffix == "f.b",
                        LayerKind::SigLstm => suffix == "b_gate",
                        _ => false,
                    };
                    Matrix::filled(rows, cols, if forget { 1.0 } else { 0.0 })
                } else {
                    glorot_uniform(rng, rows, cols)?
                };
                params.push(format!("layer{l}.{suffix}"), m);
            }
        }
        params.push("head.b", Matrix::zeros(1, 1));
        params.push("head.W", glorot_uniform(rng, 1, config.head_input_dim())?);
        Self::from_params(config, params)
    }

    /// Wraps existing parameters; their names and shapes must match the layout.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = Self::layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "model expects {} parameter blocks, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (name, rows, cols)) in expected.iter().enumerate() {
            let m = params.get(i);
            if params.name(i) != name || m.rows() != *rows || m.cols() != *cols {
                return Err(Error::Config(format!(
                    "parameter block {i}: expected {name} {rows}x{cols}, got {} {}x{}",
                    params.name(i),
                    m.rows(),
                    m.cols()
                )));
            }
        }
        let mut offsets = Vec::with_capacity(config.layers.len());
        let mut at = 0;
        for (l, layer) in config.layers.iter().enumerate() {
            offsets.push(at);
            at += layer_layout(layer, config.layer_input_dim(l)).len();
        }
        Ok(Self {
            config,
            params,
            offsets,
        })
    }

    /// Full `(name, rows, cols)` layout in declaration order.
    pub fn layout(config: &ModelConfig) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for (l, layer) in config.layers.iter().enumerate() {
            for (suffix, r, c) in layer_layout(layer, config.layer_input_dim(l)) {
                out.push((format!("layer{l}.{suffix}"), r, c));
            }
        }
        out.push(("head.b".into(), 1, 1));
        out.push(("head.W".into(), 1, config.head_input_dim()));
        out
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        if !params.same_layout(&self.params) {
            return Err(Error::Config("parameter layout mismatch".into()));
        }
        self.params = params;
        Ok(())
    }

    fn head_index(&self) -> usize {
        self.params.len() - 2
    }

    fn layer_refs(&self, l: usize) -> LayerRefs<'_> {
        let cfg = &self.config.layers[l];
        let base = self.offsets[l];
        let p = &self.params;
        let letters = gate_letters(cfg.kind).len();
        let gates = gate_slots(cfg.kind)
            .iter()
            .map(|slot| {
                slot.map(|s| GateRefs {
                    b: p.get(base + 3 * s).as_slice(),
                    u: p.get(base + 3 * s + 1),
                    w: p.get(base + 3 * s + 2),
                })
            })
            .collect();
        let sig = cfg.sig_spec().map(|spec| {
            let at = base + 3 * letters;
            SigRefs {
                spec,
                b_gate: p.get(at).as_slice(),
                w_gate: p.get(at + 1),
                w_sig: p.get(at + 2),
            }
        });
        LayerRefs {
            kind: cfg.kind,
            hidden: cfg.hidden,
            gates,
            sig,
        }
    }

    /// Block index of gate `g` (kernel order) in the flat namespace.
    fn gate_block(&self, l: usize, g: usize) -> Option<usize> {
        let kind = self.config.layers[l].kind;
        gate_slots(kind)[g].map(|s| self.offsets[l] + 3 * s)
    }

    fn sig_block(&self, l: usize) -> usize {
        self.offsets[l] + 3 * gate_letters(self.config.layers[l].kind).len()
    }

    pub(crate) fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.features() != self.config.input_dim || x.time() != self.config.seq_len {
            return Err(Error::shape(
                format!("input {}x{}x{}", x.batch(), x.time(), x.features()),
                format!(
                    "model expects Bx{}x{}",
                    self.config.seq_len, self.config.input_dim
                ),
            ));
        }
        Ok(())
    }

    /// Predictions for every sample.
    pub fn predict(&self, x: &Tensor3) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok((0..x.batch())
            .map(|b| self.forward_sample(x.sample(b)).0)
            .collect())
    }

    /// Runs one `T × D` sample; returns the prediction and each layer's trace.
    pub fn forward_sample(&self, x: &[f64]) -> (f64, Vec<LayerTrace>) {
        let steps = self.config.seq_len;
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.config.layers.len());
        for l in 0..self.config.layers.len() {
            let input = match traces.last() {
                Some(prev) => prev.outputs().to_vec(),
                None => x.to_vec(),
            };
            traces.push(layer_forward(&self.layer_refs(l), input, steps));
        }
        let last = traces.last().expect("validated non-empty");
        let feat = self.head_features(last);
        let hb = self.head_index();
        let pred = self.params.get(hb).as_slice()[0]
            + crate::numerics::dot(self.params.get(hb + 1).as_slice(), feat);
        (pred, traces)
    }

    fn head_features<'a>(&self, last: &'a LayerTrace) -> &'a [f64] {
        if self.config.flatten_output {
            last.outputs()
        } else {
            last.h_at(last.steps - 1)
        }
    }

    /// Adds the gradients of `dpred · prediction` into `grads` and returns the
    /// gradient with respect to the input sample.
    pub(crate) fn backward_sample(
        &self,
        traces: &[LayerTrace],
        dpred: f64,
        grads: &mut ParamSet,
    ) -> Vec<f64> {
        let last = traces.last().expect("validated non-empty");
        let hb = self.head_index();
        grads.get_mut(hb).as_mut_slice()[0] += dpred;
        axpy(dpred, self.head_features(last), grads.get_mut(hb + 1).as_mut_slice());

        let steps = last.steps;
        let h = last.hidden;
        let head_w = self.params.get(hb + 1).as_slice();
        let mut d_out = vec![0.0; steps * h];
        if self.config.flatten_output {
            axpy(dpred, head_w, &mut d_out);
        } else {
            axpy(dpred, head_w, &mut d_out[(steps - 1) * h..]);
        }
        for l in (0..traces.len()).rev() {
            d_out = self.layer_backward(l, &traces[l], &d_out, grads);
        }
        d_out
    }

    fn layer_backward(
        &self,
        l: usize,
        trace: &LayerTrace,
        d_out: &[f64],
        grads: &mut ParamSet,
    ) -> Vec<f64> {
        let refs = self.layer_refs(l);
        let raw = match refs.kind {
            LayerKind::Lstm | LayerKind::SigLstm => lstm_backward(&refs, trace, d_out),
            LayerKind::Gru | LayerKind::SigGru => gru_backward(&refs, trace, d_out),
        };
        // Scatter the per-gate sums into the flat namespace.
        for (g, gg) in raw.gates.iter().enumerate() {
            let (Some(block), Some(gg)) = (self.gate_block(l, g), gg) else {
                continue;
            };
            axpy(1.0, &gg.b, grads.get_mut(block).as_mut_slice());
            axpy(1.0, gg.u.as_slice(), grads.get_mut(block + 1).as_mut_slice());
            axpy(1.0, gg.w.as_slice(), grads.get_mut(block + 2).as_mut_slice());
        }
        if let Some(sg) = &raw.sig {
            let at = self.sig_block(l);
            axpy(1.0, &sg.b_gate, grads.get_mut(at).as_mut_slice());
            axpy(1.0, sg.w_gate.as_slice(), grads.get_mut(at + 1).as_mut_slice());
            axpy(1.0, sg.w_sig.as_slice(), grads.get_mut(at + 2).as_mut_slice());
        }
        raw.d_input
    }

    /// Trace of layer `l` for one sample (test and diagnostics helper).
    pub fn trace_sample(&self, x: &[f64]) -> Vec<LayerTrace> {
        self.forward_sample(x).1
    }
}

// ---------------------------------------------------------------------------
// Kernels

struct GateRefs<'a> {
    w: &'a Matrix,
    u: &'a Matrix,
    b: &'a [f64],
}

struct SigRefs<'a> {
    spec: SigSpec,
    w_gate: &'a Matrix,
    b_gate: &'a [f64],
    w_sig: &'a Matrix,
}

struct LayerRefs<'a> {
    kind: LayerKind,
    hidden: usize,
    /// Kernel gate order (LSTM: i f c o, GRU: z r h); `None` where the gate
    /// is signature-driven.
    gates: Vec<Option<GateRefs<'a>>>,
    sig: Option<SigRefs<'a>>,
}

/// Signature-gate intermediates for one sample.
#[derive(Debug, Clone)]
pub struct SigTrace {
    /// Projected path `T × p`.
    pub path: Vec<f64>,
    /// Raw prefix signatures `T × sig_dim`.
    pub raw: Vec<f64>,
    /// Time-normalized prefix signatures `T × sig_dim`.
    pub normalized: Vec<f64>,
}

/// Everything a layer's forward pass keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    kind: LayerKind,
    steps: usize,
    hidden: usize,
    input_dim: usize,
    input: Vec<f64>,
    /// `(T+1) × H`, row 0 is the initial state.
    h: Vec<f64>,
    /// `(T+1) × H` cell states (LSTM kinds only).
    c: Vec<f64>,
    /// `T × G × H` gate activations in kernel order.
    gates: Vec<f64>,
    /// GRU only: `r ⊙ h_{t-1}` per step.
    reset_hidden: Vec<f64>,
    sig: Option<SigTrace>,
}

impl LayerTrace {
    fn n_gates(&self) -> usize {
        match self.kind {
            LayerKind::Lstm | LayerKind::SigLstm => 4,
            LayerKind::Gru | LayerKind::SigGru => 3,
        }
    }

    /// Hidden outputs `T × H`.
    pub fn outputs(&self) -> &[f64] {
        &self.h[self.hidden..]
    }

    /// Hidden state after step `t` (0-based).
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }

    /// Cell state after step `t` (LSTM kinds).
    pub fn c_at(&self, t: usize) -> Option<&[f64]> {
        if self.c.is_empty() {
            None
        } else {
            Some(&self.c[(t + 1) * self.hidden..(t + 2) * self.hidden])
        }
    }

    /// Activation of gate `name` at step `t`: `i f c o` for LSTM kinds
    /// (`c` is the candidate), `z r h` for GRU kinds (`h` is the candidate).
    pub fn gate(&self, name: char, t: usize) -> Option<&[f64]> {
        let g = match (self.kind, name) {
            (LayerKind::Lstm | LayerKind::SigLstm, 'i') => I,
            (LayerKind::Lstm | LayerKind::SigLstm, 'f') => F,
            (LayerKind::Lstm | LayerKind::SigLstm, 'c') => C,
            (LayerKind::Lstm | LayerKind::SigLstm, 'o') => O,
            (LayerKind::Gru | LayerKind::SigGru, 'z') => Z,
            (LayerKind::Gru | LayerKind::SigGru, 'r') => R,
            (LayerKind::Gru | LayerKind::SigGru, 'h') => HC,
            _ => return None,
        };
        let h = self.hidden;
        let at = (t * self.n_gates() + g) * h;
        Some(&self.gates[at..at + h])
    }

    pub fn sig(&self) -> Option<&SigTrace> {
        self.sig.as_ref()
    }
}

/// Projects the input, streams its signature and returns the gate
/// pre-activations `b_gate + W_gate·Ŝ_t` for every step.
fn sig_gate_preact(sig: &SigRefs<'_>, input: &[f64], in_dim: usize, steps: usize, hidden: usize) -> (Vec<f64>, SigTrace) {
    let p = sig.spec.dim();
    let d = sig.spec.sig_dim();
    let mut path = vec![0.0; steps * p];
    for t in 0..steps {
        gemv_acc(sig.w_sig, &input[t * in_dim..(t + 1) * in_dim], &mut path[t * p..(t + 1) * p]);
    }
    let mut raw = vec![0.0; steps * d];
    signature::stream_into(sig.spec, &path, steps, &mut raw);
    let mut normalized = raw.clone();
    signature::normalize_in_place(sig.spec, &mut normalized);
    let mut pre = vec![0.0; steps * hidden];
    for t in 0..steps {
        let dst = &mut pre[t * hidden..(t + 1) * hidden];
        dst.copy_from_slice(sig.b_gate);
        gemv_acc(sig.w_gate, &normalized[t * d..(t + 1) * d], dst);
    }
    (pre, SigTrace { path, raw, normalized })
}

fn layer_forward(refs: &LayerRefs<'_>, input: Vec<f64>, steps: usize) -> LayerTrace {
    let h = refs.hidden;
    let in_dim = input.len() / steps;
    let n_gates = refs.gates.len();

    // Input contributions for all steps at once: b_g + W_g·x_t.
    let mut pre = vec![0.0; steps * n_gates * h];
    for t in 0..steps {
        let x_t = &input[t * in_dim..(t + 1) * in_dim];
        for (g, gate) in refs.gates.iter().enumerate() {
            if let Some(gate) = gate {
                let dst = &mut pre[(t * n_gates + g) * h..(t * n_gates + g + 1) * h];
                dst.copy_from_slice(gate.b);
                gemv_acc(gate.w, x_t, dst);
            }
        }
    }
    let sig = refs.sig.as_ref().map(|sig| {
        let (gate_pre, trace) = sig_gate_preact(sig, &input, in_dim, steps, h);
        let g = if matches!(refs.kind, LayerKind::SigLstm) { F } else { R };
        for t in 0..steps {
            pre[(t * n_gates + g) * h..(t * n_gates + g + 1) * h]
                .copy_from_slice(&gate_pre[t * h..(t + 1) * h]);
        }
        trace
    });

    let mut trace = LayerTrace {
        kind: refs.kind,
        steps,
        hidden: h,
        input_dim: in_dim,
        input,
        h: vec![0.0; (steps + 1) * h],
        c: Vec::new(),
        gates: pre,
        reset_hidden: Vec::new(),
        sig,
    };
    match refs.kind {
        LayerKind::Lstm | LayerKind::SigLstm => lstm_scan(refs, &mut trace),
        LayerKind::Gru | LayerKind::SigGru => gru_scan(refs, &mut trace),
    }
    trace
}

/// Sequential part of the LSTM; turns pre-activations into activations in place.
fn lstm_scan(refs: &LayerRefs<'_>, tr: &mut LayerTrace) {
    let h = refs.hidden;
    tr.c = vec![0.0; (tr.steps + 1) * h];
    for t in 0..tr.steps {
        let (h_done, h_rest) = tr.h.split_at_mut((t + 1) * h);
        let h_prev = &h_done[t * h..];
        let a = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
        for (g, gate) in refs.gates.iter().enumerate() {
            if let Some(gate) = gate {
                gemv_acc(gate.u, h_prev, &mut a[g * h..(g + 1) * h]);
            }
        }
        let (c_done, c_rest) = tr.c.split_at_mut((t + 1) * h);
        let c_prev = &c_done[t * h..];
        for j in 0..h {
            let i = sigmoid(a[I * h + j]);
            let f = sigmoid(a[F * h + j]);
            let g = a[C * h + j].tanh();
            let o = sigmoid(a[O * h + j]);
            a[I * h + j] = i;
            a[F * h + j] = f;
            a[C * h + j] = g;
            a[O * h + j] = o;
            let c = f * c_prev[j] + i * g;
            c_rest[j] = c;
            h_rest[j] = o * c.tanh();
        }
    }
}

fn gru_scan(refs: &LayerRefs<'_>, tr: &mut LayerTrace) {
    let h = refs.hidden;
    tr.reset_hidden = vec![0.0; tr.steps * h];
    for t in 0..tr.steps {
        let (h_done, h_rest) = tr.h.split_at_mut((t + 1) * h);
        let h_prev = &h_done[t * h..];
        let a = &mut tr.gates[t * 3 * h..(t + 1) * 3 * h];
        for g in [Z, R] {
            if let Some(gate) = &refs.gates[g] {
                gemv_acc(gate.u, h_prev, &mut a[g * h..(g + 1) * h]);
            }
        }
        let rh = &mut tr.reset_hidden[t * h..(t + 1) * h];
        for j in 0..h {
            a[Z * h + j] = sigmoid(a[Z * h + j]);
            a[R * h + j] = sigmoid(a[R * h + j]);
            rh[j] = a[R * h + j] * h_prev[j];
        }
        let cand = refs.gates[HC].as_ref().expect("candidate gate always present");
        gemv_acc(cand.u, rh, &mut a[HC * h..(HC + 1) * h]);
        for j in 0..h {
            let hh = a[HC * h + j].tanh();
            a[HC * h + j] = hh;
            let z = a[Z * h + j];
            h_rest[j] = (1.0 - z) * h_prev[j] + z * hh;
        }
    }
}

struct GateGrads {
    w: Matrix,
    u: Matrix,
    b: Vec<f64>,
}

struct SigGrads {
    w_gate: Matrix,
    b_gate: Vec<f64>,
    w_sig: Matrix,
}

struct LayerGrads {
    gates: Vec<Option<GateGrads>>,
    sig: Option<SigGrads>,
    d_input: Vec<f64>,
}

impl LayerGrads {
    fn new(refs: &LayerRefs<'_>, tr: &LayerTrace) -> Self {
        let h = refs.hidden;
        let gates = refs
            .gates
            .iter()
            .map(|g| {
                g.as_ref().map(|_| GateGrads {
                    w: Matrix::zeros(h, tr.input_dim),
                    u: Matrix::zeros(h, h),
                    b: vec![0.0; h],
                })
            })
            .collect();
        let sig = refs.sig.as_ref().map(|s| SigGrads {
            w_gate: Matrix::zeros(h, s.spec.sig_dim()),
            b_gate: vec![0.0; h],
            w_sig: Matrix::zeros(s.spec.dim(), tr.input_dim),
        });
        Self {
            gates,
            sig,
            d_input: vec![0.0; tr.steps * tr.input_dim],
        }
    }
}

/// Input-side gradients shared by both cell families, given the
/// pre-activation gradients `da` (`T × G × H`, kernel gate order).
fn finish_input_grads(refs: &LayerRefs<'_>, tr: &LayerTrace, da: &[f64], sig_gate: usize, out: &mut LayerGrads) {
    let h = refs.hidden;
    let d_in = tr.input_dim;
    let n_gates = refs.gates.len();
    for t in 0..tr.steps {
        let x_t = &tr.input[t * d_in..(t + 1) * d_in];
        let dx_t = &mut out.d_input[t * d_in..(t + 1) * d_in];
        for (g, gate) in refs.gates.iter().enumerate() {
            let (Some(gate), Some(gg)) = (gate, out.gates[g].as_mut()) else {
                continue;
            };
            let da_g = &da[(t * n_gates + g) * h..(t * n_gates + g + 1) * h];
            outer_acc(&mut gg.w, da_g, x_t);
            axpy(1.0, da_g, &mut gg.b);
            gemv_t_acc(gate.w, da_g, dx_t);
        }
    }
    let (Some(sig), Some(sg), Some(st)) = (refs.sig.as_ref(), out.sig.as_mut(), tr.sig.as_ref())
    else {
        return;
    };
    let p = sig.spec.dim();
    let d = sig.spec.sig_dim();
    let mut d_raw = vec![0.0; tr.steps * d];
    for t in 0..tr.steps {
        let da_g = &da[(t * n_gates + sig_gate) * h..(t * n_gates + sig_gate + 1) * h];
        outer_acc(&mut sg.w_gate, da_g, &st.normalized[t * d..(t + 1) * d]);
        axpy(1.0, da_g, &mut sg.b_gate);
        // Ŝ_t = S_t / t with t fixed, so dS_t = dŜ_t / t.
        let dst = &mut d_raw[t * d..(t + 1) * d];
        gemv_t_acc(sig.w_gate, da_g, dst);
        let inv = 1.0 / (t + 1) as f64;
        dst.iter_mut().for_each(|v| *v *= inv);
    }
    let mut d_path = vec![0.0; tr.steps * p];
    signature::stream_backward(sig.spec, &st.path, tr.steps, &st.raw, &d_raw, &mut d_path);
    for t in 0..tr.steps {
        let dp = &d_path[t * p..(t + 1) * p];
        outer_acc(&mut sg.w_sig, dp, &tr.input[t * d_in..(t + 1) * d_in]);
        gemv_t_acc(sig.w_sig, dp, &mut out.d_input[t * d_in..(t + 1) * d_in]);
    }
}

fn lstm_backward(refs: &LayerRefs<'_>, tr: &LayerTrace, d_out: &[f64]) -> LayerGrads {
    let h = refs.hidden;
    let mut out = LayerGrads::new(refs, tr);
    let mut da = vec![0.0; tr.steps * 4 * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..tr.steps).rev() {
        let a = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_prev = &tr.c[t * h..(t + 1) * h];
        let c = &tr.c[(t + 1) * h..(t + 2) * h];
        let h_prev = &tr.h[t * h..(t + 1) * h];
        let da_t = &mut da[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i, f, g, o) = (a[I * h + j], a[F * h + j], a[C * h + j], a[O * h + j]);
            let dh = d_out[t * h + j] + dh_next[j];
            let tc = c[j].tanh();
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da_t[I * h + j] = dc * g * i * (1.0 - i);
            da_t[F * h + j] = dc * c_prev[j] * f * (1.0 - f);
            da_t[C * h + j] = dc * i * (1.0 - g * g);
            da_t[O * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (g, gate) in refs.gates.iter().enumerate() {
            let (Some(gate), Some(gg)) = (gate, out.gates[g].as_mut()) else {
                continue;
            };
            let da_g = &da_t[g * h..(g + 1) * h];
            outer_acc(&mut gg.u, da_g, h_prev);
            gemv_t_acc(gate.u, da_g, &mut dh_next);
        }
    }
    finish_input_grads(refs, tr, &da, F, &mut out);
    out
}

fn gru_backward(refs: &LayerRefs<'_>, tr: &LayerTrace, d_out: &[f64]) -> LayerGrads {
    let h = refs.hidden;
    let mut out = LayerGrads::new(refs, tr);
    let mut da = vec![0.0; tr.steps * 3 * h];
    let mut dh_next = vec![0.0; h];
    let mut dh_prev = vec![0.0; h];
    let mut d_rh = vec![0.0; h];
    let cand = refs.gates[HC].as_ref().expect("candidate gate always present");
    for t in (0..tr.steps).rev() {
        let a = &tr.gates[t * 3 * h..(t + 1) * 3 * h];
        let h_prev = &tr.h[t * h..(t + 1) * h];
        let rh = &tr.reset_hidden[t * h..(t + 1) * h];
        let da_t = &mut da[t * 3 * h..(t + 1) * 3 * h];
        for j in 0..h {
            let (z, hh) = (a[Z * h + j], a[HC * h + j]);
            let dh = d_out[t * h + j] + dh_next[j];
            da_t[Z * h + j] = dh * (hh - h_prev[j]) * z * (1.0 - z);
            da_t[HC * h + j] = dh * z * (1.0 - hh * hh);
            dh_prev[j] = dh * (1.0 - z);
        }
        let gh = out.gates[HC].as_mut().expect("candidate gate always present");
        outer_acc(&mut gh.u, &da_t[HC * h..(HC + 1) * h], rh);
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        gemv_t_acc(cand.u, &da_t[HC * h..(HC + 1) * h], &mut d_rh);
        for j in 0..h {
            let r = a[R * h + j];
            da_t[R * h + j] = d_rh[j] * h_prev[j] * r * (1.0 - r);
            dh_prev[j] += d_rh[j] * r;
        }
        for g in [Z, R] {
            let (Some(gate), Some(gg)) = (refs.gates[g].as_ref(), out.gates[g].as_mut()) else {
                continue;
            };
            let da_g = &da_t[g * h..(g + 1) * h];
            outer_acc(&mut gg.u, da_g, h_prev);
            gemv_t_acc(gate.u, da_g, &mut dh_prev);
        }
        std::mem::swap(&mut dh_next, &mut dh_prev);
    }
    finish_input_grads(refs, tr, &da, R, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Standalone cells with owned parameters

/// LSTM weights; arrays are indexed `i, f, c, o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: [Matrix; 4],
    pub u: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

/// GRU weights; arrays are indexed `z, r, h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w: [Matrix; 3],
    pub u: [Matrix; 3],
    pub b: [Vec<f64>; 3],
}

/// Signature gate: projection, gate kernel over signature space, and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SigGateParams {
    pub projection: ProjectionParams,
    pub w_gate: Matrix,
    pub b_gate: Vec<f64>,
    pub spec: SigSpec,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Matrix::zeros(hidden, input_dim)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn random(rng: &mut RngStream, input_dim: usize, hidden: usize, scale: f64) -> Self {
        let mut m = |r, c| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-scale, scale)).collect())
                .expect("sized")
        };
        let w = std::array::from_fn(|_| m(hidden, input_dim));
        let u = std::array::from_fn(|_| m(hidden, hidden));
        let b = std::array::from_fn(|_| m(hidden, 1).into_vec());
        Self { w, u, b }
    }

    fn refs(&self, skip_forget: bool) -> LayerRefs<'_> {
        LayerRefs {
            kind: if skip_forget { LayerKind::SigLstm } else { LayerKind::Lstm },
            hidden: self.b[0].len(),
            gates: (0..4)
                .map(|g| {
                    (!(skip_forget && g == F)).then(|| GateRefs {
                        w: &self.w[g],
                        u: &self.u[g],
                        b: &self.b[g],
                    })
                })
                .collect(),
            sig: None,
        }
    }
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Matrix::zeros(hidden, input_dim)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn random(rng: &mut RngStream, input_dim: usize, hidden: usize, scale: f64) -> Self {
        let mut m = |r, c| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-scale, scale)).collect())
                .expect("sized")
        };
        let w = std::array::from_fn(|_| m(hidden, input_dim));
        let u = std::array::from_fn(|_| m(hidden, hidden));
        let b = std::array::from_fn(|_| m(hidden, 1).into_vec());
        Self { w, u, b }
    }

    fn refs(&self, skip_reset: bool) -> LayerRefs<'_> {
        LayerRefs {
            kind: if skip_reset { LayerKind::SigGru } else { LayerKind::Gru },
            hidden: self.b[0].len(),
            gates: (0..3)
                .map(|g| {
                    (!(skip_reset && g == R)).then(|| GateRefs {
                        w: &self.w[g],
                        u: &self.u[g],
                        b: &self.b[g],
                    })
                })
                .collect(),
            sig: None,
        }
    }
}

impl SigGateParams {
    pub fn zeros(input_dim: usize, hidden: usize, spec: SigSpec) -> Self {
        Self {
            projection: ProjectionParams::new(Matrix::zeros(spec.dim(), input_dim)),
            w_gate: Matrix::zeros(hidden, spec.sig_dim()),
            b_gate: vec![0.0; hidden],
            spec,
        }
    }

    fn refs(&self) -> SigRefs<'_> {
        SigRefs {
            spec: self.spec,
            w_gate: &self.w_gate,
            b_gate: &self.b_gate,
            w_sig: &self.projection.w_sig,
        }
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!("{what} len {got}"), format!("expected {want}")));
    }
    Ok(())
}

fn check_gate_shapes(w: &[Matrix], u: &[Matrix], b: &[Vec<f64>], d: usize, h: usize) -> Result<()> {
    for g in 0..w.len() {
        if w[g].rows() != h || w[g].cols() != d {
            return Err(Error::shape(
                format!("W[{g}] {}x{}", w[g].rows(), w[g].cols()),
                format!("expected {h}x{d}"),
            ));
        }
        if u[g].rows() != h || u[g].cols() != h {
            return Err(Error::shape(
                format!("U[{g}] {}x{}", u[g].rows(), u[g].cols()),
                format!("expected {h}x{h}"),
            ));
        }
        check_len(&format!("b[{g}]"), b[g].len(), h)?;
    }
    Ok(())
}

/// One LSTM step; returns `(h_t, c_t)`.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = p.b[0].len();
    check_gate_shapes(&p.w, &p.u, &p.b, x.len(), h)?;
    check_len("h_prev", h_prev.len(), h)?;
    check_len("c_prev", c_prev.len(), h)?;
    let mut pre = vec![0.0; 4 * h];
    for g in 0..4 {
        let dst = &mut pre[g * h..(g + 1) * h];
        dst.copy_from_slice(&p.b[g]);
        gemv_acc(&p.w[g], x, dst);
        gemv_acc(&p.u[g], h_prev, dst);
    }
    let mut h_t = vec![0.0; h];
    let mut c_t = vec![0.0; h];
    for j in 0..h {
        let i = sigmoid(pre[I * h + j]);
        let f = sigmoid(pre[F * h + j]);
        let g = pre[C * h + j].tanh();
        let o = sigmoid(pre[O * h + j]);
        c_t[j] = f * c_prev[j] + i * g;
        h_t[j] = o * c_t[j].tanh();
    }
    Ok((h_t, c_t))
}

/// One GRU step.
pub fn gru_step(x: &[f64], h_prev: &[f64], p: &GruParams) -> Result<Vec<f64>> {
    let h = p.b[0].len();
    check_gate_shapes(&p.w, &p.u, &p.b, x.len(), h)?;
    check_len("h_prev", h_prev.len(), h)?;
    let mut pre = vec![0.0; 3 * h];
    for g in 0..3 {
        let dst = &mut pre[g * h..(g + 1) * h];
        dst.copy_from_slice(&p.b[g]);
        gemv_acc(&p.w[g], x, dst);
    }
    for g in [Z, R] {
        gemv_acc(&p.u[g], h_prev, &mut pre[g * h..(g + 1) * h]);
    }
    let rh: Vec<f64> = (0..h).map(|j| sigmoid(pre[R * h + j]) * h_prev[j]).collect();
    gemv_acc(&p.u[HC], &rh, &mut pre[HC * h..(HC + 1) * h]);
    Ok((0..h)
        .map(|j| {
            let z = sigmoid(pre[Z * h + j]);
            (1.0 - z) * h_prev[j] + z * pre[HC * h + j].tanh()
        })
        .collect())
}

fn sequence_forward(refs: LayerRefs<'_>, x: &Tensor3) -> Tensor3 {
    let steps = x.time();
    let h = refs.hidden;
    let mut out = Tensor3::zeros(x.batch(), steps, h);
    for b in 0..x.batch() {
        let tr = layer_forward(&refs, x.sample(b).to_vec(), steps);
        out.sample_mut(b).copy_from_slice(tr.outputs());
    }
    out
}

fn check_sig_gate(g: &SigGateParams, d: usize, h: usize) -> Result<()> {
    if g.projection.in_dim() != d || g.projection.out_dim() != g.spec.dim() {
        return Err(Error::shape(
            format!("W_sig {}x{}", g.projection.out_dim(), g.projection.in_dim()),
            format!("expected {}x{d}", g.spec.dim()),
        ));
    }
    if g.w_gate.rows() != h || g.w_gate.cols() != g.spec.sig_dim() {
        return Err(Error::shape(
            format!("W_gate {}x{}", g.w_gate.rows(), g.w_gate.cols()),
            format!("expected {h}x{}", g.spec.sig_dim()),
        ));
    }
    check_len("b_gate", g.b_gate.len(), h)
}

/// Plain LSTM over a whole `[B, T, D]` block, zero initial state.
pub fn lstm_forward(x: &Tensor3, p: &LstmParams) -> Result<Tensor3> {
    check_gate_shapes(&p.w, &p.u, &p.b, x.features(), p.b[0].len())?;
    Ok(sequence_forward(p.refs(false), x))
}

/// Plain GRU over a whole `[B, T, D]` block, zero initial state.
pub fn gru_forward(x: &Tensor3, p: &GruParams) -> Result<Tensor3> {
    check_gate_shapes(&p.w, &p.u, &p.b, x.features(), p.b[0].len())?;
    Ok(sequence_forward(p.refs(false), x))
}

/// LSTM whose forget gate is `σ(W_gate·Ŝ_t + b_gate)`. The forget-gate slots
/// of `p` are not read.
pub fn siglstm_forward(x: &Tensor3, p: &LstmParams, g: &SigGateParams) -> Result<Tensor3> {
    let h = p.b[0].len();
    check_gate_shapes(&p.w, &p.u, &p.b, x.features(), h)?;
    check_sig_gate(g, x.features(), h)?;
    let mut refs = p.refs(true);
    refs.sig = Some(g.refs());
    Ok(sequence_forward(refs, x))
}

/// GRU whose reset gate is `σ(W_gate·Ŝ_t + b_gate)`. The reset-gate slots of
/// `p` are not read.
pub fn siggru_forward(x: &Tensor3, p: &GruParams, g: &SigGateParams) -> Result<Tensor3> {
    let h = p.b[0].len();
    check_gate_shapes(&p.w, &p.u, &p.b, x.features(), h)?;
    check_sig_gate(g, x.features(), h)?;
    let mut refs = p.refs(true);
    refs.sig = Some(g.refs());
    Ok(sequence_forward(refs, x))
}

/// Predictions of a full model over a batch.
pub fn stack_forward(x: &Tensor3, model: &Model) -> Result<Vec<f64>> {
    model.predict(x)
}
