//! Stacked GRU sequence networks with a linear decoder: the mean network
//! `f(x; θ)` and the variance network emitting Gamma shape/rate pairs.
//!
//! Cell update per layer, with `h₀ = 0`:
//!
//! ```text
//! z = σ(W_xz x + b_xz + W_hz h + b_hz)
//! r = σ(W_xr x + b_xr + W_hr h + b_hr)
//! h̃ = tanh(W_xh x + b_xh + r ⊙ (W_hh h + b_hh))
//! h' = z ⊙ h + (1 - z) ⊙ h̃
//! ```
//!
//! Layer `k + 1` consumes the hidden sequence of layer `k`; the decoder reads
//! the last layer.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Layout, LayoutEntry, ParamVars, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{axpy, sigmoid, softplus, Matrix, RngStream};
use crate::sequence::{SeqBatch, Sequence};

/// Positivity floor added to the softplus outputs of the variance network.
pub const EPS_POS: f64 = 1e-6;

const GATE_NAMES: [&str; 12] = [
    "w_xz", "w_hz", "w_xr", "w_hr", "w_xh", "w_hh", "b_xz", "b_hz", "b_xr", "b_hr", "b_xh", "b_hh",
];
const PER_LAYER: usize = GATE_NAMES.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruDims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

impl GruDims {
    pub fn new(input: usize, hidden: usize, layers: usize, output: usize) -> Self {
        GruDims {
            input,
            hidden,
            layers,
            output,
        }
    }

    fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("input", self.input),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("output", self.output),
        ] {
            if v == 0 {
                return Err(Error::config(format!("dims.{field}"), "must be at least 1"));
            }
        }
        Ok(())
    }

    fn layer_input(&self, k: usize) -> usize {
        if k == 0 {
            self.input
        } else {
            self.hidden
        }
    }

    pub fn layout(&self) -> Result<Arc<Layout>> {
        self.validate()?;
        let h = self.hidden;
        let mut entries = Vec::new();
        for k in 0..self.layers {
            let i = self.layer_input(k);
            for (g, name) in GATE_NAMES.iter().enumerate() {
                let shape = match g {
                    0 | 2 | 4 => (h, i),
                    1 | 3 | 5 => (h, h),
                    _ => (1, h),
                };
                entries.push(LayoutEntry {
                    name: format!("l{k}.{name}"),
                    shape,
                });
            }
        }
        entries.push(LayoutEntry {
            name: "dec.w".into(),
            shape: (self.output, h),
        });
        entries.push(LayoutEntry {
            name: "dec.b".into(),
            shape: (1, self.output),
        });
        Ok(Arc::new(Layout::new(entries)?))
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        (0..self.layers)
            .map(|k| 3 * h * self.layer_input(k) + 3 * h * h + 6 * h)
            .sum::<usize>()
            + self.output * h
            + self.output
    }
}

/// Named view of one layer's weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayerParams {
    pub w_xz: Matrix,
    pub w_hz: Matrix,
    pub w_xr: Matrix,
    pub w_hr: Matrix,
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_xz: Vec<f64>,
    pub b_hz: Vec<f64>,
    pub b_xr: Vec<f64>,
    pub b_hr: Vec<f64>,
    pub b_xh: Vec<f64>,
    pub b_hh: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Weights `U(-1/√hidden, 1/√hidden)`, biases zero.
    #[default]
    UniformFanIn,
    Zeros,
}

pub fn init_params(dims: GruDims, scheme: InitScheme, rng: &mut RngStream) -> Result<ParamVector> {
    let layout = dims.layout()?;
    let mut p = ParamVector::zeros(layout.clone());
    if scheme == InitScheme::Zeros {
        return Ok(p);
    }
    let bound = 1.0 / (dims.hidden as f64).sqrt();
    for (k, e) in layout.entries().iter().enumerate() {
        let is_bias = e.name.ends_with(".b") || e.name.contains(".b_");
        if is_bias {
            continue;
        }
        let off = layout.offset(k);
        for v in &mut p.values_mut()[off..off + e.size()] {
            *v = rng.uniform_range(-bound, bound);
        }
    }
    Ok(p)
}

/// Operations the cell needs, implemented both for plain evaluation and for
/// recording on a tape.
trait CellOps {
    type T: Clone;
    fn affine(&mut self, x: &Self::T, w: usize, b: usize) -> Result<Self::T>;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn sigmoid(&mut self, a: &Self::T) -> Self::T;
    fn tanh(&mut self, a: &Self::T) -> Self::T;
    fn lerp(&mut self, z: &Self::T, a: &Self::T, b: &Self::T) -> Result<Self::T>;
}

struct Eval<'a> {
    tensors: &'a [Matrix],
}

impl CellOps for Eval<'_> {
    type T = Matrix;

    fn affine(&mut self, x: &Matrix, w: usize, b: usize) -> Result<Matrix> {
        let mut out = x.matmul_transb(&self.tensors[w])?;
        let bias = self.tensors[b].data();
        for r in 0..out.rows() {
            axpy(1.0, bias, out.row_mut(r));
        }
        Ok(out)
    }

    fn add(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.add(b)
    }

    fn mul(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.hadamard(b)
    }

    fn sigmoid(&mut self, a: &Matrix) -> Matrix {
        a.map(sigmoid)
    }

    fn tanh(&mut self, a: &Matrix) -> Matrix {
        a.map(f64::tanh)
    }

    fn lerp(&mut self, z: &Matrix, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        z.zip_with(a, "lerp", |z, a| z * a)?
            .add(&z.zip_with(b, "lerp", |z, b| (1.0 - z) * b)?)
    }
}

struct Record<'a> {
    tape: &'a mut Tape,
    vars: &'a ParamVars,
}

impl CellOps for Record<'_> {
    type T = Var;

    fn affine(&mut self, x: &Var, w: usize, b: usize) -> Result<Var> {
        let (w, b) = (self.vars.at(w), self.vars.at(b));
        self.tape.affine(*x, w, Some(b))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        self.tape.sigmoid(*a)
    }

    fn tanh(&mut self, a: &Var) -> Var {
        self.tape.tanh(*a)
    }

    fn lerp(&mut self, z: &Var, a: &Var, b: &Var) -> Result<Var> {
        self.tape.lerp(*z, *a, *b)
    }
}

/// One GRU layer over a whole sequence; `base` is the index of the layer's
/// first tensor in the layout.
fn run_layer<O: CellOps>(ops: &mut O, base: usize, xs: &[O::T], h0: O::T) -> Result<Vec<O::T>> {
    let g = |i: usize| base + i;
    let mut h = h0;
    let mut hs = Vec::with_capacity(xs.len());
    for x in xs {
        let zx = ops.affine(x, g(0), g(6))?;
        let zh = ops.affine(&h, g(1), g(7))?;
        let za = ops.add(&zx, &zh)?;
        let z = ops.sigmoid(&za);
        let rx = ops.affine(x, g(2), g(8))?;
        let rh = ops.affine(&h, g(3), g(9))?;
        let ra = ops.add(&rx, &rh)?;
        let r = ops.sigmoid(&ra);
        let cx = ops.affine(x, g(4), g(10))?;
        let ch = ops.affine(&h, g(5), g(11))?;
        let gated = ops.mul(&r, &ch)?;
        let ca = ops.add(&cx, &gated)?;
        let cand = ops.tanh(&ca);
        h = ops.lerp(&z, &h, &cand)?;
        hs.push(h.clone());
    }
    Ok(hs)
}

/// Stack of layers plus decoder. Returns (decoded outputs, last-layer hidden).
fn run_network<O: CellOps>(
    ops: &mut O,
    dims: GruDims,
    xs: Vec<O::T>,
    zeros: impl Fn() -> O::T,
) -> Result<(Vec<O::T>, Vec<O::T>)> {
    let mut seq = xs;
    for k in 0..dims.layers {
        seq = run_layer(ops, k * PER_LAYER, &seq, zeros())?;
    }
    let dec_w = dims.layers * PER_LAYER;
    let outputs = seq
        .iter()
        .map(|h| ops.affine(h, dec_w, dec_w + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok((outputs, seq))
}

/// Outputs of a batched forward pass, one matrix per step.
#[derive(Clone, Debug)]
pub struct GruOutput {
    pub outputs: SeqBatch,
    pub hidden: SeqBatch,
}

/// GRU network: dims plus flat parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GruNetwork {
    dims: GruDims,
    params: ParamVector,
}

/// Mean network `f(x; θ)`.
pub type MeanNetwork = GruNetwork;

impl GruNetwork {
    pub fn new(dims: GruDims, params: ParamVector) -> Result<Self> {
        let layout = dims.layout()?;
        if **params.layout() != *layout {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                actual: params.len(),
                context: "parameter layout does not match network dims",
            });
        }
        Ok(GruNetwork { dims, params })
    }

    pub fn init(dims: GruDims, scheme: InitScheme, rng: &mut RngStream) -> Result<Self> {
        let params = init_params(dims, scheme, rng)?;
        Ok(GruNetwork { dims, params })
    }

    pub fn dims(&self) -> GruDims {
        self.dims
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        GruNetwork::new(self.dims, params)
    }

    pub fn layer(&self, k: usize) -> Option<GruLayerParams> {
        if k >= self.dims.layers {
            return None;
        }
        let base = k * PER_LAYER;
        let t = |i: usize| self.params.tensor_at(base + i);
        let v = |i: usize| self.params.slice_at(base + i).to_vec();
        Some(GruLayerParams {
            w_xz: t(0),
            w_hz: t(1),
            w_xr: t(2),
            w_hr: t(3),
            w_xh: t(4),
            w_hh: t(5),
            b_xz: v(6),
            b_hz: v(7),
            b_xr: v(8),
            b_hr: v(9),
            b_xh: v(10),
            b_hh: v(11),
        })
    }

    pub fn decoder(&self) -> (Matrix, Vec<f64>) {
        let k = self.dims.layers * PER_LAYER;
        (self.params.tensor_at(k), self.params.slice_at(k + 1).to_vec())
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                actual: dim,
                context: "network input width",
            });
        }
        Ok(())
    }

    pub fn forward_batch(&self, xs: &SeqBatch) -> Result<GruOutput> {
        self.check_input(xs.dim())?;
        let tensors = self.params.unflatten();
        let mut ops = Eval { tensors: &tensors };
        let (b, h) = (xs.batch_size(), self.dims.hidden);
        let (out, hidden) = run_network(&mut ops, self.dims, xs.steps().to_vec(), || Matrix::zeros(b, h))?;
        Ok(GruOutput {
            outputs: SeqBatch::from_steps(out),
            hidden: SeqBatch::from_steps(hidden),
        })
    }

    /// Decoded outputs and last-layer hidden states for one path.
    pub fn forward(&self, path: &Sequence) -> Result<(Sequence, Sequence)> {
        let out = self.forward_batch(&SeqBatch::from_sequences([path])?)?;
        let mut o = out.outputs.to_sequences();
        let mut h = out.hidden.to_sequences();
        Ok((o.remove(0), h.remove(0)))
    }

    /// Record the forward pass on `tape`; `vars` must come from
    /// `tape.params(..)` on a vector with this network's layout.
    pub fn forward_tape(
        dims: GruDims,
        tape: &mut Tape,
        vars: &ParamVars,
        xs: &SeqBatch,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        if xs.dim() != dims.input {
            return Err(Error::DimensionMismatch {
                expected: dims.input,
                actual: xs.dim(),
                context: "network input width",
            });
        }
        let (b, h) = (xs.batch_size(), dims.hidden);
        let inputs: Vec<Var> = xs.steps().iter().map(|m| tape.constant(m.clone())).collect();
        let h0 = tape.constant(Matrix::zeros(b, h));
        let mut ops = Record { tape, vars };
        run_network(&mut ops, dims, inputs, || h0)
    }
}

/// Variance network `s²(x; φ)`: a GRU whose decoder emits raw `(a, b)` per
/// output component, mapped to Gamma shape `α = softplus(a) + ε` and rate
/// `λ = (softplus(b) + ε) / c` where `c` is the per-component residual scale
/// fixed at training time. `s² = α / λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceNetwork {
    pub net: GruNetwork,
    pub residual_scale: Vec<f64>,
}

/// Per-step Gamma parameters and the implied variance.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceOutput {
    pub alpha: Sequence,
    pub lambda: Sequence,
    pub s2: Sequence,
}

impl VarianceNetwork {
    /// `output` is the number of modeled components (decoder width `2·output`).
    pub fn init(
        input: usize,
        hidden: usize,
        layers: usize,
        output: usize,
        scheme: InitScheme,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let net = GruNetwork::init(GruDims::new(input, hidden, layers, 2 * output), scheme, rng)?;
        Ok(VarianceNetwork {
            net,
            residual_scale: vec![1.0; output],
        })
    }

    pub fn output_dim(&self) -> usize {
        self.net.dims().output / 2
    }

    /// Map raw decoder outputs `(a, b)` of one component to `(α, λ)`.
    pub fn gamma_params(raw_a: f64, raw_b: f64, scale: f64) -> (f64, f64) {
        (softplus(raw_a) + EPS_POS, (softplus(raw_b) + EPS_POS) / scale)
    }

    pub fn forward_batch(&self, xs: &SeqBatch) -> Result<(SeqBatch, SeqBatch, SeqBatch)> {
        let raw = self.net.forward_batch(xs)?.outputs;
        let j = self.output_dim();
        let mut alpha = Vec::with_capacity(raw.len());
        let mut lambda = Vec::with_capacity(raw.len());
        let mut s2 = Vec::with_capacity(raw.len());
        for m in raw.steps() {
            let mut a = Matrix::zeros(m.rows(), j);
            let mut l = Matrix::zeros(m.rows(), j);
            let mut s = Matrix::zeros(m.rows(), j);
            for r in 0..m.rows() {
                let row = m.row(r);
                for c in 0..j {
                    let (al, la) = Self::gamma_params(row[c], row[j + c], self.residual_scale[c]);
                    a.set(r, c, al);
                    l.set(r, c, la);
                    s.set(r, c, al / la);
                }
            }
            alpha.push(a);
            lambda.push(l);
            s2.push(s);
        }
        Ok((
            SeqBatch::from_steps(alpha),
            SeqBatch::from_steps(lambda),
            SeqBatch::from_steps(s2),
        ))
    }

    pub fn forward(&self, path: &Sequence) -> Result<VarianceOutput> {
        let (a, l, s) = self.forward_batch(&SeqBatch::from_sequences([path])?)?;
        Ok(VarianceOutput {
            alpha: a.to_sequences().remove(0),
            lambda: l.to_sequences().remove(0),
            s2: s.to_sequences().remove(0),
        })
    }

    /// Record `(α, λ)` per step on the tape.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &ParamVars, xs: &SeqBatch) -> Result<Vec<(Var, Var)>> {
        let (raw, _) = GruNetwork::forward_tape(self.net.dims(), tape, vars, xs)?;
        let j = self.output_dim();
        let b = xs.batch_size();
        // Column selectors: raw · Pᵀ picks the `a` or `b` half.
        let mut pick_a = Matrix::zeros(j, 2 * j);
        let mut pick_b = Matrix::zeros(j, 2 * j);
        for c in 0..j {
            pick_a.set(c, c, 1.0);
            pick_b.set(c, j + c, 1.0);
        }
        let mut inv_scale = Matrix::zeros(b, j);
        for r in 0..b {
            for c in 0..j {
                inv_scale.set(r, c, 1.0 / self.residual_scale[c]);
            }
        }
        let pa = tape.constant(pick_a);
        let pb = tape.constant(pick_b);
        let inv = tape.constant(inv_scale);
        raw.into_iter()
            .map(|o| {
                let a = tape.affine(o, pa, None)?;
                let sa = tape.softplus(a);
                let alpha = tape.add_scalar(sa, EPS_POS);
                let bb = tape.affine(o, pb, None)?;
                let sb = tape.softplus(bb);
                let lam_net = tape.add_scalar(sb, EPS_POS);
                let lambda = tape.mul(lam_net, inv)?;
                Ok((alpha, lambda))
            })
            .collect()
    }
}
