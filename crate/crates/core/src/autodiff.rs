//! Reverse-mode differentiation over a tape of matrix-valued primitives,
//! plus a central finite-difference oracle for checking it.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, digamma, dot, log_gamma, sigmoid, softplus, Matrix};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: (usize, usize),
}

impl LayoutEntry {
    pub fn size(&self) -> usize {
        self.shape.0 * self.shape.1
    }
}

/// Ordered map from a flat parameter vector to named 2-D tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(entries: Vec<LayoutEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total = 0;
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::config("layout", format!("duplicate tensor name `{}`", e.name)));
            }
            offsets.push(total);
            total += e.size();
        }
        Ok(Layout {
            entries,
            offsets,
            total,
        })
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn offset(&self, index: usize) -> usize {
        self.offsets[index]
    }

    /// Name of the tensor that owns flat coordinate `i`.
    pub fn name_at(&self, i: usize) -> Option<&str> {
        if i >= self.total {
            return None;
        }
        let k = self.offsets.partition_point(|&o| o <= i) - 1;
        Some(&self.entries[k].name)
    }
}

/// Flat parameter vector with a shared layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                actual: values.len(),
                context: "parameter vector length",
            });
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    /// Assemble from named tensors in layout order.
    pub fn flatten(layout: Arc<Layout>, tensors: &[Matrix]) -> Result<Self> {
        if tensors.len() != layout.entries().len() {
            return Err(Error::DimensionMismatch {
                expected: layout.entries().len(),
                actual: tensors.len(),
                context: "tensor count",
            });
        }
        let mut values = Vec::with_capacity(layout.len());
        for (e, t) in layout.entries().iter().zip(tensors) {
            if t.shape() != e.shape {
                return Err(Error::ShapeMismatch {
                    op: "flatten",
                    lhs: e.shape,
                    rhs: t.shape(),
                });
            }
            values.extend_from_slice(t.data());
        }
        ParamVector::new(layout, values)
    }

    pub fn unflatten(&self) -> Vec<Matrix> {
        (0..self.layout.entries().len()).map(|k| self.tensor_at(k)).collect()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice_at(&self, index: usize) -> &[f64] {
        let off = self.layout.offset(index);
        &self.values[off..off + self.layout.entries()[index].size()]
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|k| self.slice_at(k))
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let k = self.layout.index_of(name)?;
        let off = self.layout.offset(k);
        let size = self.layout.entries()[k].size();
        Some(&mut self.values[off..off + size])
    }

    pub fn tensor_at(&self, index: usize) -> Matrix {
        let (r, c) = self.layout.entries()[index].shape;
        Matrix::from_vec(r, c, self.slice_at(index).to_vec()).expect("layout shape")
    }

    pub fn tensor(&self, name: &str) -> Option<Matrix> {
        self.layout.index_of(name).map(|k| self.tensor_at(k))
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .and_then(|i| self.layout.name_at(i))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, a: f64, other: &ParamVector) {
        axpy(a, &other.values, &mut self.values);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param {
        offset: usize,
    },
    /// `x · wᵀ + b`, `b` a single broadcast row.
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Ln(Var),
    LnGamma(Var),
    /// `z ⊙ a + (1 - z) ⊙ b`
    Lerp {
        z: Var,
        a: Var,
        b: Var,
    },
    Concat(Vec<Var>),
    Sum(Var),
    /// `Σ w ⊙ (a - target)²` with constant `target` and `w`.
    WeightedSqErr {
        a: Var,
        target: Matrix,
        weight: Option<Matrix>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Nodes are appended in evaluation order, so the
/// reverse of insertion order is a valid topological order for backprop.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handles to the parameter leaves registered for one `ParamVector`.
pub struct ParamVars {
    vars: Vec<Var>,
    names: HashMap<String, usize>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .get(name)
            .map(|&k| self.vars[k])
            .ok_or_else(|| Error::config("parameter", format!("no tensor named `{name}`")))
    }

    pub fn at(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node {
            value: m,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register every tensor of `params` as a differentiable leaf.
    pub fn params(&mut self, params: &ParamVector) -> ParamVars {
        let layout = params.layout();
        let mut vars = Vec::with_capacity(layout.entries().len());
        let mut names = HashMap::new();
        for (k, e) in layout.entries().iter().enumerate() {
            self.nodes.push(Node {
                value: params.tensor_at(k),
                op: Op::Param {
                    offset: layout.offset(k),
                },
                needs_grad: true,
            });
            vars.push(Var(self.nodes.len() - 1));
            names.insert(e.name.clone(), k);
        }
        ParamVars { vars, names }
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = xv.matmul_transb(wv)?;
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != (1, out.cols()) {
                return Err(Error::ShapeMismatch {
                    op: "affine bias",
                    lhs: (1, out.cols()),
                    rhs: bv.shape(),
                });
            }
            for r in 0..out.rows() {
                axpy(1.0, bv.data(), out.row_mut(r));
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Affine { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a), &[a])
    }

    pub fn ln_gamma(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let mut v = Matrix::zeros(src.rows(), src.cols());
        for (o, &x) in v.data_mut().iter_mut().zip(src.data()) {
            *o = log_gamma(x)?;
        }
        Ok(self.push(v, Op::LnGamma(a), &[a]))
    }

    pub fn lerp(&mut self, z: Var, a: Var, b: Var) -> Result<Var> {
        let zv = self.value(z);
        let av = self.value(a);
        let bv = self.value(b);
        if zv.shape() != av.shape() || av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "lerp",
                lhs: zv.shape(),
                rhs: bv.shape(),
            });
        }
        let data = zv
            .data()
            .iter()
            .zip(av.data())
            .zip(bv.data())
            .map(|((&z, &a), &b)| z * a + (1.0 - z) * b)
            .collect();
        let v = Matrix::from_vec(zv.rows(), zv.cols(), data)?;
        Ok(self.push(v, Op::Lerp { z, a, b }, &[z, a, b]))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: (rows, c0),
                    rhs: pv.shape(),
                });
            }
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + pv.cols()].copy_from_slice(pv.row(r));
            }
            c0 += pv.cols();
        }
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), &[a])
    }

    pub fn weighted_sq_err(&mut self, a: Var, target: Matrix, weight: Option<Matrix>) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "weighted_sq_err",
                lhs: av.shape(),
                rhs: target.shape(),
            });
        }
        let terms: Vec<f64> = match &weight {
            Some(w) => {
                if w.shape() != target.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "weighted_sq_err weight",
                        lhs: target.shape(),
                        rhs: w.shape(),
                    });
                }
                av.data()
                    .iter()
                    .zip(target.data())
                    .zip(w.data())
                    .map(|((&x, &y), &w)| w * (x - y) * (x - y))
                    .collect()
            }
            None => av
                .data()
                .iter()
                .zip(target.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .collect(),
        };
        let s = crate::numerics::pairwise_sum(&terms);
        Ok(self.push(Matrix::filled(1, 1, s), Op::WeightedSqErr { a, target, weight }, &[a]))
    }

    /// Back-propagate from the scalar `loss`, accumulating parameter
    /// gradients into `out` (indexed by the layout offsets of the leaves).
    pub fn backward(&self, loss: Var, out: &mut ParamVector) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward (loss must be scalar)",
                lhs: (1, 1),
                rhs: self.value(loss).shape(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    let dst = &mut out.values_mut()[*offset..*offset + g.data().len()];
                    axpy(1.0, g.data(), dst);
                }
                Op::Affine { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    if self.nodes[x.0].needs_grad {
                        let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                        for r in 0..g.rows() {
                            let gr = g.row(r);
                            let dst = dx.row_mut(r);
                            for (h, &gh) in gr.iter().enumerate() {
                                if gh != 0.0 {
                                    axpy(gh, wv.row(h), dst);
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.nodes[w.0].needs_grad {
                        let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                        for r in 0..g.rows() {
                            let xr = xv.row(r);
                            for (h, &gh) in g.row(r).iter().enumerate() {
                                if gh != 0.0 {
                                    axpy(gh, xr, dw.row_mut(h));
                                }
                            }
                        }
                        accumulate(&mut grads, *w, dw);
                    }
                    if let Some(b) = b {
                        if self.nodes[b.0].needs_grad {
                            let mut db = Matrix::zeros(1, g.cols());
                            for r in 0..g.rows() {
                                axpy(1.0, g.row(r), db.data_mut());
                            }
                            accumulate(&mut grads, *b, db);
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.pass(&mut grads, *a, || g.clone());
                    self.pass(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.pass(&mut grads, *a, || g.clone());
                    self.pass(&mut grads, *b, || g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.pass(&mut grads, *a, || zip(&g, bv, |g, y| g * y));
                    self.pass(&mut grads, *b, || zip(&g, av, |g, x| g * x));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.pass(&mut grads, *a, || zip(&g, bv, |g, y| g / y));
                    self.pass(&mut grads, *b, || {
                        let q = zip(av, bv, |x, y| -x / (y * y));
                        zip(&g, &q, |g, q| g * q)
                    });
                }
                Op::AddScalar(a) => self.pass(&mut grads, *a, || g.clone()),
                Op::Scale(a, c) => self.pass(&mut grads, *a, || g.scale(*c)),
                Op::Sigmoid(a) => self.pass(&mut grads, *a, || zip(&g, &node.value, |g, s| g * s * (1.0 - s))),
                Op::Tanh(a) => self.pass(&mut grads, *a, || zip(&g, &node.value, |g, t| g * (1.0 - t * t))),
                Op::Softplus(a) => {
                    let av = self.value(*a);
                    self.pass(&mut grads, *a, || zip(&g, av, |g, x| g * sigmoid(x)))
                }
                Op::Ln(a) => {
                    let av = self.value(*a);
                    self.pass(&mut grads, *a, || zip(&g, av, |g, x| g / x))
                }
                Op::LnGamma(a) => {
                    let av = self.value(*a);
                    self.pass(&mut grads, *a, || zip(&g, av, |g, x| g * digamma(x)))
                }
                Op::Lerp { z, a, b } => {
                    let (zv, av, bv) = (self.value(*z), self.value(*a), self.value(*b));
                    self.pass(&mut grads, *z, || {
                        let d = zip(av, bv, |x, y| x - y);
                        zip(&g, &d, |g, d| g * d)
                    });
                    self.pass(&mut grads, *a, || zip(&g, zv, |g, z| g * z));
                    self.pass(&mut grads, *b, || zip(&g, zv, |g, z| g * (1.0 - z)));
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        self.pass(&mut grads, p, || {
                            let mut d = Matrix::zeros(g.rows(), pc);
                            for r in 0..g.rows() {
                                d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + pc]);
                            }
                            d
                        });
                        c0 += pc;
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    let s = g.data()[0];
                    self.pass(&mut grads, *a, || Matrix::filled(r, c, s));
                }
                Op::WeightedSqErr { a, target, weight } => {
                    let s = 2.0 * g.data()[0];
                    let av = self.value(*a);
                    self.pass(&mut grads, *a, || {
                        let d = zip(av, target, |x, y| s * (x - y));
                        match weight {
                            Some(w) => zip(&d, w, |d, w| d * w),
                            None => d,
                        }
                    });
                }
            }
        }
        Ok(())
    }

    fn pass(&self, grads: &mut [Option<Matrix>], target: Var, make: impl FnOnce() -> Matrix) {
        if self.nodes[target.0].needs_grad {
            accumulate(grads, target, make());
        }
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    a.zip_with(b, "backward", f).expect("shapes fixed at record time")
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g).expect("gradient shape"),
        slot @ None => *slot = Some(g),
    }
}

/// Value and gradient of a scalar loss built on a fresh tape by `build`.
pub fn grad<F>(params: &ParamVector, build: F) -> Result<(f64, ParamVector)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.params(params);
    let loss = build(&mut tape, &vars)?;
    let value = tape.scalar(loss);
    let mut g = ParamVector::zeros(params.layout().clone());
    if !value.is_finite() {
        let name = params
            .first_non_finite()
            .map(str::to_owned)
            .or_else(|| {
                tape.backward(loss, &mut g).ok()?;
                g.first_non_finite().map(str::to_owned)
            })
            .unwrap_or_else(|| "<loss>".to_owned());
        return Err(Error::NonFinite { param: name });
    }
    tape.backward(loss, &mut g)?;
    if let Some(name) = g.first_non_finite() {
        return Err(Error::NonFinite { param: name.to_owned() });
    }
    Ok((value, g))
}

/// Central differences `(L(p + h eᵢ) - L(p - h eᵢ)) / 2h` for every coordinate.
pub fn finite_difference_grad<F>(params: &ParamVector, step: f64, mut loss: F) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Domain {
            func: "finite_difference_grad",
            detail: format!("step must be positive, got {step}"),
        });
    }
    let mut probe = params.clone();
    let mut out = ParamVector::zeros(params.layout().clone());
    for i in 0..params.len() {
        let x = params.values()[i];
        probe.values_mut()[i] = x + step;
        let up = loss(&probe)?;
        probe.values_mut()[i] = x - step;
        let down = loss(&probe)?;
        probe.values_mut()[i] = x;
        out.values_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// `Σ aᵢ bᵢ` over two parameter vectors of the same layout.
pub fn inner(a: &ParamVector, b: &ParamVector) -> f64 {
    dot(a.values(), b.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(entries: &[(&str, (usize, usize))]) -> Arc<Layout> {
        Arc::new(
            Layout::new(
                entries
                    .iter()
                    .map(|(n, s)| LayoutEntry {
                        name: (*n).to_owned(),
                        shape: *s,
                    })
                    .collect(),
            )
            .unwrap(),
        )
    }

    fn half_norm_sq(tape: &mut Tape, vars: &ParamVars) -> Result<Var> {
        let p = vars.get("p")?;
        let sq = tape.weighted_sq_err(p, Matrix::zeros(1, 2), None)?;
        Ok(tape.scale(sq, 0.5))
    }

    #[test]
    fn quadratic_gradient() {
        let p = ParamVector::new(layout(&[("p", (1, 2))]), vec![1.0, 2.0]).unwrap();
        let (v, g) = grad(&p, half_norm_sq).unwrap();
        assert_eq!(v, 2.5);
        assert_eq!(g.values(), &[1.0, 2.0]);
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        let p = ParamVector::zeros(layout(&[("p", (1, 2))]));
        let (_, g) = grad(&p, half_norm_sq).unwrap();
        assert!(g.max_abs() < 1e-10);
    }

    #[test]
    fn finite_differences_of_quadratic_and_constant() {
        let p = ParamVector::new(layout(&[("p", (1, 2))]), vec![1.0, 2.0]).unwrap();
        let fd = finite_difference_grad(&p, 1e-6, |q| Ok(0.5 * q.values().iter().map(|v| v * v).sum::<f64>())).unwrap();
        assert!((fd.values()[0] - 1.0).abs() < 1e-9);
        assert!((fd.values()[1] - 2.0).abs() < 1e-9);
        let zero = finite_difference_grad(&p, 1e-6, |_| Ok(3.0)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        assert!(finite_difference_grad(&p, 0.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let lay = layout(&[("x", (2, 3)), ("w", (4, 3)), ("b", (1, 4)), ("y", (2, 4))]);
        let mut rng = crate::numerics::RngStream::new(11, 0);
        let vals: Vec<f64> = (0..lay.len()).map(|_| rng.uniform_range(0.2, 1.2)).collect();
        let p = ParamVector::new(lay, vals).unwrap();
        let build = |tape: &mut Tape, v: &ParamVars| -> Result<Var> {
            let (x, w, b, y) = (v.get("x")?, v.get("w")?, v.get("b")?, v.get("y")?);
            let a = tape.affine(x, w, Some(b))?;
            let s = tape.sigmoid(a);
            let t = tape.tanh(y);
            let l = tape.lerp(s, t, y)?;
            let sp = tape.softplus(l);
            let q = tape.div(sp, y)?;
            let lg = tape.ln_gamma(q)?;
            let ln = tape.ln(sp);
            let m = tape.mul(lg, ln)?;
            let d = tape.sub(m, a)?;
            let e = tape.add_scalar(d, 0.3);
            let c = tape.concat(&[e, x])?;
            let sum = tape.sum(c);
            let wsq = tape.weighted_sq_err(y, Matrix::filled(2, 4, 0.5), Some(Matrix::filled(2, 4, 3.0)))?;
            let tot = tape.add(sum, wsq)?;
            Ok(tape.scale(tot, 0.7))
        };
        let (_, g) = grad(&p, build).unwrap();
        let fd = finite_difference_grad(&p, 1e-6, |q| grad(q, build).map(|r| r.0)).unwrap();
        for (a, b) in g.values().iter().zip(fd.values()) {
            assert!((a - b).abs() / (1.0 + a.abs()) < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let lay = layout(&[("good", (1, 1)), ("bad", (1, 2))]);
        let p = ParamVector::new(lay, vec![1.0, 0.0, -1.0]).unwrap();
        let err = grad(&p, |tape, v| {
            let b = v.get("bad")?;
            let l = tape.ln(b);
            Ok(tape.sum(l))
        })
        .unwrap_err();
        match err {
            Error::NonFinite { param } => assert_eq!(param, "bad"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn layout_rejects_duplicates_and_maps_names() {
        let dup = Layout::new(vec![
            LayoutEntry {
                name: "a".into(),
                shape: (1, 1),
            },
            LayoutEntry {
                name: "a".into(),
                shape: (2, 1),
            },
        ]);
        assert!(dup.is_err());
        let lay = layout(&[("a", (2, 2)), ("b", (1, 3))]);
        assert_eq!(lay.name_at(3), Some("a"));
        assert_eq!(lay.name_at(4), Some("b"));
        assert_eq!(lay.name_at(7), None);
    }

    proptest::proptest! {
        #[test]
        fn flatten_unflatten_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 11)) {
            let lay = layout(&[("a", (2, 3)), ("b", (1, 1)), ("c", (4, 1))]);
            let p = ParamVector::new(lay.clone(), vals).unwrap();
            let back = ParamVector::flatten(lay, &p.unflatten()).unwrap();
            proptest::prop_assert_eq!(back, p);
        }
    }
}
