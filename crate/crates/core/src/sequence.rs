//! Fixed-length multivariate sequences, time-major batches and per-component
//! standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `T` steps of `dim` real components, stored step-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    dim: usize,
    data: Vec<f64>,
}

/// Strain input path: `T × 3` (ε₁₁, ε₁₂, ε₂₂).
pub type StrainPath = Sequence;
/// Stress output path: `T × 3` (σ₁₁, σ₁₂, σ₂₂).
pub type StressPath = Sequence;

impl Sequence {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Sequence {
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len(),
                context: "sequence data length not a multiple of dim",
            });
        }
        Ok(Sequence { dim, data })
    }

    pub fn from_steps(steps: &[Vec<f64>]) -> Result<Self> {
        let dim = steps.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(steps.len() * dim);
        for s in steps {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: s.len(),
                    context: "sequence step width",
                });
            }
            data.extend_from_slice(s);
        }
        Ok(Sequence { dim, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    #[inline]
    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_steps(&self) -> Vec<Vec<f64>> {
        self.steps().map(<[f64]>::to_vec).collect()
    }

    /// First `len` steps.
    pub fn truncate(&self, len: usize) -> Sequence {
        Sequence {
            dim: self.dim,
            data: self.data[..len * self.dim].to_vec(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Sequence {
        Sequence {
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Sequence, mut f: impl FnMut(f64, f64) -> f64) -> Result<Sequence> {
        if self.dim != other.dim || self.data.len() != other.data.len() {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                actual: other.data.len(),
                context: "sequence shapes differ",
            });
        }
        Ok(Sequence {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Column-wise concatenation `[self, other]` per step.
    pub fn concat(&self, other: &Sequence) -> Result<Sequence> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
                context: "concatenated sequences must share length",
            });
        }
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(self.len() * dim);
        for (a, b) in self.steps().zip(other.steps()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Sequence { dim, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Time-major batch: one `batch × dim` matrix per step.
#[derive(Clone, Debug)]
pub struct SeqBatch {
    steps: Vec<Matrix>,
}

impl SeqBatch {
    pub fn from_sequences<'a, I>(seqs: I) -> Result<SeqBatch>
    where
        I: IntoIterator<Item = &'a Sequence>,
    {
        let seqs: Vec<&Sequence> = seqs.into_iter().collect();
        let first = seqs.first().ok_or(Error::Empty("sequence batch"))?;
        let (len, dim) = (first.len(), first.dim());
        for s in &seqs {
            if s.len() != len || s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: len * dim,
                    actual: s.len() * s.dim(),
                    context: "batched sequences must share shape",
                });
            }
        }
        let steps = (0..len)
            .map(|t| {
                let mut m = Matrix::zeros(seqs.len(), dim);
                for (b, s) in seqs.iter().enumerate() {
                    m.row_mut(b).copy_from_slice(s.step(t));
                }
                m
            })
            .collect();
        Ok(SeqBatch { steps })
    }

    pub fn from_steps(steps: Vec<Matrix>) -> Self {
        SeqBatch { steps }
    }

    pub fn steps(&self) -> &[Matrix] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.steps.first().map_or(0, Matrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map_or(0, Matrix::cols)
    }

    /// Split back into one sequence per batch row.
    pub fn to_sequences(&self) -> Vec<Sequence> {
        let (b, d) = (self.batch_size(), self.dim());
        (0..b)
            .map(|i| {
                let mut data = Vec::with_capacity(self.len() * d);
                for m in &self.steps {
                    data.extend_from_slice(m.row(i));
                }
                Sequence { dim: d, data }
            })
            .collect()
    }
}

/// Per-component affine standardization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over every step of every sequence. Components with zero
    /// spread keep unit scale.
    pub fn fit<'a, I>(seqs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sequence>,
    {
        let seqs: Vec<&Sequence> = seqs.into_iter().collect();
        let dim = seqs.first().ok_or(Error::Empty("normalizer data"))?.dim();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); dim];
        for s in &seqs {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: s.dim(),
                    context: "normalizer input width",
                });
            }
            for step in s.steps() {
                for (c, &v) in columns.iter_mut().zip(step) {
                    c.push(v);
                }
            }
        }
        let mut mean = Vec::with_capacity(dim);
        let mut std = Vec::with_capacity(dim);
        for c in &columns {
            let n = c.len().max(1) as f64;
            let m = crate::numerics::pairwise_sum(c) / n;
            let dev: Vec<f64> = c.iter().map(|v| (v - m) * (v - m)).collect();
            let s = (crate::numerics::pairwise_sum(&dev) / n).sqrt();
            mean.push(m);
            std.push(if s > 1e-12 { s } else { 1.0 });
        }
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, s: &Sequence) -> Sequence {
        let mut out = s.clone();
        for step in out.data_mut().chunks_exact_mut(self.dim()) {
            for ((v, m), sd) in step.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / sd;
            }
        }
        out
    }

    pub fn invert(&self, s: &Sequence) -> Sequence {
        let mut out = s.clone();
        for step in out.data_mut().chunks_exact_mut(self.dim()) {
            for ((v, m), sd) in step.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * sd + m;
            }
        }
        out
    }

    /// Map a variance in normalized units back to data units.
    pub fn invert_variance(&self, s: &Sequence) -> Sequence {
        let mut out = s.clone();
        for step in out.data_mut().chunks_exact_mut(self.dim()) {
            for (v, sd) in step.iter_mut().zip(&self.std) {
                *v *= sd * sd;
            }
        }
        out
    }

    pub fn scale_variance(&self, s: &Sequence) -> Sequence {
        let mut out = s.clone();
        for step in out.data_mut().chunks_exact_mut(self.dim()) {
            for (v, sd) in step.iter_mut().zip(&self.std) {
                *v /= sd * sd;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_round_trip() {
        let a = Sequence::from_steps(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = a.map(|v| -v);
        let batch = SeqBatch::from_sequences([&a, &b]).unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(batch.batch_size(), 2);
        assert_eq!(batch.steps()[1].row(1), &[-3.0, -4.0]);
        assert_eq!(batch.to_sequences(), vec![a, b]);
    }

    #[test]
    fn mismatched_batch_rejected() {
        let a = Sequence::zeros(3, 2);
        let b = Sequence::zeros(4, 2);
        assert!(SeqBatch::from_sequences([&a, &b]).is_err());
        assert!(SeqBatch::from_sequences(std::iter::empty()).is_err());
    }

    #[test]
    fn normalizer_standardizes_and_inverts() {
        let a = Sequence::from_steps(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let n = Normalizer::fit([&a]).unwrap();
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        let z = n.apply(&a);
        assert_eq!(z.data(), &[-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(n.invert(&z), a);
    }

    #[test]
    fn concat_widths() {
        let a = Sequence::zeros(4, 3);
        let b = Sequence::from_flat(2, vec![1.0; 8]).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!((c.len(), c.dim()), (4, 5));
        assert_eq!(c.step(2), &[0.0, 0.0, 0.0, 1.0, 1.0]);
        assert!(a.concat(&Sequence::zeros(3, 1)).is_err());
    }
}
