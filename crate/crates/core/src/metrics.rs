//! Evaluation metrics against clean ground-truth means and known noise.
//!
//! All metrics aggregate per output component: log-densities are summed over
//! components, coverage counts each component separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_logpdf, normal_critical, pairwise_sum};
use crate::sequence::Sequence;

pub const VARIANCE_FLOOR: f64 = 1e-12;

fn check_shapes(a: &[Sequence], b: &[Sequence], context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
            context,
        });
    }
    for (x, y) in a.iter().zip(b) {
        if x.dim() != y.dim() || x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.data().len(),
                actual: y.data().len(),
                context,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeError {
    pub percent: f64,
    /// Steps skipped because the truth norm was zero.
    pub skipped: usize,
}

/// Mean over steps of `‖ȳ − ŷ‖ / ‖ȳ‖`, in percent.
pub fn relative_error(pred: &[Sequence], truth: &[Sequence]) -> Result<RelativeError> {
    check_shapes(pred, truth, "relative_error shapes")?;
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for (p, y) in pred.iter().zip(truth) {
        for (ps, ys) in p.steps().zip(y.steps()) {
            let norm = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                skipped += 1;
                continue;
            }
            let diff = ps.iter().zip(ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            ratios.push(diff / norm);
        }
    }
    if ratios.is_empty() {
        return Err(Error::Domain {
            func: "relative_error",
            detail: "every step has a zero-norm ground truth".into(),
        });
    }
    Ok(RelativeError {
        percent: 100.0 * pairwise_sum(&ratios) / ratios.len() as f64,
        skipped,
    })
}

/// Mean over paths and steps of the component-summed Gaussian log-density of
/// the truth under the predicted epistemic distribution.
pub fn tll(pred_mean: &[Sequence], epistemic_var: &[Sequence], truth: &[Sequence]) -> Result<f64> {
    check_shapes(pred_mean, truth, "tll mean shapes")?;
    check_shapes(pred_mean, epistemic_var, "tll variance shapes")?;
    let mut terms = Vec::new();
    let mut steps = 0usize;
    for ((m, v), y) in pred_mean.iter().zip(epistemic_var).zip(truth) {
        steps += m.len();
        for ((&mu, &var), &obs) in m.data().iter().zip(v.data()).zip(y.data()) {
            terms.push(gaussian_logpdf(obs, mu, var.max(VARIANCE_FLOOR))?);
        }
    }
    if steps == 0 {
        return Err(Error::Empty("tll inputs"));
    }
    Ok(pairwise_sum(&terms) / steps as f64)
}

/// Closed-form 2-Wasserstein distance between 1-D Gaussians.
pub fn wasserstein_gaussian(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt()
}

/// Mean over paths, steps and components of the Gaussian W₂ distance.
pub fn wasserstein(
    pred_mean: &[Sequence],
    pred_std: &[Sequence],
    true_mean: &[Sequence],
    true_std: &[Sequence],
) -> Result<f64> {
    check_shapes(pred_mean, true_mean, "wasserstein mean shapes")?;
    check_shapes(pred_mean, pred_std, "wasserstein std shapes")?;
    check_shapes(pred_mean, true_std, "wasserstein true std shapes")?;
    let mut terms = Vec::new();
    for (((pm, ps), tm), ts) in pred_mean.iter().zip(pred_std).zip(true_mean).zip(true_std) {
        for (((&a, &b), &c), &d) in pm.data().iter().zip(ps.data()).zip(tm.data()).zip(ts.data()) {
            terms.push(wasserstein_gaussian(a, b, c, d));
        }
    }
    if terms.is_empty() {
        return Err(Error::Empty("wasserstein inputs"));
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Fraction of (path, step, component) triples with `truth ∈ [lower, upper]`.
pub fn picp(lower: &[Sequence], upper: &[Sequence], truth: &[Sequence]) -> Result<f64> {
    check_shapes(lower, upper, "picp bounds")?;
    check_shapes(lower, truth, "picp truth")?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((l, u), y) in lower.iter().zip(upper).zip(truth) {
        for ((&lo, &hi), &v) in l.data().iter().zip(u.data()).zip(y.data()) {
            if lo > hi {
                return Err(Error::Domain {
                    func: "picp",
                    detail: format!("lower bound {lo} exceeds upper bound {hi}"),
                });
            }
            total += 1;
            if lo <= v && v <= hi {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("picp inputs"));
    }
    Ok(hits as f64 / total as f64)
}

pub fn mpiw(lower: &[Sequence], upper: &[Sequence]) -> Result<f64> {
    check_shapes(lower, upper, "mpiw bounds")?;
    let widths: Vec<f64> = lower
        .iter()
        .zip(upper)
        .flat_map(|(l, u)| u.data().iter().zip(l.data()).map(|(a, b)| a - b).collect::<Vec<_>>())
        .collect();
    if widths.is_empty() {
        return Err(Error::Empty("mpiw inputs"));
    }
    if let Some(w) = widths.iter().find(|w| **w < 0.0) {
        return Err(Error::Domain {
            func: "mpiw",
            detail: format!("negative interval width {w}"),
        });
    }
    Ok(pairwise_sum(&widths) / widths.len() as f64)
}

/// Symmetric `mean ± z·√var` interval with `z` the two-sided critical value.
pub fn gaussian_interval(mean: &Sequence, var: &Sequence, alpha: f64) -> Result<(Sequence, Sequence)> {
    let z = normal_critical(alpha)?;
    let half = var.map(|v| z * v.max(0.0).sqrt());
    Ok((mean.zip_with(&half, |m, h| m - h)?, mean.zip_with(&half, |m, h| m + h)?))
}

/// All five metrics on one test set. Uncertainty metrics are absent for
/// deterministic predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eps_r: f64,
    pub tll: Option<f64>,
    pub wa: Option<f64>,
    pub picp: Option<f64>,
    pub mpiw: Option<f64>,
    pub alpha: f64,
}

/// Predictions to be scored: means plus optional epistemic variance and
/// aleatoric std.
pub struct Scored<'a> {
    pub mean: &'a [Sequence],
    pub epistemic_var: Option<&'a [Sequence]>,
    pub aleatoric_std: Option<&'a [Sequence]>,
}

pub fn evaluate(pred: &Scored<'_>, true_mean: &[Sequence], true_std: &[Sequence], alpha: f64) -> Result<MetricReport> {
    let eps_r = relative_error(pred.mean, true_mean)?.percent;
    let (tll_v, picp_v, mpiw_v) = match pred.epistemic_var {
        Some(var) => {
            let mut lower = Vec::with_capacity(var.len());
            let mut upper = Vec::with_capacity(var.len());
            for (m, v) in pred.mean.iter().zip(var) {
                let (l, u) = gaussian_interval(m, v, alpha)?;
                lower.push(l);
                upper.push(u);
            }
            (
                Some(tll(pred.mean, var, true_mean)?),
                Some(picp(&lower, &upper, true_mean)?),
                Some(mpiw(&lower, &upper)?),
            )
        }
        None => (None, None, None),
    };
    let wa = pred
        .aleatoric_std
        .map(|s| wasserstein(pred.mean, s, true_mean, true_std))
        .transpose()?;
    Ok(MetricReport {
        eps_r,
        tll: tll_v,
        wa,
        picp: picp_v,
        mpiw: mpiw_v,
        alpha,
    })
}
