//! Deterministic optimization: MSE fitting of the mean network and Gamma
//! negative log-likelihood fitting of the variance network, both with Adam.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, ParamVars, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::gru::{GruNetwork, VarianceNetwork};
use crate::numerics::{log_gamma, RngStream};
use crate::sequence::{SeqBatch, Sequence};

pub const DEFAULT_RESIDUAL_FLOOR: f64 = 1e-12;

const STREAM_SPLIT: u64 = 0x5711;
const STREAM_SHUFFLE: u64 = 0x5e0f;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut ParamVector, gradient: &ParamVector) -> Result<()> {
    let n = params.len();
    if gradient.len() != n || state.m.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gradient.len(),
            context: "adam gradient length",
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for (((p, &g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(gradient.values())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GammaLossForm {
    /// `-[α ln λ − ln Γ(α) + (α−1) ln r − λ r]`, the Gamma(α, λ) NLL whose
    /// mean is `α/λ`.
    #[default]
    Standard,
    /// `α ln(λ/Γ(α)) − (α−1) ln r + λ/r`, the printed variant.
    Literal,
}

fn default_floor() -> Option<f64> {
    Some(DEFAULT_RESIDUAL_FLOOR)
}

fn default_batch() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate of the last epoch; the rate decays geometrically from
    /// `lr` when set.
    #[serde(default)]
    pub lr_final: Option<f64>,
    /// Paths per minibatch; 0 means full batch.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_form: GammaLossForm,
    /// Floor applied to squared residuals; `None` rejects non-positive ones.
    #[serde(default = "default_floor")]
    pub residual_floor: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr: 1e-3,
            lr_final: None,
            batch_size: default_batch(),
            val_fraction: 0.2,
            seed: 0,
            loss_form: GammaLossForm::Standard,
            residual_floor: default_floor(),
        }
    }
}

impl TrainConfig {
    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(last) if self.epochs > 1 => {
                let t = (epoch.saturating_sub(1)) as f64 / (self.epochs - 1) as f64;
                self.lr * (last / self.lr).powf(t)
            }
            _ => self.lr,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{prefix}.lr"), "must be positive"));
        }
        if let Some(lr) = self.lr_final {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{prefix}.lr_final"), "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!("{prefix}.val_fraction"), "must lie in [0, 1)"));
        }
        if let Some(f) = self.residual_floor {
            if !(f > 0.0) {
                return Err(Error::config(format!("{prefix}.residual_floor"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) of the returned snapshot; 0 means the initialization.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.records {
            let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{}", r.epoch, r.train_loss, val);
        }
        s
    }

    /// Best-so-far selection criterion after each epoch.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.val_loss.unwrap_or(r.train_loss));
                best
            })
            .collect()
    }
}

fn check_pairs(inputs: &[Sequence], targets: &[Sequence]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: targets.len(),
            context: "input/target path counts",
        });
    }
    Ok(())
}

/// Record `(1/(N·T)) Σₙ Σₜ ‖yₙₜ − f(xₙₜ)‖²` on the tape.
pub fn mse_tape(
    net_dims: crate::gru::GruDims,
    tape: &mut Tape,
    vars: &ParamVars,
    x: &SeqBatch,
    y: &SeqBatch,
) -> Result<Var> {
    let (outs, _) = GruNetwork::forward_tape(net_dims, tape, vars, x)?;
    let mut total: Option<Var> = None;
    for (o, target) in outs.into_iter().zip(y.steps()) {
        let e = tape.weighted_sq_err(o, target.clone(), None)?;
        total = Some(match total {
            Some(t) => tape.add(t, e)?,
            None => e,
        });
    }
    let total = total.ok_or(Error::Empty("sequence steps"))?;
    let denom = (x.batch_size() * x.len()) as f64;
    Ok(tape.scale(total, 1.0 / denom))
}

pub fn mse_loss(net: &GruNetwork, inputs: &[Sequence], targets: &[Sequence]) -> Result<f64> {
    check_pairs(inputs, targets)?;
    let out = net.forward_batch(&SeqBatch::from_sequences(inputs)?)?;
    let preds = out.outputs.to_sequences();
    let n_steps: usize = targets.iter().map(Sequence::len).sum();
    let terms: Vec<f64> = preds
        .iter()
        .zip(targets)
        .flat_map(|(p, y)| {
            p.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| (a - b) * (a - b))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(crate::numerics::pairwise_sum(&terms) / n_steps as f64)
}

/// Per-element Gamma loss.
pub fn gamma_nll(alpha: f64, lambda: f64, r: f64, form: GammaLossForm) -> Result<f64> {
    let lg = log_gamma(alpha)?;
    Ok(match form {
        GammaLossForm::Standard => -(alpha * lambda.ln() - lg + (alpha - 1.0) * r.ln() - lambda * r),
        GammaLossForm::Literal => alpha * (lambda.ln() - lg) - (alpha - 1.0) * r.ln() + lambda / r,
    })
}

/// Squared residuals with the configured floor applied.
pub fn squared_residuals(preds: &[Sequence], targets: &[Sequence], floor: Option<f64>) -> Result<Vec<Sequence>> {
    check_pairs(preds, targets)?;
    preds
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let r = p.zip_with(y, |a, b| (a - b) * (a - b))?;
            floor_residuals(&r, floor)
        })
        .collect()
}

fn floor_residuals(r: &Sequence, floor: Option<f64>) -> Result<Sequence> {
    match floor {
        Some(f) => Ok(r.map(|v| v.max(f))),
        None => {
            if let Some(&bad) = r.data().iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::Domain {
                    func: "gamma_nll_loss",
                    detail: format!("non-positive squared residual {bad} with flooring disabled"),
                });
            }
            Ok(r.clone())
        }
    }
}

pub fn gamma_tape(
    vnet: &VarianceNetwork,
    tape: &mut Tape,
    vars: &ParamVars,
    x: &SeqBatch,
    r: &SeqBatch,
    form: GammaLossForm,
) -> Result<Var> {
    let params = vnet.forward_tape(tape, vars, x)?;
    let mut total: Option<Var> = None;
    for ((alpha, lambda), rt) in params.into_iter().zip(r.steps()) {
        let ln_lambda = tape.ln(lambda);
        let lg = tape.ln_gamma(alpha)?;
        let am1 = tape.add_scalar(alpha, -1.0);
        let ln_r = tape.constant(rt.map(f64::ln));
        let log_term = tape.mul(am1, ln_r)?;
        let term = match form {
            GammaLossForm::Standard => {
                let a_ln_l = tape.mul(alpha, ln_lambda)?;
                let r_c = tape.constant(rt.clone());
                let lam_r = tape.mul(lambda, r_c)?;
                let t = tape.sub(lg, a_ln_l)?;
                let t = tape.sub(t, log_term)?;
                tape.add(t, lam_r)?
            }
            GammaLossForm::Literal => {
                let diff = tape.sub(ln_lambda, lg)?;
                let first = tape.mul(alpha, diff)?;
                let inv_r = tape.constant(rt.map(|v| 1.0 / v));
                let lam_over_r = tape.mul(lambda, inv_r)?;
                let t = tape.sub(first, log_term)?;
                tape.add(t, lam_over_r)?
            }
        };
        let s = tape.sum(term);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    total.ok_or(Error::Empty("sequence steps"))
}

/// `Σₙ Σₜ Σⱼ` of the Gamma loss of the variance network's `(α, λ)` against
/// squared residuals.
pub fn gamma_nll_loss(
    vnet: &VarianceNetwork,
    residuals_sq: &[Sequence],
    inputs: &[Sequence],
    form: GammaLossForm,
    floor: Option<f64>,
) -> Result<f64> {
    check_pairs(inputs, residuals_sq)?;
    let r: Vec<Sequence> = residuals_sq
        .iter()
        .map(|s| floor_residuals(s, floor))
        .collect::<Result<_>>()?;
    let (alpha, lambda, _) = vnet.forward_batch(&SeqBatch::from_sequences(inputs)?)?;
    let alpha = alpha.to_sequences();
    let lambda = lambda.to_sequences();
    let mut terms = Vec::new();
    for ((a, l), r) in alpha.iter().zip(&lambda).zip(&r) {
        for ((&a, &l), &r) in a.data().iter().zip(l.data()).zip(r.data()) {
            terms.push(gamma_nll(a, l, r, form)?);
        }
    }
    Ok(crate::numerics::pairwise_sum(&terms))
}

fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    if n_val == 0 {
        return (idx, Vec::new());
    }
    RngStream::new(seed, STREAM_SPLIT).shuffle(&mut idx);
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

fn minibatches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let size = if size == 0 { order.len() } else { size };
    order.chunks(size.max(1)).collect()
}

/// Shared Adam loop. `batch_loss` records a scalar loss for the selected
/// rows; `monitor` returns the selection criterion after each epoch, or
/// `None` to select by the epoch-average training loss.
fn optimize<B, M>(
    init: &ParamVector,
    train_idx: &[usize],
    cfg: &TrainConfig,
    mut batch_loss: B,
    mut monitor: M,
    select_best: bool,
) -> Result<(ParamVector, TrainingLog)>
where
    B: FnMut(&mut Tape, &ParamVars, &[usize]) -> Result<Var>,
    M: FnMut(&ParamVector) -> Result<Option<f64>>,
{
    let mut params = init.clone();
    let mut log = TrainingLog::default();
    if cfg.epochs == 0 {
        return Ok((params, log));
    }
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut shuffle = RngStream::new(cfg.seed, STREAM_SHUFFLE);
    let mut order = train_idx.to_vec();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    for epoch in 1..=cfg.epochs {
        adam.lr = cfg.lr_at(epoch);
        shuffle.shuffle(&mut order);
        let mut losses = Vec::new();
        for batch in minibatches(&order, cfg.batch_size) {
            let (loss, g) = grad(&params, |tape, vars| batch_loss(tape, vars, batch)).map_err(|e| match e {
                Error::NonFinite { param } => Error::Divergence {
                    epoch,
                    detail: format!("non-finite loss or gradient in `{param}`"),
                },
                other => other,
            })?;
            losses.push(loss);
            adam_step(&mut adam, &mut params, &g)?;
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("parameter `{name}` became non-finite"),
            });
        }
        let val_loss = monitor(&params)?;
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "validation loss is non-finite".into(),
                });
            }
        }
        let criterion = val_loss.unwrap_or(train_loss);
        if select_best && criterion < best.0 {
            best = (criterion, params.clone(), epoch);
        }
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
    }
    if select_best {
        log.best_epoch = best.2;
        Ok((best.1, log))
    } else {
        log.best_epoch = cfg.epochs;
        Ok((params, log))
    }
}

/// Fit the mean network by minimizing MSE; returns the snapshot with the
/// lowest validation loss (training loss when there is no validation split).
pub fn train_mean(
    net: &GruNetwork,
    inputs: &[Sequence],
    targets: &[Sequence],
    cfg: &TrainConfig,
) -> Result<(GruNetwork, TrainingLog)> {
    cfg.validate("train")?;
    check_pairs(inputs, targets)?;
    let (train_idx, val_idx) = split_indices(inputs.len(), cfg.val_fraction, cfg.seed);
    let dims = net.dims();
    let val_x: Vec<Sequence> = val_idx.iter().map(|&i| inputs[i].clone()).collect();
    let val_y: Vec<Sequence> = val_idx.iter().map(|&i| targets[i].clone()).collect();
    let (params, log) = optimize(
        net.params(),
        &train_idx,
        cfg,
        |tape, vars, rows| {
            let x = SeqBatch::from_sequences(rows.iter().map(|&i| &inputs[i]))?;
            let y = SeqBatch::from_sequences(rows.iter().map(|&i| &targets[i]))?;
            mse_tape(dims, tape, vars, &x, &y)
        },
        |p| {
            if val_x.is_empty() {
                return Ok(None);
            }
            mse_loss(&GruNetwork::new(dims, p.clone())?, &val_x, &val_y).map(Some)
        },
        true,
    )?;
    Ok((net.with_params(params)?, log))
}

/// Fit the variance network to squared residuals of frozen mean predictions.
///
/// The per-component residual scale is set to the mean floored squared
/// residual before fitting, so the network learns an O(1) relative variance.
/// With a validation split the snapshot with the lowest held-out Gamma loss is
/// kept; otherwise the final iterate is returned.
pub fn train_variance(
    vnet: &VarianceNetwork,
    mean_preds: &[Sequence],
    inputs: &[Sequence],
    targets: &[Sequence],
    cfg: &TrainConfig,
) -> Result<(VarianceNetwork, TrainingLog)> {
    cfg.validate("train_variance")?;
    check_pairs(inputs, targets)?;
    let residuals = squared_residuals(mean_preds, targets, cfg.residual_floor)?;
    let j = vnet.output_dim();
    let mut scale = vec![0.0; j];
    let mut count = 0usize;
    for r in &residuals {
        if r.dim() != j {
            return Err(Error::DimensionMismatch {
                expected: j,
                actual: r.dim(),
                context: "residual width vs variance network outputs",
            });
        }
        for step in r.steps() {
            for (s, v) in scale.iter_mut().zip(step) {
                *s += v;
            }
            count += 1;
        }
    }
    let mut vnet = vnet.clone();
    vnet.residual_scale = scale.iter().map(|s| s / count.max(1) as f64).collect();
    let (train_idx, val_idx) = split_indices(inputs.len(), cfg.val_fraction, cfg.seed);
    let val_x: Vec<Sequence> = val_idx.iter().map(|&i| inputs[i].clone()).collect();
    let val_r: Vec<Sequence> = val_idx.iter().map(|&i| residuals[i].clone()).collect();
    let val_count: usize = val_r.iter().map(|r| r.data().len()).sum();
    let dims = vnet.net.dims();
    let form = cfg.loss_form;
    let template = vnet.clone();
    let (params, log) = optimize(
        vnet.net.params(),
        &train_idx,
        cfg,
        |tape, vars, rows| {
            let x = SeqBatch::from_sequences(rows.iter().map(|&i| &inputs[i]))?;
            let r = SeqBatch::from_sequences(rows.iter().map(|&i| &residuals[i]))?;
            gamma_tape(&template, tape, vars, &x, &r, form)
        },
        |p| {
            if val_x.is_empty() {
                return Ok(None);
            }
            let mut probe = template.clone();
            probe.net = GruNetwork::new(dims, p.clone())?;
            let total = gamma_nll_loss(&probe, &val_r, &val_x, form, None)?;
            Ok(Some(total / val_count as f64))
        },
        !val_idx.is_empty(),
    )?;
    vnet.net = GruNetwork::new(dims, params)?;
    Ok((vnet, log))
}

/// Column-stack helper shared with the samplers.
#[allow(dead_code)]
pub(crate) fn batch_of(seqs: &[Sequence], rows: &[usize]) -> Result<SeqBatch> {
    SeqBatch::from_sequences(rows.iter().map(|&i| &seqs[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_grad;
    use crate::gru::{GruDims, InitScheme};
    use approx::assert_relative_eq;

    fn seq(vals: &[f64]) -> Sequence {
        Sequence::from_flat(1, vals.to_vec()).unwrap()
    }

    #[test]
    fn learning_rate_decays_geometrically() {
        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e-2,
            lr_final: Some(1e-4),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(1), 1e-2);
        assert_relative_eq!(cfg.lr_at(2), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(cfg.lr_at(3), 1e-4, max_relative = 1e-12);
        let flat = TrainConfig { lr_final: None, ..cfg };
        assert_eq!(flat.lr_at(3), 1e-2);
    }

    fn toy_data(n: usize, t: usize, seed: u64) -> (Vec<Sequence>, Vec<Sequence>) {
        let mut rng = RngStream::new(seed, 1);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..t).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let mut acc = 0.0;
            let y: Vec<f64> = x
                .iter()
                .map(|v| {
                    acc = 0.7 * acc + 0.5 * v;
                    acc
                })
                .collect();
            xs.push(seq(&x));
            ys.push(seq(&y));
        }
        (xs, ys)
    }

    #[test]
    fn gamma_nll_examples() {
        let s = GammaLossForm::Standard;
        assert_relative_eq!(gamma_nll(1.0, 1.0, 1.0, s).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(gamma_nll(2.0, 1.0, 1.0, s).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(gamma_nll(1.0, 2.0, 0.5, s).unwrap(), 1.0 - 2f64.ln(), epsilon = 1e-12);
        // Literal form at r = 1 differs from the standard form only by sign of ln Γ.
        let lit = gamma_nll(2.0, 3.0, 1.0, GammaLossForm::Literal).unwrap();
        assert_relative_eq!(lit, 2.0 * 3f64.ln() + 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_rate_stationary_at_alpha_over_r() {
        let (alpha, r) = (2.5, 0.3);
        let h = 1e-5;
        let l0 = alpha / r;
        let f = |l: f64| gamma_nll(alpha, l, r, GammaLossForm::Standard).unwrap();
        let d = (f(l0 + h) - f(l0 - h)) / (2.0 * h);
        assert!(d.abs() < 1e-6, "{d}");
        assert!(f(l0) < f(l0 * 1.1) && f(l0) < f(l0 * 0.9));
    }

    #[test]
    fn mse_hand_case_and_offset() {
        let dims = GruDims::new(1, 3, 1, 1);
        let net = GruNetwork::new(dims, ParamVector::zeros(dims.layout().unwrap())).unwrap();
        // Zero network predicts 0 everywhere.
        let x = vec![seq(&[0.1, 0.2]), seq(&[0.3, 0.4])];
        let y = vec![seq(&[1.0, 2.0]), seq(&[1.0, 2.0])];
        assert_relative_eq!(mse_loss(&net, &x, &y).unwrap(), 2.5, epsilon = 1e-14);
        let x3 = vec![Sequence::zeros(4, 1)];
        let dims3 = GruDims::new(1, 2, 1, 3);
        let net3 = GruNetwork::new(dims3, ParamVector::zeros(dims3.layout().unwrap())).unwrap();
        let delta = 0.7;
        let y3 = vec![Sequence::from_flat(3, vec![delta; 12]).unwrap()];
        assert_relative_eq!(mse_loss(&net3, &x3, &y3).unwrap(), 3.0 * delta * delta, epsilon = 1e-14);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let dims = GruDims::new(1, 2, 1, 1);
        let layout = dims.layout().unwrap();
        let mut p = ParamVector::zeros(layout.clone());
        let mut g = ParamVector::zeros(layout);
        for (i, v) in g.values_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 3.0 } else { -0.01 };
        }
        let mut st = AdamState::new(p.len(), 1e-3);
        adam_step(&mut st, &mut p, &g).unwrap();
        for (i, v) in p.values().iter().enumerate() {
            let want = if i % 2 == 0 { -1e-3 } else { 1e-3 };
            assert_relative_eq!(*v, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let dims = GruDims::new(1, 3, 2, 1);
        let mut rng = RngStream::new(4, 0);
        let net = GruNetwork::init(dims, InitScheme::UniformFanIn, &mut rng).unwrap();
        let (xs, ys) = toy_data(3, 5, 2);
        let xb = SeqBatch::from_sequences(&xs).unwrap();
        let yb = SeqBatch::from_sequences(&ys).unwrap();
        let (_, g) = grad(net.params(), |tape, vars| mse_tape(dims, tape, vars, &xb, &yb)).unwrap();
        let fd = finite_difference_grad(net.params(), 1e-6, |p| {
            mse_loss(&GruNetwork::new(dims, p.clone())?, &xs, &ys)
        })
        .unwrap();
        for (a, b) in g.values().iter().zip(fd.values()) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn gamma_gradient_matches_finite_differences() {
        for form in [GammaLossForm::Standard, GammaLossForm::Literal] {
            let mut rng = RngStream::new(9, 0);
            let mut vnet = VarianceNetwork::init(1, 3, 1, 1, InitScheme::UniformFanIn, &mut rng).unwrap();
            vnet.residual_scale = vec![0.05];
            let (xs, ys) = toy_data(3, 4, 5);
            let r: Vec<Sequence> = ys.iter().map(|y| y.map(|v| v * v + 0.01)).collect();
            let xb = SeqBatch::from_sequences(&xs).unwrap();
            let rb = SeqBatch::from_sequences(&r).unwrap();
            let (loss, g) = grad(vnet.net.params(), |tape, vars| {
                gamma_tape(&vnet, tape, vars, &xb, &rb, form)
            })
            .unwrap();
            assert_relative_eq!(
                loss,
                gamma_nll_loss(&vnet, &r, &xs, form, None).unwrap(),
                max_relative = 1e-12
            );
            let fd = finite_difference_grad(vnet.net.params(), 1e-6, |p| {
                let mut v = vnet.clone();
                v.net = GruNetwork::new(v.net.dims(), p.clone())?;
                gamma_nll_loss(&v, &r, &xs, form, None)
            })
            .unwrap();
            for (a, b) in g.values().iter().zip(fd.values()) {
                assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{form:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_residual_floor_and_rejection() {
        let mut rng = RngStream::new(1, 0);
        let vnet = VarianceNetwork::init(1, 2, 1, 1, InitScheme::UniformFanIn, &mut rng).unwrap();
        let x = vec![seq(&[0.0, 1.0])];
        let r = vec![seq(&[0.0, 0.5])];
        let v = gamma_nll_loss(&vnet, &r, &x, GammaLossForm::Standard, Some(DEFAULT_RESIDUAL_FLOOR)).unwrap();
        assert!(v.is_finite());
        assert!(gamma_nll_loss(&vnet, &r, &x, GammaLossForm::Standard, None).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let dims = GruDims::new(1, 4, 1, 1);
        let mut rng = RngStream::new(3, 0);
        let net = GruNetwork::init(dims, InitScheme::UniformFanIn, &mut rng).unwrap();
        let (xs, ys) = toy_data(5, 6, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (out, log) = train_mean(&net, &xs, &ys, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(log.records.is_empty());
    }

    #[test]
    fn train_mean_reduces_loss_and_snapshot_is_best() {
        let dims = GruDims::new(1, 8, 1, 1);
        let mut rng = RngStream::new(11, 0);
        let net = GruNetwork::init(dims, InitScheme::UniformFanIn, &mut rng).unwrap();
        let (xs, ys) = toy_data(40, 12, 7);
        let cfg = TrainConfig {
            epochs: 60,
            lr: 1e-2,
            batch_size: 8,
            val_fraction: 0.2,
            seed: 3,
            ..TrainConfig::default()
        };
        let before = mse_loss(&net, &xs, &ys).unwrap();
        let (out, log) = train_mean(&net, &xs, &ys, &cfg).unwrap();
        let after = mse_loss(&out, &xs, &ys).unwrap();
        assert!(after < 0.2 * before, "{before} -> {after}");
        let best = log.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        let chosen = log.records[log.best_epoch - 1].val_loss.unwrap();
        assert_eq!(chosen, *best.last().unwrap());
        assert!(log.to_csv().starts_with("epoch,train_loss,val_loss\n"));
        // Same seed replays exactly.
        let (again, _) = train_mean(&net, &xs, &ys, &cfg).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn divergence_is_reported() {
        let dims = GruDims::new(1, 4, 1, 1);
        let mut rng = RngStream::new(3, 0);
        let net = GruNetwork::init(dims, InitScheme::UniformFanIn, &mut rng).unwrap();
        let (xs, mut ys) = toy_data(4, 3, 1);
        ys[0].data_mut()[0] = f64::INFINITY;
        let cfg = TrainConfig {
            epochs: 3,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_mean(&net, &xs, &ys, &cfg),
            Err(Error::Divergence { epoch: 1, .. })
        ));
    }

    #[test]
    fn variance_training_tracks_heteroscedastic_noise() {
        // Residual variance grows with |x|; the fitted s² should follow.
        let mut rng = RngStream::new(21, 0);
        let n = 60;
        let t = 10;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut preds = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..t).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| 0.1 * v.abs() * rng.normal()).collect();
            xs.push(seq(&x));
            ys.push(seq(&y));
            preds.push(Sequence::zeros(t, 1));
        }
        let vnet = VarianceNetwork::init(1, 8, 1, 1, InitScheme::UniformFanIn, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 150,
            lr: 1e-2,
            batch_size: 0,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let (fit, log) = train_variance(&vnet, &preds, &xs, &ys, &cfg).unwrap();
        assert!(log.records.last().unwrap().train_loss < log.records[0].train_loss);
        let lo = fit.forward(&seq(&[0.05; 5])).unwrap().s2.data()[4];
        let hi = fit.forward(&seq(&[0.95; 5])).unwrap().s2.data()[4];
        assert!(hi > 5.0 * lo, "lo {lo} hi {hi}");
        assert!((hi / (0.01 * 0.9025) - 1.0).abs() < 0.6, "hi {hi}");
    }
}
