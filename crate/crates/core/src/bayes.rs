//! Bayesian inference over the mean network: Gaussian prior and likelihood
//! with frozen heteroscedastic variance, pSGLD sampling, exact HMC/LMC
//! reference samplers, posterior-predictive decomposition and cooperative
//! training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, ParamVector};
use crate::error::{Error, Result};
use crate::gru::{GruDims, GruNetwork, VarianceNetwork};
use crate::metrics::VARIANCE_FLOOR;
use crate::numerics::{gaussian_logpdf, normal_critical, pairwise_sum, RngStream};
use crate::sequence::{SeqBatch, Sequence};
use crate::training::{train_mean, train_variance, TrainConfig, TrainingLog};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const DIVERGENCE_BOUND: f64 = 1e6;

const STREAM_PSGLD: u64 = 0xb5_0000;

/// `Σₖ log N(θₖ; 0, σ²)`.
pub fn log_prior(params: &ParamVector, prior_std: f64) -> f64 {
    let var = prior_std * prior_std;
    let terms: Vec<f64> = params
        .values()
        .iter()
        .map(|t| -0.5 * (LN_2PI + var.ln()) - t * t / (2.0 * var))
        .collect();
    pairwise_sum(&terms)
}

/// Gaussian log-likelihood of paths under a mean network with fixed
/// per-element variances `s2`.
#[derive(Clone, Copy)]
pub struct SequenceLikelihood<'a> {
    pub dims: GruDims,
    pub inputs: &'a [Sequence],
    pub targets: &'a [Sequence],
    pub s2: &'a [Sequence],
}

impl<'a> SequenceLikelihood<'a> {
    pub fn new(dims: GruDims, inputs: &'a [Sequence], targets: &'a [Sequence], s2: &'a [Sequence]) -> Result<Self> {
        if inputs.len() != targets.len() || inputs.len() != s2.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                actual: targets.len().min(s2.len()),
                context: "likelihood inputs/targets/variances",
            });
        }
        for v in s2 {
            if let Some(&bad) = v.data().iter().find(|&&x| !(x > 0.0)) {
                return Err(Error::Domain {
                    func: "log_posterior",
                    detail: format!("aleatoric variance must be positive, got {bad}"),
                });
            }
        }
        Ok(SequenceLikelihood {
            dims,
            inputs,
            targets,
            s2,
        })
    }

    fn constant(&self, rows: &[usize]) -> f64 {
        let terms: Vec<f64> = rows
            .iter()
            .flat_map(|&i| self.s2[i].data().iter().map(|v| -0.5 * (LN_2PI + v.ln())))
            .collect();
        pairwise_sum(&terms)
    }

    /// Log-likelihood by plain evaluation.
    pub fn log_likelihood(&self, params: &ParamVector) -> Result<f64> {
        if self.inputs.is_empty() {
            return Ok(0.0);
        }
        let net = GruNetwork::new(self.dims, params.clone())?;
        let preds = net
            .forward_batch(&SeqBatch::from_sequences(self.inputs)?)?
            .outputs
            .to_sequences();
        let mut terms = Vec::new();
        for ((p, y), v) in preds.iter().zip(self.targets).zip(self.s2) {
            for ((&f, &y), &v) in p.data().iter().zip(y.data()).zip(v.data()) {
                terms.push(gaussian_logpdf(y, f, v)?);
            }
        }
        Ok(pairwise_sum(&terms))
    }
}

/// Log-likelihood over a subset of the data and its parameter gradient.
pub trait MinibatchTarget {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Σ_{i ∈ rows} log p(yᵢ | θ)` and its gradient.
    fn log_lik_grad(&self, params: &ParamVector, rows: &[usize]) -> Result<(f64, ParamVector)>;
}

impl MinibatchTarget for SequenceLikelihood<'_> {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn log_lik_grad(&self, params: &ParamVector, rows: &[usize]) -> Result<(f64, ParamVector)> {
        if rows.is_empty() {
            return Ok((0.0, ParamVector::zeros(params.layout().clone())));
        }
        let x = SeqBatch::from_sequences(rows.iter().map(|&i| &self.inputs[i]))?;
        let y = SeqBatch::from_sequences(rows.iter().map(|&i| &self.targets[i]))?;
        let w = SeqBatch::from_sequences(rows.iter().map(|&i| &self.s2[i]))?;
        let dims = self.dims;
        let (neg_half_sse, g) = grad(params, |tape, vars| {
            let (outs, _) = GruNetwork::forward_tape(dims, tape, vars, &x)?;
            let mut total = None;
            for ((o, target), var) in outs.into_iter().zip(y.steps()).zip(w.steps()) {
                let e = tape.weighted_sq_err(o, target.clone(), Some(var.map(|v| 1.0 / v)))?;
                total = Some(match total {
                    Some(t) => tape.add(t, e)?,
                    None => e,
                });
            }
            let total = total.ok_or(Error::Empty("sequence steps"))?;
            Ok(tape.scale(total, -0.5))
        })?;
        Ok((neg_half_sse + self.constant(rows), g))
    }
}

/// `log p(θ) + Σ log p(y | θ, s²)` with a unit Gaussian prior.
pub fn log_posterior(params: &ParamVector, likelihood: &SequenceLikelihood<'_>) -> Result<f64> {
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFinite { param: name.to_owned() });
    }
    Ok(log_prior(params, 1.0) + likelihood.log_likelihood(params)?)
}

/// Polynomial step-size decay `ε_t = ε·(1 + t/t₀)^(−γ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub t0: f64,
    pub gamma: f64,
}

/// How `step_size` maps to the step `ε` of the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepScale {
    /// `ε = step_size`.
    #[default]
    Absolute,
    /// `ε = 2·step_size / N`: `step_size` acts as a learning rate on the
    /// per-datum average log posterior.
    PerDatum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsgldConfig {
    pub step_size: f64,
    #[serde(default)]
    pub step_scale: StepScale,
    #[serde(default = "defaults::beta_pre")]
    pub beta_pre: f64,
    #[serde(default = "defaults::eps_pre")]
    pub eps_pre: f64,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::stride")]
    pub stride: usize,
    /// Paths per minibatch; 0 means full batch.
    #[serde(default = "defaults::batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::prior_std")]
    pub prior_std: f64,
    /// `false` uses `G = I` (plain SGLD).
    #[serde(default = "defaults::yes")]
    pub preconditioned: bool,
    /// `false` drops the injected noise (gradient ascent on the log posterior).
    #[serde(default = "defaults::yes")]
    pub inject_noise: bool,
    #[serde(default)]
    pub decay: Option<StepDecay>,
}

mod defaults {
    pub fn beta_pre() -> f64 {
        0.99
    }
    pub fn eps_pre() -> f64 {
        1e-5
    }
    pub fn burn_in() -> usize {
        50
    }
    pub fn epochs() -> usize {
        1050
    }
    pub fn stride() -> usize {
        10
    }
    pub fn batch() -> usize {
        64
    }
    pub fn prior_std() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
}

impl Default for PsgldConfig {
    fn default() -> Self {
        PsgldConfig {
            step_size: 1e-3,
            step_scale: StepScale::Absolute,
            beta_pre: defaults::beta_pre(),
            eps_pre: defaults::eps_pre(),
            burn_in: defaults::burn_in(),
            epochs: defaults::epochs(),
            stride: defaults::stride(),
            batch_size: defaults::batch(),
            prior_std: 1.0,
            preconditioned: true,
            inject_noise: true,
            decay: None,
        }
    }
}

impl PsgldConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!("{prefix}.step_size"), "must be non-negative"));
        }
        if !(self.beta_pre > 0.0 && self.beta_pre < 1.0) {
            return Err(Error::config(format!("{prefix}.beta_pre"), "must lie in (0, 1)"));
        }
        if !(self.eps_pre > 0.0) {
            return Err(Error::config(format!("{prefix}.eps_pre"), "must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::config(format!("{prefix}.stride"), "must be at least 1"));
        }
        if !(self.prior_std > 0.0) {
            return Err(Error::config(format!("{prefix}.prior_std"), "must be positive"));
        }
        if self.epochs <= self.burn_in {
            return Err(Error::config(
                format!("{prefix}.epochs"),
                "must exceed burn_in to yield samples",
            ));
        }
        Ok(())
    }

    /// Number of samples a run collects.
    pub fn sample_count(&self) -> usize {
        (self.epochs.saturating_sub(self.burn_in)) / self.stride
    }

    fn step_at(&self, t: u64) -> f64 {
        match &self.decay {
            Some(d) => self.step_size * (1.0 + t as f64 / d.t0).powf(-d.gamma),
            None => self.step_size,
        }
    }
}

/// Posterior samples of the mean-network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEnsemble {
    pub dims: GruDims,
    pub samples: Vec<ParamVector>,
    pub burn_in: usize,
    pub stride: usize,
    pub config: PsgldConfig,
    pub seed: u64,
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Parameter-space average of the samples.
    pub fn mean_params(&self) -> Result<ParamVector> {
        let first = self.samples.first().ok_or(Error::Empty("posterior ensemble"))?;
        let mut acc = ParamVector::zeros(first.layout().clone());
        let w = 1.0 / self.samples.len() as f64;
        for s in &self.samples {
            acc.axpy(w, s);
        }
        Ok(acc)
    }

    pub fn networks(&self) -> Result<Vec<GruNetwork>> {
        self.samples
            .iter()
            .map(|p| GruNetwork::new(self.dims, p.clone()))
            .collect()
    }

    /// Per-sample outputs for each path: `result[s][n]`.
    pub fn sample_outputs(&self, paths: &[Sequence]) -> Result<Vec<Vec<Sequence>>> {
        if self.samples.is_empty() {
            return Err(Error::Empty("posterior ensemble"));
        }
        let batch = SeqBatch::from_sequences(paths)?;
        self.networks()?
            .iter()
            .map(|net| Ok(net.forward_batch(&batch)?.outputs.to_sequences()))
            .collect()
    }
}

/// pSGLD over the mean-network parameters. `target` supplies minibatch
/// log-likelihood gradients; epochs are passes over shuffled minibatches and
/// a sample is taken at the end of epoch `e > burn_in` when
/// `(e − burn_in) % stride == 0`.
pub fn psgld_sample<T: MinibatchTarget>(
    cfg: &PsgldConfig,
    dims: GruDims,
    init: &ParamVector,
    target: &T,
    rng: &mut RngStream,
) -> Result<PosteriorEnsemble> {
    let (samples, _) = psgld_chain(cfg, init, target, rng)?;
    Ok(PosteriorEnsemble {
        dims,
        samples,
        burn_in: cfg.burn_in,
        stride: cfg.stride,
        config: cfg.clone(),
        seed: rng.seed(),
    })
}

/// Core pSGLD loop; returns the samples and the final state.
pub fn psgld_chain<T: MinibatchTarget>(
    cfg: &PsgldConfig,
    init: &ParamVector,
    target: &T,
    rng: &mut RngStream,
) -> Result<(Vec<ParamVector>, ParamVector)> {
    cfg.validate("psgld")?;
    if let Some(name) = init.first_non_finite() {
        return Err(Error::NonFinite { param: name.to_owned() });
    }
    let n_data = target.len();
    let mut theta = init.clone();
    let mut v = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..n_data).collect();
    let batch = if cfg.batch_size == 0 {
        n_data.max(1)
    } else {
        cfg.batch_size
    };
    let prior_prec = 1.0 / (cfg.prior_std * cfg.prior_std);
    let mut samples = Vec::with_capacity(cfg.sample_count());
    let eps_unit = match cfg.step_scale {
        StepScale::Absolute => 1.0,
        StepScale::PerDatum => 2.0 / n_data.max(1) as f64,
    };
    let mut t: u64 = 0;
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let batches: Vec<&[usize]> = if n_data == 0 {
            vec![&[][..]]
        } else {
            order.chunks(batch).collect()
        };
        for rows in batches {
            let eps = eps_unit * cfg.step_at(t);
            t += 1;
            let (_, g_lik) = target.log_lik_grad(&theta, rows).map_err(|e| match e {
                Error::NonFinite { param } => Error::Divergence {
                    epoch,
                    detail: format!("non-finite gradient in `{param}`"),
                },
                other => other,
            })?;
            let scale = if rows.is_empty() {
                0.0
            } else {
                n_data as f64 / rows.len() as f64
            };
            let per_datum = 1.0 / n_data.max(1) as f64;
            let vals = theta.values_mut();
            for k in 0..vals.len() {
                let full = -prior_prec * vals[k] + scale * g_lik.values()[k];
                let g_bar = full * per_datum;
                let precond = if cfg.preconditioned {
                    v[k] = cfg.beta_pre * v[k] + (1.0 - cfg.beta_pre) * g_bar * g_bar;
                    1.0 / (cfg.eps_pre + v[k].sqrt())
                } else {
                    1.0
                };
                let mut step = 0.5 * eps * precond * full;
                if cfg.inject_noise {
                    step += (eps * precond).sqrt() * rng.normal();
                }
                vals[k] += step;
            }
            if let Some(name) = theta.first_non_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("parameter `{name}` became non-finite"),
                });
            }
            if theta.max_abs() > DIVERGENCE_BOUND {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("parameter magnitude exceeded {DIVERGENCE_BOUND:e}"),
                });
            }
        }
        if epoch > cfg.burn_in && (epoch - cfg.burn_in) % cfg.stride == 0 {
            samples.push(theta.clone());
        }
    }
    Ok((samples, theta))
}

/// Differentiable log-density for the reference samplers.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcConfig {
    pub step: f64,
    /// Diagonal of the mass matrix Σ; `None` means identity.
    pub mass: Option<Vec<f64>>,
    pub burn_in: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcChain {
    /// States after burn-in, one per iteration.
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

fn energy<D: LogDensity>(target: &D, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (lp, g) = target.log_density_grad(theta)?;
    if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            param: "<target density>".into(),
        });
    }
    Ok((-lp, g.into_iter().map(|v| -v).collect()))
}

fn kinetic(v: &[f64], mass: &[f64]) -> f64 {
    0.5 * v.iter().zip(mass).map(|(v, m)| v * v / m).sum::<f64>()
}

fn mass_of<D: LogDensity>(target: &D, cfg: &McmcConfig) -> Result<Vec<f64>> {
    let d = target.dim();
    match &cfg.mass {
        Some(m) if m.len() != d => Err(Error::DimensionMismatch {
            expected: d,
            actual: m.len(),
            context: "mass matrix diagonal",
        }),
        Some(m) if m.iter().any(|x| !(*x > 0.0)) => Err(Error::Domain {
            func: "hmc_sample",
            detail: "mass matrix entries must be positive".into(),
        }),
        Some(m) => Ok(m.clone()),
        None => Ok(vec![1.0; d]),
    }
}

/// Hamiltonian Monte Carlo with `leapfrog` steps per proposal and a
/// Metropolis accept on the total energy.
pub fn hmc_sample<D: LogDensity>(
    target: &D,
    cfg: &McmcConfig,
    leapfrog: usize,
    init: &[f64],
    rng: &mut RngStream,
) -> Result<McmcChain> {
    if leapfrog == 0 {
        return Err(Error::Domain {
            func: "hmc_sample",
            detail: "at least one leapfrog step is required".into(),
        });
    }
    let mass = mass_of(target, cfg)?;
    let eta = cfg.step;
    let mut theta = init.to_vec();
    let (mut u, mut grad_u) = energy(target, &theta)?;
    let mut samples = Vec::with_capacity(cfg.iterations);
    let mut accepted = 0usize;
    for it in 0..cfg.burn_in + cfg.iterations {
        let v0: Vec<f64> = mass.iter().map(|m| m.sqrt() * rng.normal()).collect();
        let h0 = u + kinetic(&v0, &mass);
        let mut th = theta.clone();
        let mut v: Vec<f64> = v0.iter().zip(&grad_u).map(|(v, g)| v - 0.5 * eta * g).collect();
        for _ in 1..leapfrog {
            for k in 0..th.len() {
                th[k] += eta * v[k] / mass[k];
            }
            let (_, g) = energy(target, &th)?;
            for k in 0..v.len() {
                v[k] -= eta * g[k];
            }
        }
        for k in 0..th.len() {
            th[k] += eta * v[k] / mass[k];
        }
        let (u_new, g_new) = energy(target, &th)?;
        for k in 0..v.len() {
            v[k] -= 0.5 * eta * g_new[k];
        }
        let h1 = u_new + kinetic(&v, &mass);
        let alpha = (h0 - h1).exp().min(1.0);
        if rng.uniform() < alpha {
            theta = th;
            u = u_new;
            grad_u = g_new;
            if it >= cfg.burn_in {
                accepted += 1;
            }
        }
        if it >= cfg.burn_in {
            samples.push(theta.clone());
        }
    }
    Ok(McmcChain {
        samples,
        acceptance_rate: accepted as f64 / cfg.iterations.max(1) as f64,
    })
}

/// Langevin Monte Carlo: the one-step position/velocity update with a
/// Metropolis correction.
pub fn lmc_sample<D: LogDensity>(target: &D, cfg: &McmcConfig, init: &[f64], rng: &mut RngStream) -> Result<McmcChain> {
    let mass = mass_of(target, cfg)?;
    let eta = cfg.step;
    let mut theta = init.to_vec();
    let (mut u, mut grad_u) = energy(target, &theta)?;
    let mut samples = Vec::with_capacity(cfg.iterations);
    let mut accepted = 0usize;
    for it in 0..cfg.burn_in + cfg.iterations {
        let v0: Vec<f64> = mass.iter().map(|m| m.sqrt() * rng.normal()).collect();
        let proposal: Vec<f64> = (0..theta.len())
            .map(|k| theta[k] - 0.5 * eta * eta * grad_u[k] / mass[k] + eta * v0[k] / mass[k])
            .collect();
        let (u_new, g_new) = energy(target, &proposal)?;
        let v1: Vec<f64> = (0..theta.len())
            .map(|k| v0[k] - 0.5 * eta * grad_u[k] - 0.5 * eta * g_new[k])
            .collect();
        let alpha = ((u + kinetic(&v0, &mass)) - (u_new + kinetic(&v1, &mass)))
            .exp()
            .min(1.0);
        if rng.uniform() < alpha {
            theta = proposal;
            u = u_new;
            grad_u = g_new;
            if it >= cfg.burn_in {
                accepted += 1;
            }
        }
        if it >= cfg.burn_in {
            samples.push(theta.clone());
        }
    }
    Ok(McmcChain {
        samples,
        acceptance_rate: accepted as f64 / cfg.iterations.max(1) as f64,
    })
}

/// Monte-Carlo standard error of the mean by non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let n_batches = n_batches.clamp(2, xs.len().max(2));
    let size = xs.len() / n_batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..n_batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMode {
    /// `mean ± z·√epistemic_var`.
    #[default]
    Gaussian,
    /// Empirical ensemble quantiles, widened to contain the mean.
    Quantile,
}

/// Posterior-predictive summary of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveResult {
    pub mean: Sequence,
    pub epistemic_var: Sequence,
    pub aleatoric_var: Sequence,
    pub lower: Sequence,
    pub upper: Sequence,
    pub alpha: f64,
}

impl PredictiveResult {
    pub fn total_var(&self) -> Sequence {
        self.epistemic_var
            .zip_with(&self.aleatoric_var, |a, b| a + b)
            .expect("predictive fields share shape")
    }

    pub fn aleatoric_std(&self) -> Sequence {
        self.aleatoric_var.map(f64::sqrt)
    }
}

/// Summarize per-sample outputs `outputs[s]` of one path.
pub fn summarize(
    outputs: &[&Sequence],
    aleatoric_var: Sequence,
    alpha: f64,
    mode: IntervalMode,
) -> Result<PredictiveResult> {
    let first = *outputs.first().ok_or(Error::Empty("posterior ensemble"))?;
    let s = outputs.len();
    let n = first.data().len();
    let mut mean = vec![0.0; n];
    let mut var = vec![0.0; n];
    let mut column = vec![0.0; s];
    let z = normal_critical(alpha)?;
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for k in 0..n {
        for (c, o) in column.iter_mut().zip(outputs) {
            *c = o.data()[k];
        }
        let m = pairwise_sum(&column) / s as f64;
        let dev: Vec<f64> = column.iter().map(|v| (v - m) * (v - m)).collect();
        let v = if s > 1 {
            pairwise_sum(&dev) / (s - 1) as f64
        } else {
            0.0
        };
        mean[k] = m;
        var[k] = v;
        match mode {
            IntervalMode::Gaussian => {
                let h = z * v.sqrt();
                lower[k] = m - h;
                upper[k] = m + h;
            }
            IntervalMode::Quantile => {
                column.sort_by(f64::total_cmp);
                lower[k] = quantile_sorted(&column, alpha / 2.0).min(m);
                upper[k] = quantile_sorted(&column, 1.0 - alpha / 2.0).max(m);
            }
        }
    }
    let dim = first.dim();
    Ok(PredictiveResult {
        mean: Sequence::from_flat(dim, mean)?,
        epistemic_var: Sequence::from_flat(dim, var)?,
        aleatoric_var,
        lower: Sequence::from_flat(dim, lower)?,
        upper: Sequence::from_flat(dim, upper)?,
        alpha,
    })
}

fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    let pos = q * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

/// Posterior predictive for many paths at once.
pub fn predictive_batch(
    ensemble: &PosteriorEnsemble,
    vnet: Option<&VarianceNetwork>,
    paths: &[Sequence],
    alpha: f64,
    mode: IntervalMode,
) -> Result<Vec<PredictiveResult>> {
    let outs = ensemble.sample_outputs(paths)?;
    let alea = match vnet {
        Some(v) => {
            let (_, _, s2) = v.forward_batch(&SeqBatch::from_sequences(paths)?)?;
            s2.to_sequences()
        }
        None => {
            let d = ensemble.dims.output;
            paths.iter().map(|p| Sequence::zeros(p.len(), d)).collect()
        }
    };
    alea.into_iter()
        .enumerate()
        .map(|(n, a)| {
            let per_sample: Vec<&Sequence> = outs.iter().map(|o| &o[n]).collect();
            summarize(&per_sample, a, alpha, mode)
        })
        .collect()
}

pub fn predictive(
    ensemble: &PosteriorEnsemble,
    vnet: Option<&VarianceNetwork>,
    path: &Sequence,
    alpha: f64,
) -> Result<PredictiveResult> {
    let mut r = predictive_batch(
        ensemble,
        vnet,
        std::slice::from_ref(path),
        alpha,
        IntervalMode::Gaussian,
    )?;
    Ok(r.remove(0))
}

/// Per-datum posterior-predictive log-likelihood summed over the data:
/// `Σᵢ log( (1/S) Σ_s N(yᵢ; f(xᵢ; θ_s), s²ᵢ) )`, with a datum being one path.
pub fn log_marginal_likelihood(
    ensemble: &PosteriorEnsemble,
    inputs: &[Sequence],
    targets: &[Sequence],
    s2: &[Sequence],
) -> Result<f64> {
    let outs = ensemble.sample_outputs(inputs)?;
    let s = outs.len() as f64;
    let mut per_path = Vec::with_capacity(inputs.len());
    for (n, (y, v)) in targets.iter().zip(s2).enumerate() {
        let lls: Vec<f64> = outs
            .iter()
            .map(|o| {
                let terms: Vec<f64> = o[n]
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(v.data())
                    .map(|((&f, &y), &v)| gaussian_logpdf(y, f, v.max(VARIANCE_FLOOR)))
                    .collect::<Result<_>>()?;
                Ok(pairwise_sum(&terms))
            })
            .collect::<Result<_>>()?;
        let mx = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + lls.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        per_path.push(lse - s.ln());
    }
    Ok(pairwise_sum(&per_path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooperativeConfig {
    pub mean: TrainConfig,
    pub variance: TrainConfig,
    pub psgld: PsgldConfig,
    /// Cooperative iterations `K`.
    pub iterations: usize,
}

impl Default for CooperativeConfig {
    fn default() -> Self {
        CooperativeConfig {
            mean: TrainConfig::default(),
            variance: TrainConfig {
                epochs: 4000,
                lr: 1e-2,
                val_fraction: 0.0,
                ..TrainConfig::default()
            },
            psgld: PsgldConfig::default(),
            iterations: 2,
        }
    }
}

impl CooperativeConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.mean.validate(&format!("{prefix}.mean"))?;
        self.variance.validate(&format!("{prefix}.variance"))?;
        self.psgld.validate(&format!("{prefix}.psgld"))?;
        if self.iterations == 0 {
            return Err(Error::config(format!("{prefix}.iterations"), "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub iteration: usize,
    pub lmglk: f64,
    /// Where Step 3 started: `step1` or `previous-sample`.
    pub warm_start: String,
    pub mean_s2: f64,
}

#[derive(Clone, Debug)]
pub struct CooperativeResult {
    pub ensemble: PosteriorEnsemble,
    pub vnet: VarianceNetwork,
    pub point_estimate: GruNetwork,
    pub selected: usize,
    pub selection_log: Vec<SelectionRecord>,
    pub mean_log: TrainingLog,
}

/// Alternate variance fitting and posterior sampling; keep the iteration
/// with the largest predictive log-likelihood.
pub fn cooperative_train(
    net: &GruNetwork,
    vnet: &VarianceNetwork,
    inputs: &[Sequence],
    targets: &[Sequence],
    cfg: &CooperativeConfig,
    seed: u64,
) -> Result<CooperativeResult> {
    cfg.validate("cooperative")?;
    let (point, mean_log) = train_mean(net, inputs, targets, &cfg.mean)?;
    let batch = SeqBatch::from_sequences(inputs)?;
    let mut mean_preds = point.forward_batch(&batch)?.outputs.to_sequences();
    let mut vnet = vnet.clone();
    let mut start = point.params().clone();
    let mut best: Option<(f64, PosteriorEnsemble, VarianceNetwork, usize)> = None;
    let mut log = Vec::new();
    for it in 1..=cfg.iterations {
        let (fitted, _) = train_variance(&vnet, &mean_preds, inputs, targets, &cfg.variance)?;
        vnet = fitted;
        let (_, _, s2) = vnet.forward_batch(&batch)?;
        let s2 = s2.to_sequences();
        let lik = SequenceLikelihood::new(point.dims(), inputs, targets, &s2)?;
        let mut rng = RngStream::new(seed, STREAM_PSGLD + it as u64);
        let (samples, last) = psgld_chain(&cfg.psgld, &start, &lik, &mut rng)?;
        let ensemble = PosteriorEnsemble {
            dims: point.dims(),
            samples,
            burn_in: cfg.psgld.burn_in,
            stride: cfg.psgld.stride,
            config: cfg.psgld.clone(),
            seed,
        };
        let lmglk = log_marginal_likelihood(&ensemble, inputs, targets, &s2)?;
        let mean_s2 = s2.iter().flat_map(|s| s.data().iter().copied()).sum::<f64>()
            / s2.iter().map(|s| s.data().len()).sum::<usize>().max(1) as f64;
        log.push(SelectionRecord {
            iteration: it,
            lmglk,
            warm_start: if it == 1 { "step1" } else { "previous-sample" }.into(),
            mean_s2,
        });
        mean_preds = posterior_mean(&ensemble, inputs)?;
        start = last;
        if best.as_ref().map_or(true, |b| lmglk > b.0) {
            best = Some((lmglk, ensemble, vnet.clone(), it));
        }
    }
    let (_, ensemble, vnet, selected) = best.expect("at least one iteration");
    Ok(CooperativeResult {
        ensemble,
        vnet,
        point_estimate: point,
        selected,
        selection_log: log,
        mean_log,
    })
}

/// Ensemble-average prediction per path.
pub fn posterior_mean(ensemble: &PosteriorEnsemble, paths: &[Sequence]) -> Result<Vec<Sequence>> {
    let outs = ensemble.sample_outputs(paths)?;
    let w = 1.0 / outs.len() as f64;
    Ok((0..paths.len())
        .map(|n| {
            let mut acc = Sequence::zeros(outs[0][n].len(), outs[0][n].dim());
            for o in &outs {
                for (a, v) in acc.data_mut().iter_mut().zip(o[n].data()) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect())
}
