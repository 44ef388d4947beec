//! Trained predictors bundled with their normalization statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes::{
    cooperative_train, predictive_batch, CooperativeConfig, IntervalMode, PosteriorEnsemble, PredictiveResult,
    SelectionRecord,
};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gru::{GruDims, GruNetwork, InitScheme, VarianceNetwork};
use crate::metrics::{evaluate, MetricReport, Scored};
use crate::numerics::RngStream;
use crate::persist::{Section, TensorFile};
use crate::sequence::{Normalizer, SeqBatch, Sequence};
use crate::training::{train_mean, TrainConfig, TrainingLog};

const STREAM_INIT_MEAN: u64 = 0x1417;
const STREAM_INIT_VAR: u64 = 0x1418;

/// Width and depth of one GRU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default)]
    pub init: InitScheme,
}

fn one() -> usize {
    1
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 32,
            layers: 1,
            init: InitScheme::default(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config(format!("{prefix}.hidden"), "must be at least 1"));
        }
        if self.layers == 0 {
            return Err(Error::config(format!("{prefix}.layers"), "must be at least 1"));
        }
        Ok(())
    }
}

/// Output of a predictor: a point path, or a full posterior predictive.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Point(Sequence),
    Distribution(PredictiveResult),
}

impl Prediction {
    pub fn mean(&self) -> &Sequence {
        match self {
            Prediction::Point(s) => s,
            Prediction::Distribution(d) => &d.mean,
        }
    }

    pub fn distribution(&self) -> Option<&PredictiveResult> {
        match self {
            Prediction::Point(_) => None,
            Prediction::Distribution(d) => Some(d),
        }
    }

    pub fn into_mean(self) -> Sequence {
        match self {
            Prediction::Point(s) => s,
            Prediction::Distribution(d) => d.mean,
        }
    }
}

/// Anything that maps strain paths to stress predictions and exposes a
/// hidden-state sequence for transfer to another fidelity.
pub trait SequenceModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn predict_batch(&self, paths: &[Sequence]) -> Result<Vec<Prediction>>;
    fn hidden_batch(&self, paths: &[Sequence]) -> Result<Vec<Sequence>>;

    fn predict_mean_batch(&self, paths: &[Sequence]) -> Result<Vec<Sequence>> {
        Ok(self
            .predict_batch(paths)?
            .into_iter()
            .map(Prediction::into_mean)
            .collect())
    }
}

fn normalize_all(norm: &Normalizer, seqs: &[Sequence]) -> Vec<Sequence> {
    seqs.iter().map(|s| norm.apply(s)).collect()
}

fn first_dims(inputs: &[Sequence], targets: &[Sequence]) -> Result<(usize, usize)> {
    let x = inputs.first().ok_or(Error::Empty("training inputs"))?;
    let y = targets.first().ok_or(Error::Empty("training targets"))?;
    Ok((x.dim(), y.dim()))
}

#[derive(Serialize, Deserialize)]
struct RnnMeta {
    dims: GruDims,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

/// Deterministic GRU regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    pub net: GruNetwork,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

impl RnnModel {
    /// Untrained model with the given statistics; `seed` drives the initial
    /// weights.
    pub fn init(arch: &NetConfig, input_norm: Normalizer, output_norm: Normalizer, seed: u64) -> Result<RnnModel> {
        arch.validate("net")?;
        let dims = GruDims::new(input_norm.dim(), arch.hidden, arch.layers, output_norm.dim());
        let net = GruNetwork::init(dims, arch.init, &mut RngStream::new(seed, STREAM_INIT_MEAN))?;
        Ok(RnnModel {
            net,
            input_norm,
            output_norm,
        })
    }

    pub fn fit(
        inputs: &[Sequence],
        targets: &[Sequence],
        arch: &NetConfig,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<(RnnModel, TrainingLog)> {
        first_dims(inputs, targets)?;
        let model = Self::init(arch, Normalizer::fit(inputs)?, Normalizer::fit(targets)?, seed)?;
        let x = normalize_all(&model.input_norm, inputs);
        let y = normalize_all(&model.output_norm, targets);
        let (net, log) = train_mean(&model.net, &x, &y, cfg)?;
        Ok((RnnModel { net, ..model }, log))
    }

    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let meta = RnnMeta {
            dims: self.net.dims(),
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
        };
        Ok(TensorFile {
            kind: "rnn".into(),
            meta: serde_json::to_value(meta).map_err(|e| Error::format("<rnn header>", e.to_string()))?,
            sections: vec![Section::from_params("mean", [self.net.params()])?],
        })
    }

    pub fn from_tensor_file(file: &TensorFile, origin: &Path) -> Result<RnnModel> {
        file.expect_kind("rnn", origin)?;
        let meta: RnnMeta = file.meta_as(origin)?;
        let net = single_net(file, "mean", meta.dims, origin)?;
        Ok(RnnModel {
            net,
            input_norm: meta.input_norm,
            output_norm: meta.output_norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file()?.write(path)
    }

    pub fn load(path: &Path) -> Result<RnnModel> {
        Self::from_tensor_file(&TensorFile::read(path)?, path)
    }
}

fn single_net(file: &TensorFile, name: &str, dims: GruDims, origin: &Path) -> Result<GruNetwork> {
    let mut params = file.section(name, origin)?.to_params()?;
    if params.len() != 1 {
        return Err(Error::format(
            origin,
            format!("section `{name}` must hold exactly one block"),
        ));
    }
    GruNetwork::new(dims, params.remove(0)).map_err(|e| Error::format(origin, e.to_string()))
}

impl SequenceModel for RnnModel {
    fn input_dim(&self) -> usize {
        self.net.dims().input
    }

    fn output_dim(&self) -> usize {
        self.net.dims().output
    }

    fn hidden_dim(&self) -> usize {
        self.net.dims().hidden
    }

    fn predict_batch(&self, paths: &[Sequence]) -> Result<Vec<Prediction>> {
        let x = SeqBatch::from_sequences(&normalize_all(&self.input_norm, paths))?;
        let out = self.net.forward_batch(&x)?.outputs.to_sequences();
        Ok(out
            .iter()
            .map(|o| Prediction::Point(self.output_norm.invert(o)))
            .collect())
    }

    fn hidden_batch(&self, paths: &[Sequence]) -> Result<Vec<Sequence>> {
        let x = SeqBatch::from_sequences(&normalize_all(&self.input_norm, paths))?;
        Ok(self.net.forward_batch(&x)?.hidden.to_sequences())
    }
}

/// Cooperative VeBRNN: posterior ensemble of mean networks plus a variance
/// network, both in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct VebrnnModel {
    pub ensemble: PosteriorEnsemble,
    pub vnet: VarianceNetwork,
    pub point_estimate: GruNetwork,
    /// Network at the parameter-space posterior mean; source of transferred
    /// hidden states.
    pub mean_net: GruNetwork,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub alpha: f64,
    pub interval: IntervalMode,
    pub selected: usize,
    pub selection_log: Vec<SelectionRecord>,
}

#[derive(Serialize, Deserialize)]
struct VebrnnMeta {
    mean_dims: GruDims,
    var_dims: GruDims,
    residual_scale: Vec<f64>,
    input_norm: Normalizer,
    output_norm: Normalizer,
    alpha: f64,
    interval: IntervalMode,
    selected: usize,
    selection_log: Vec<SelectionRecord>,
    ensemble: serde_json::Value,
}

/// Trained VeBRNN plus the step-1 training log.
pub struct VebrnnFit {
    pub model: VebrnnModel,
    pub mean_log: TrainingLog,
}

impl VebrnnModel {
    pub fn fit(
        inputs: &[Sequence],
        targets: &[Sequence],
        mean_arch: &NetConfig,
        var_arch: &NetConfig,
        cfg: &CooperativeConfig,
        seed: u64,
    ) -> Result<VebrnnFit> {
        mean_arch.validate("mean_net")?;
        var_arch.validate("variance_net")?;
        let (din, dout) = first_dims(inputs, targets)?;
        let input_norm = Normalizer::fit(inputs)?;
        let output_norm = Normalizer::fit(targets)?;
        let x = normalize_all(&input_norm, inputs);
        let y = normalize_all(&output_norm, targets);
        let dims = GruDims::new(din, mean_arch.hidden, mean_arch.layers, dout);
        let net = GruNetwork::init(dims, mean_arch.init, &mut RngStream::new(seed, STREAM_INIT_MEAN))?;
        let vnet = VarianceNetwork::init(
            din,
            var_arch.hidden,
            var_arch.layers,
            dout,
            var_arch.init,
            &mut RngStream::new(seed, STREAM_INIT_VAR),
        )?;
        let out = cooperative_train(&net, &vnet, &x, &y, cfg, seed)?;
        let mean_net = GruNetwork::new(dims, out.ensemble.mean_params()?)?;
        Ok(VebrnnFit {
            model: VebrnnModel {
                ensemble: out.ensemble,
                vnet: out.vnet,
                point_estimate: out.point_estimate,
                mean_net,
                input_norm,
                output_norm,
                alpha: 0.05,
                interval: IntervalMode::Gaussian,
                selected: out.selected,
                selection_log: out.selection_log,
            },
            mean_log: out.mean_log,
        })
    }

    /// Aleatoric variance in data units.
    pub fn aleatoric_var_batch(&self, paths: &[Sequence]) -> Result<Vec<Sequence>> {
        let x = SeqBatch::from_sequences(&normalize_all(&self.input_norm, paths))?;
        let (_, _, s2) = self.vnet.forward_batch(&x)?;
        Ok(s2
            .to_sequences()
            .iter()
            .map(|s| self.output_norm.invert_variance(s))
            .collect())
    }

    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let ens = self.ensemble.to_tensor_file()?;
        let meta = VebrnnMeta {
            mean_dims: self.ensemble.dims,
            var_dims: self.vnet.net.dims(),
            residual_scale: self.vnet.residual_scale.clone(),
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
            alpha: self.alpha,
            interval: self.interval,
            selected: self.selected,
            selection_log: self.selection_log.clone(),
            ensemble: ens.meta,
        };
        let mut sections = ens.sections;
        sections.push(Section::from_params("variance", [self.vnet.net.params()])?);
        sections.push(Section::from_params("point", [self.point_estimate.params()])?);
        Ok(TensorFile {
            kind: "vebrnn".into(),
            meta: serde_json::to_value(meta).map_err(|e| Error::format("<vebrnn header>", e.to_string()))?,
            sections,
        })
    }

    pub fn from_tensor_file(file: &TensorFile, origin: &Path) -> Result<VebrnnModel> {
        file.expect_kind("vebrnn", origin)?;
        let meta: VebrnnMeta = file.meta_as(origin)?;
        let ens_file = TensorFile {
            kind: "ensemble".into(),
            meta: meta.ensemble,
            sections: vec![file.section("samples", origin)?.clone()],
        };
        let ensemble = PosteriorEnsemble::from_tensor_file(&ens_file, origin)?;
        let vnet = VarianceNetwork {
            net: single_net(file, "variance", meta.var_dims, origin)?,
            residual_scale: meta.residual_scale,
        };
        let point_estimate = single_net(file, "point", meta.mean_dims, origin)?;
        let mean_net = GruNetwork::new(meta.mean_dims, ensemble.mean_params()?)?;
        Ok(VebrnnModel {
            ensemble,
            vnet,
            point_estimate,
            mean_net,
            input_norm: meta.input_norm,
            output_norm: meta.output_norm,
            alpha: meta.alpha,
            interval: meta.interval,
            selected: meta.selected,
            selection_log: meta.selection_log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file()?.write(path)
    }

    pub fn load(path: &Path) -> Result<VebrnnModel> {
        Self::from_tensor_file(&TensorFile::read(path)?, path)
    }
}

/// Map a predictive summary from normalized to data units.
pub fn denormalize(r: &PredictiveResult, norm: &Normalizer) -> PredictiveResult {
    PredictiveResult {
        mean: norm.invert(&r.mean),
        epistemic_var: norm.invert_variance(&r.epistemic_var),
        aleatoric_var: norm.invert_variance(&r.aleatoric_var),
        lower: norm.invert(&r.lower),
        upper: norm.invert(&r.upper),
        alpha: r.alpha,
    }
}

impl SequenceModel for VebrnnModel {
    fn input_dim(&self) -> usize {
        self.ensemble.dims.input
    }

    fn output_dim(&self) -> usize {
        self.ensemble.dims.output
    }

    fn hidden_dim(&self) -> usize {
        self.ensemble.dims.hidden
    }

    fn predict_batch(&self, paths: &[Sequence]) -> Result<Vec<Prediction>> {
        let x = normalize_all(&self.input_norm, paths);
        let raw = predictive_batch(&self.ensemble, Some(&self.vnet), &x, self.alpha, self.interval)?;
        Ok(raw
            .iter()
            .map(|r| Prediction::Distribution(denormalize(r, &self.output_norm)))
            .collect())
    }

    fn hidden_batch(&self, paths: &[Sequence]) -> Result<Vec<Sequence>> {
        let x = SeqBatch::from_sequences(&normalize_all(&self.input_norm, paths))?;
        Ok(self.mean_net.forward_batch(&x)?.hidden.to_sequences())
    }
}

/// All metrics of `model` on a test set with clean means and known noise std.
pub fn evaluate_model(model: &dyn SequenceModel, test: &Dataset, alpha: f64) -> Result<MetricReport> {
    let preds = model.predict_batch(&test.inputs())?;
    let mean: Vec<Sequence> = preds.iter().map(|p| p.mean().clone()).collect();
    let dists: Option<Vec<&PredictiveResult>> = preds.iter().map(Prediction::distribution).collect();
    let (epistemic, aleatoric_std) = match dists {
        Some(d) => (
            Some(d.iter().map(|r| r.epistemic_var.clone()).collect::<Vec<_>>()),
            Some(d.iter().map(|r| r.aleatoric_std()).collect::<Vec<_>>()),
        ),
        None => (None, None),
    };
    let scored = Scored {
        mean: &mean,
        epistemic_var: epistemic.as_deref(),
        aleatoric_std: aleatoric_std.as_deref(),
    };
    evaluate(&scored, &test.outputs(), &test.true_stds(), alpha)
}
