//! Two-fidelity composition `f^h(x) = g(f^l(x), x) + r(x)` in its four
//! variants, over every LF/HF architecture pairing.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bayes::CooperativeConfig;
use crate::datagen::{build_benchmark, BenchmarkSizes, Dataset, OracleConfig, Suite};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::models::{evaluate_model, NetConfig, Prediction, RnnModel, SequenceModel, VebrnnModel};
use crate::sequence::Sequence;
use crate::training::{TrainConfig, TrainingLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MfVariant {
    NestOutput,
    NestHidden,
    ResidualOriginal,
    ResidualHidden,
}

impl MfVariant {
    pub const ALL: [MfVariant; 4] = [
        MfVariant::NestOutput,
        MfVariant::NestHidden,
        MfVariant::ResidualOriginal,
        MfVariant::ResidualHidden,
    ];

    pub fn is_residual(self) -> bool {
        matches!(self, MfVariant::ResidualOriginal | MfVariant::ResidualHidden)
    }

    pub fn uses_hidden(self) -> bool {
        matches!(self, MfVariant::NestHidden | MfVariant::ResidualHidden)
    }

    fn name(self) -> &'static str {
        match self {
            MfVariant::NestOutput => "nest-output",
            MfVariant::NestHidden => "nest-hidden",
            MfVariant::ResidualOriginal => "residual-original",
            MfVariant::ResidualHidden => "residual-hidden",
        }
    }
}

impl fmt::Display for MfVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MfVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MfVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rnn,
    Vebrnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Vebrnn => "vebrnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(ModelKind::Rnn),
            "vebrnn" => Ok(ModelKind::Vebrnn),
            _ => Err(Error::config("model", format!("unknown model kind `{s}`"))),
        }
    }
}

/// Model row: a single-fidelity model, or `lf+hf`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pairing {
    pub lf: Option<ModelKind>,
    pub hf: ModelKind,
}

impl Pairing {
    pub fn single(kind: ModelKind) -> Pairing {
        Pairing { lf: None, hf: kind }
    }

    pub fn multi(lf: ModelKind, hf: ModelKind) -> Pairing {
        Pairing { lf: Some(lf), hf }
    }

    pub fn is_multi_fidelity(&self) -> bool {
        self.lf.is_some()
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lf {
            Some(lf) => write!(f, "{lf}+{}", self.hf),
            None => write!(f, "{}", self.hf),
        }
    }
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('+') {
            Some((lf, hf)) => Ok(Pairing::multi(lf.trim().parse()?, hf.trim().parse()?)),
            None => Ok(Pairing::single(s.trim().parse()?)),
        }
    }
}

impl TryFrom<String> for Pairing {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Pairing> for String {
    fn from(p: Pairing) -> String {
        p.to_string()
    }
}

/// Training settings of one fidelity stage; `kind` picks which block applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default = "default_variance_net")]
    pub variance_net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cooperative: CooperativeConfig,
}

fn default_variance_net() -> NetConfig {
    NetConfig {
        hidden: 8,
        ..NetConfig::default()
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            net: NetConfig::default(),
            variance_net: default_variance_net(),
            train: TrainConfig::default(),
            cooperative: CooperativeConfig::default(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.net.validate(&format!("{prefix}.net"))?;
        self.variance_net.validate(&format!("{prefix}.variance_net"))?;
        self.train.validate(&format!("{prefix}.train"))?;
        self.cooperative.validate(&format!("{prefix}.cooperative"))
    }
}

/// A trained predictor of any supported shape.
#[derive(Clone, Debug, PartialEq)]
pub enum Trained {
    Rnn(RnnModel),
    Vebrnn(VebrnnModel),
    Mf(Box<MfModel>),
}

impl Trained {
    pub fn kind_label(&self) -> String {
        match self {
            Trained::Rnn(_) => "rnn".into(),
            Trained::Vebrnn(_) => "vebrnn".into(),
            Trained::Mf(m) => format!("mf[{}]", m.variant),
        }
    }

    /// Write into `dir`: `rnn.bin` or `vebrnn.bin`, or for a two-fidelity
    /// model `mf.json` plus `lf/` and `hf/` subdirectories.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        match self {
            Trained::Rnn(m) => m.save(&dir.join("rnn.bin")),
            Trained::Vebrnn(m) => m.save(&dir.join("vebrnn.bin")),
            Trained::Mf(m) => {
                let path = dir.join("mf.json");
                let text = serde_json::json!({ "variant": m.variant }).to_string();
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                m.lf.save(&dir.join("lf"))?;
                m.hf.save(&dir.join("hf"))
            }
        }
    }

    pub fn load(dir: &Path) -> Result<Trained> {
        let mf = dir.join("mf.json");
        if mf.exists() {
            #[derive(Deserialize)]
            struct MfMeta {
                variant: MfVariant,
            }
            let text = std::fs::read_to_string(&mf).map_err(|e| Error::io(&mf, e))?;
            let meta: MfMeta = serde_json::from_str(&text).map_err(|e| Error::format(&mf, e.to_string()))?;
            let lf = Trained::load(&dir.join("lf"))?;
            let hf = Trained::load(&dir.join("hf"))?;
            return Ok(Trained::Mf(Box::new(MfModel {
                lf,
                hf,
                variant: meta.variant,
            })));
        }
        let vebrnn = dir.join("vebrnn.bin");
        if vebrnn.exists() {
            return Ok(Trained::Vebrnn(VebrnnModel::load(&vebrnn)?));
        }
        Ok(Trained::Rnn(RnnModel::load(&dir.join("rnn.bin"))?))
    }

    fn as_model(&self) -> &dyn SequenceModel {
        match self {
            Trained::Rnn(m) => m,
            Trained::Vebrnn(m) => m,
            Trained::Mf(m) => m.as_ref(),
        }
    }
}

impl SequenceModel for Trained {
    fn input_dim(&self) -> usize {
        self.as_model().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.as_model().output_dim()
    }

    fn hidden_dim(&self) -> usize {
        self.as_model().hidden_dim()
    }

    fn predict_batch(&self, paths: &[Sequence]) -> Result<Vec<Prediction>> {
        self.as_model().predict_batch(paths)
    }

    fn hidden_batch(&self, paths: &[Sequence]) -> Result<Vec<Sequence>> {
        self.as_model().hidden_batch(paths)
    }
}

/// Train a single-fidelity model of the given kind.
pub fn train_model(
    kind: ModelKind,
    inputs: &[Sequence],
    targets: &[Sequence],
    cfg: &StageConfig,
    seed: u64,
) -> Result<(Trained, TrainingLog)> {
    match kind {
        ModelKind::Rnn => {
            let (m, log) = RnnModel::fit(inputs, targets, &cfg.net, &cfg.train, seed)?;
            Ok((Trained::Rnn(m), log))
        }
        ModelKind::Vebrnn => {
            let fit = VebrnnModel::fit(inputs, targets, &cfg.net, &cfg.variance_net, &cfg.cooperative, seed)?;
            Ok((Trained::Vebrnn(fit.model), fit.mean_log))
        }
    }
}

/// LF predictor plus HF-side network. For Nest variants `hf` is the transfer
/// model `g`; for Residual variants it is the residual `r` and `g` is the
/// identity.
#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    pub lf: Trained,
    pub hf: Trained,
    pub variant: MfVariant,
}

/// HF-side input for `variant` at `paths`.
pub fn transfer_inputs(lf: &dyn SequenceModel, variant: MfVariant, paths: &[Sequence]) -> Result<Vec<Sequence>> {
    let extra = match variant {
        MfVariant::ResidualOriginal => return Ok(paths.to_vec()),
        MfVariant::NestOutput => lf.predict_mean_batch(paths)?,
        MfVariant::NestHidden | MfVariant::ResidualHidden => lf.hidden_batch(paths)?,
    };
    paths.iter().zip(&extra).map(|(x, e)| x.concat(e)).collect()
}

/// HF-side training targets: `y` itself, or `y − f^l(x)` for Residual variants.
pub fn hf_targets(
    lf: &dyn SequenceModel,
    variant: MfVariant,
    paths: &[Sequence],
    targets: &[Sequence],
) -> Result<Vec<Sequence>> {
    if !variant.is_residual() {
        return Ok(targets.to_vec());
    }
    let lf_mean = lf.predict_mean_batch(paths)?;
    targets
        .iter()
        .zip(&lf_mean)
        .map(|(y, f)| y.zip_with(f, |a, b| a - b))
        .collect()
}

/// Add the LF mean to a residual prediction. Variances and interval widths
/// come from the residual model alone.
fn shift(pred: Prediction, lf_mean: &Sequence) -> Result<Prediction> {
    let add = |s: &Sequence| s.zip_with(lf_mean, |a, b| a + b);
    Ok(match pred {
        Prediction::Point(r) => Prediction::Point(add(&r)?),
        Prediction::Distribution(mut d) => {
            d.mean = add(&d.mean)?;
            d.lower = add(&d.lower)?;
            d.upper = add(&d.upper)?;
            Prediction::Distribution(d)
        }
    })
}

impl SequenceModel for MfModel {
    fn input_dim(&self) -> usize {
        self.lf.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.hf.output_dim()
    }

    fn hidden_dim(&self) -> usize {
        self.hf.hidden_dim()
    }

    fn predict_batch(&self, paths: &[Sequence]) -> Result<Vec<Prediction>> {
        let x = transfer_inputs(&self.lf, self.variant, paths)?;
        let hf = self.hf.predict_batch(&x)?;
        if !self.variant.is_residual() {
            return Ok(hf);
        }
        let lf_mean = self.lf.predict_mean_batch(paths)?;
        hf.into_iter().zip(&lf_mean).map(|(p, m)| shift(p, m)).collect()
    }

    fn hidden_batch(&self, paths: &[Sequence]) -> Result<Vec<Sequence>> {
        let x = transfer_inputs(&self.lf, self.variant, paths)?;
        self.hf.hidden_batch(&x)
    }
}

pub fn mf_predict(model: &MfModel, paths: &[Sequence]) -> Result<Vec<Prediction>> {
    model.predict_batch(paths)
}

/// Per-stage configuration of a two-fidelity model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfConfig {
    #[serde(default)]
    pub lf: StageConfig,
    #[serde(default)]
    pub hf: StageConfig,
}

/// Logs of both stages.
#[derive(Clone, Debug, Default)]
pub struct MfLogs {
    pub lf: TrainingLog,
    pub hf: TrainingLog,
}

const HF_SEED_OFFSET: u64 = 0x4846_0000_0000;

/// Build the HF side on top of an already trained (and untouched) LF model.
pub fn mf_train_on(
    lf: Trained,
    hf_inputs: &[Sequence],
    hf_outputs: &[Sequence],
    variant: MfVariant,
    hf_kind: ModelKind,
    cfg: &StageConfig,
    seed: u64,
) -> Result<(MfModel, TrainingLog)> {
    let first = hf_inputs.first().ok_or(Error::Empty("HF training data"))?;
    if first.dim() != lf.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: lf.input_dim(),
            actual: first.dim(),
            context: "HF input width vs LF model input",
        });
    }
    let x = transfer_inputs(&lf, variant, hf_inputs)?;
    let y = hf_targets(&lf, variant, hf_inputs, hf_outputs)?;
    let (hf, log) = train_model(hf_kind, &x, &y, cfg, seed)?;
    Ok((MfModel { lf, hf, variant }, log))
}

pub fn mf_train(
    lf_data: (&[Sequence], &[Sequence]),
    hf_data: (&[Sequence], &[Sequence]),
    variant: MfVariant,
    lf_kind: ModelKind,
    hf_kind: ModelKind,
    cfg: &MfConfig,
    seed: u64,
) -> Result<(MfModel, MfLogs)> {
    if lf_data.0.is_empty() {
        return Err(Error::Empty("LF training data"));
    }
    let (lf, lf_log) = train_model(lf_kind, lf_data.0, lf_data.1, &cfg.lf, seed)?;
    let (model, hf_log) = mf_train_on(
        lf,
        hf_data.0,
        hf_data.1,
        variant,
        hf_kind,
        &cfg.hf,
        seed ^ HF_SEED_OFFSET,
    )?;
    Ok((model, MfLogs { lf: lf_log, hf: hf_log }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub n_hf: usize,
    pub n_lf: usize,
    pub c_hf: f64,
    pub c_lf: f64,
}

impl BudgetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_hf > 0.0 && self.c_hf.is_finite()) {
            return Err(Error::config("budget.c_hf", "must be positive"));
        }
        if !(self.c_lf > 0.0 && self.c_lf.is_finite()) {
            return Err(Error::config("budget.c_lf", "must be positive"));
        }
        Ok(())
    }
}

/// `T_c = N^h c^h + N^l c^l`.
pub fn total_cost(b: &BudgetSpec) -> f64 {
    b.n_hf as f64 * b.c_hf + b.n_lf as f64 * b.c_lf
}

/// Cost ratios `(c_hf, c_lf)` of the fidelity pair each suite stands in for.
pub fn default_costs(suite: Suite) -> (f64, f64) {
    match suite {
        Suite::S1 => (1.0 / 20.0, 1.0 / 120.0),
        Suite::S2 => (1.0, 1.0 / 36.0),
        Suite::S3 => (1.0 / 20.0, 1.0 / 120.0),
        Suite::S4 => (1.0, 1.0 / 120.0),
    }
}

/// Path counts for a fraction `frac` of `total` spent on LF data.
pub fn allocate(total: f64, frac: f64, c_hf: f64, c_lf: f64) -> (usize, usize) {
    let n_lf = (frac * total / c_lf).round() as usize;
    let n_hf = ((1.0 - frac) * total / c_hf).round() as usize;
    (n_lf, n_hf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    /// No HF paths: the row scores an LF-only model against HF test data.
    LfOnly,
    /// No paths at all, or no HF paths at an interior grid point.
    Degenerate,
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowStatus::Ok => "ok",
            RowStatus::LfOnly => "lf-only",
            RowStatus::Degenerate => "degenerate",
        })
    }
}

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub n_lf: usize,
    pub n_hf: usize,
    pub total_cost: f64,
    pub lf_fraction: Option<f64>,
    pub status: RowStatus,
    pub id: Option<MetricReport>,
    pub ood: Option<MetricReport>,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "variant,n_lf,n_hf,T_c,eps_r_id,eps_r_ood,tll_id,tll_ood,wa_id,wa_ood,picp_id,picp_ood,mpiw_id,mpiw_ood,seed,lf_fraction,status";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl ReportRow {
    pub fn to_csv(&self) -> String {
        let g = |r: &Option<MetricReport>, f: fn(&MetricReport) -> Option<f64>| cell(r.as_ref().and_then(f));
        [
            self.variant.clone(),
            self.n_lf.to_string(),
            self.n_hf.to_string(),
            format!("{:e}", self.total_cost),
            g(&self.id, |m| Some(m.eps_r)),
            g(&self.ood, |m| Some(m.eps_r)),
            g(&self.id, |m| m.tll),
            g(&self.ood, |m| m.tll),
            g(&self.id, |m| m.wa),
            g(&self.ood, |m| m.wa),
            g(&self.id, |m| m.picp),
            g(&self.ood, |m| m.picp),
            g(&self.id, |m| m.mpiw),
            g(&self.ood, |m| m.mpiw),
            self.seed.to_string(),
            cell(self.lf_fraction),
            self.status.to_string(),
        ]
        .join(",")
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// What to train for one benchmark: a single-fidelity model when
/// `pairing.lf` is `None`, else a two-fidelity model of `variant`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPlan {
    pub pairing: Pairing,
    pub variant: MfVariant,
    pub config: MfConfig,
}

impl ModelPlan {
    pub fn label(&self) -> String {
        match self.pairing.lf {
            Some(_) => format!("{}:{}", self.pairing, self.variant),
            None => self.pairing.to_string(),
        }
    }
}

/// Train per `plan` on `lf`/`hf` and score on the HF test sets. Single-fidelity
/// plans use `config.hf`.
pub fn train_and_score(
    plan: &ModelPlan,
    lf: Option<&Dataset>,
    hf: &Dataset,
    test_id: &Dataset,
    test_ood: &Dataset,
    alpha: f64,
    seed: u64,
) -> Result<(Trained, MetricReport, MetricReport)> {
    let model = match (plan.pairing.lf, lf) {
        (Some(lf_kind), Some(lf)) => {
            let (m, _) = mf_train(
                (&lf.inputs(), &lf.outputs()),
                (&hf.inputs(), &hf.outputs()),
                plan.variant,
                lf_kind,
                plan.pairing.hf,
                &plan.config,
                seed,
            )?;
            Trained::Mf(Box::new(m))
        }
        (Some(_), None) => return Err(Error::config("pairing", "multi-fidelity pairing needs an LF dataset")),
        (None, _) => train_model(plan.pairing.hf, &hf.inputs(), &hf.outputs(), &plan.config.hf, seed)?.0,
    };
    let id = evaluate_model(&model, test_id, alpha)?;
    let ood = evaluate_model(&model, test_ood, alpha)?;
    Ok((model, id, ood))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub total_cost: f64,
    pub fractions: Vec<f64>,
    pub c_hf: f64,
    pub c_lf: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_cost > 0.0 && self.total_cost.is_finite()) {
            return Err(Error::config("sweep.total_cost", "must be positive"));
        }
        if self.fractions.is_empty() {
            return Err(Error::config("sweep.fractions", "must not be empty"));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::config("sweep.fractions", format!("{f} is outside [0, 1]")));
        }
        BudgetSpec {
            n_hf: 0,
            n_lf: 0,
            c_hf: self.c_hf,
            c_lf: self.c_lf,
        }
        .validate()
    }
}

/// Allocate, train and score one sweep row. Interior rows train the MF
/// model of `plan`; `frac = 0` trains an HF-only model of kind
/// `plan.pairing.hf`; `frac = 1` trains an LF-only model and scores it on
/// the HF test sets.
#[allow(clippy::too_many_arguments)]
pub fn sweep_row(
    spec: &SweepSpec,
    frac: f64,
    suite: Suite,
    sizes: &BenchmarkSizes,
    oracle: &OracleConfig,
    plan: &ModelPlan,
    alpha: f64,
    seed: u64,
) -> Result<ReportRow> {
    let (n_lf, n_hf) = allocate(spec.total_cost, frac, spec.c_hf, spec.c_lf);
    let budget = BudgetSpec {
        n_hf,
        n_lf,
        c_hf: spec.c_hf,
        c_lf: spec.c_lf,
    };
    let mut row = ReportRow {
        variant: plan.label(),
        n_lf,
        n_hf,
        total_cost: total_cost(&budget),
        lf_fraction: Some(frac),
        status: RowStatus::Ok,
        id: None,
        ood: None,
        seed,
    };
    let lf_kind = plan.pairing.lf.unwrap_or(plan.pairing.hf);
    if n_hf == 0 {
        if n_lf == 0 || !suite.has_lf() || frac < 1.0 {
            row.status = RowStatus::Degenerate;
            return Ok(row);
        }
        let sizes = BenchmarkSizes {
            n_lf,
            n_hf: 0,
            ..*sizes
        };
        let bench = build_benchmark(suite, &sizes, oracle, seed)?;
        let lf = bench.lf.as_ref().expect("suite has LF data");
        let (model, _) = train_model(lf_kind, &lf.inputs(), &lf.outputs(), &plan.config.lf, seed)?;
        row.status = RowStatus::LfOnly;
        row.id = Some(evaluate_model(&model, &bench.test_id, alpha)?);
        row.ood = Some(evaluate_model(&model, &bench.test_ood, alpha)?);
        return Ok(row);
    }
    let sizes = BenchmarkSizes { n_lf, n_hf, ..*sizes };
    let bench = build_benchmark(suite, &sizes, oracle, seed)?;
    let row_plan = if n_lf == 0 || bench.lf.is_none() {
        ModelPlan {
            pairing: Pairing::single(plan.pairing.hf),
            ..plan.clone()
        }
    } else {
        plan.clone()
    };
    let (_, id, ood) = train_and_score(
        &row_plan,
        bench.lf.as_ref(),
        &bench.hf,
        &bench.test_id,
        &bench.test_ood,
        alpha,
        seed,
    )?;
    row.id = Some(id);
    row.ood = Some(ood);
    Ok(row)
}

/// Every grid point in order.
#[allow(clippy::too_many_arguments)]
pub fn budget_sweep(
    spec: &SweepSpec,
    suite: Suite,
    sizes: &BenchmarkSizes,
    oracle: &OracleConfig,
    plan: &ModelPlan,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    spec.validate()?;
    spec.fractions
        .iter()
        .map(|&f| sweep_row(spec, f, suite, sizes, oracle, plan, alpha, seed))
        .collect()
}
