//! Synthetic bi-fidelity elastoplastic benchmark: random quadratic strain
//! paths, a history-dependent stress oracle with a biased low-fidelity
//! variant, and heteroscedastic Gaussian observation noise.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::sequence::{Normalizer, Sequence, StrainPath, StressPath};

pub const COMPONENTS: usize = 3;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_CONTROL_POINTS: usize = 6;
pub const ID_RANGE: (f64, f64) = (-0.1, 0.1);
/// 25 % extrapolation beyond the in-distribution range.
pub const OOD_RANGE: (f64, f64) = (-0.125, 0.125);

/// Elastoplastic oracle parameters. Hardening: `σ_y = σ₀ + H·(ε̄ᵖ)^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub modulus: f64,
    pub sigma0: f64,
    pub hardening: f64,
    pub exponent: f64,
    /// Multiplicative (modulus, hardening) factors of the low-fidelity oracle.
    pub lf_bias: (f64, f64),
    /// Noise std `a₀ + a₁·|σ|`.
    pub noise_floor: f64,
    pub noise_slope: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            modulus: 40.0,
            sigma0: 0.5,
            hardening: 0.5,
            exponent: 0.4,
            lf_bias: (0.85, 1.15),
            noise_floor: 0.01,
            noise_slope: 0.05,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool, &str); 6] = [
            ("oracle.modulus", self.modulus > 0.0, "must be positive"),
            ("oracle.sigma0", self.sigma0 >= 0.0, "must be non-negative"),
            ("oracle.hardening", self.hardening >= 0.0, "must be non-negative"),
            (
                "oracle.exponent",
                self.exponent > 0.0 && self.exponent <= 1.0,
                "must lie in (0, 1]",
            ),
            (
                "oracle.lf_bias",
                self.lf_bias.0 > 0.0 && self.lf_bias.1 >= 0.0,
                "modulus factor must be positive",
            ),
            (
                "oracle.noise_floor",
                self.noise_floor >= 0.0 && self.noise_slope >= 0.0,
                "noise coefficients must be non-negative",
            ),
        ];
        for (field, ok, detail) in checks {
            if !ok {
                return Err(Error::config(field, detail));
            }
        }
        Ok(())
    }

    /// The biased low-fidelity configuration.
    pub fn low_fidelity(&self) -> OracleConfig {
        OracleConfig {
            modulus: self.modulus * self.lf_bias.0,
            hardening: self.hardening * self.lf_bias.1,
            ..self.clone()
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            floor: self.noise_floor,
            slope: self.noise_slope,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("oracle config serializes")
                .as_bytes(),
        )
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub floor: f64,
    pub slope: f64,
}

impl NoiseModel {
    pub fn std(&self, clean: f64) -> f64 {
        self.floor + self.slope * clean.abs()
    }
}

/// Least-squares quadratic through `(s_k, v_k)`; returns `(c0, c1, c2)`.
fn fit_quadratic(s: &[f64], v: &[f64]) -> (f64, f64, f64) {
    // Normal equations on the monomial basis; s lies in [0, 1] so the 3x3
    // system is well conditioned for a handful of points.
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for (&x, &y) in s.iter().zip(v) {
        let basis = [1.0, x, x * x];
        for i in 0..3 {
            rhs[i] += basis[i] * y;
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
        }
    }
    let c = solve3(m, rhs);
    (c[0], c[1], c[2])
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// One strain path from per-component control values (`n_control × 3`,
/// component-major rows).
pub fn strain_path_from_controls(controls: &[Vec<f64>], steps: usize, range: (f64, f64)) -> Result<StrainPath> {
    let n_control = controls.first().map_or(0, Vec::len);
    if n_control < 3 || steps < 2 {
        return Err(Error::Domain {
            func: "strain_path_from_controls",
            detail: format!("need at least 3 control points and 2 steps, got {n_control} and {steps}"),
        });
    }
    let abscissae: Vec<f64> = (0..n_control).map(|k| k as f64 / (n_control - 1) as f64).collect();
    let coeffs: Vec<(f64, f64, f64)> = controls.iter().map(|v| fit_quadratic(&abscissae, v)).collect();
    let mut data = Vec::with_capacity(steps * controls.len());
    for t in 0..steps {
        let s = t as f64 / (steps - 1) as f64;
        for &(c0, c1, c2) in &coeffs {
            data.push((c0 + s * (c1 + s * c2)).clamp(range.0, range.1));
        }
    }
    Sequence::from_flat(controls.len(), data)
}

/// Random strain paths. Path `i` draws from stream `stream + i` of `seed`, so
/// paths are independent of how many others are generated.
pub fn generate_strain_paths(
    n: usize,
    range: (f64, f64),
    steps: usize,
    n_control: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<StrainPath>> {
    if !(range.0 < range.1) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(Error::Domain {
            func: "generate_strain_paths",
            detail: format!("invalid range ({}, {})", range.0, range.1),
        });
    }
    (0..n)
        .map(|i| {
            let mut rng = RngStream::new(seed, stream + i as u64);
            let controls: Vec<Vec<f64>> = (0..COMPONENTS)
                .map(|_| (0..n_control).map(|_| rng.uniform_range(range.0, range.1)).collect())
                .collect();
            strain_path_from_controls(&controls, steps, range)
        })
        .collect()
}

/// Plastic multiplier `Δγ ≥ 0` solving `|σ_tr| − E·Δγ − σ_y(ε̄ᵖ + Δγ) = 0`.
fn plastic_increment(cfg: &OracleConfig, trial: f64, eps_p: f64) -> f64 {
    let residual = |dg: f64| trial - cfg.modulus * dg - yield_stress(cfg, eps_p + dg);
    let mut lo = 0.0;
    let mut hi = residual(0.0) / cfg.modulus;
    // residual(lo) > 0 ≥ residual(hi); bisect until the bracket stops shrinking.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn yield_stress(cfg: &OracleConfig, eps_p: f64) -> f64 {
    if eps_p <= 0.0 {
        cfg.sigma0
    } else {
        cfg.sigma0 + cfg.hardening * eps_p.powf(cfg.exponent)
    }
}

/// Integrate decoupled per-component 1-D return mapping along `path`.
pub fn hf_oracle(cfg: &OracleConfig, path: &StrainPath) -> StressPath {
    let dim = path.dim();
    let mut sigma = vec![0.0; dim];
    let mut eps_prev = vec![0.0; dim];
    let mut eps_p = vec![0.0; dim];
    let mut out = Vec::with_capacity(path.data().len());
    for step in path.steps() {
        for j in 0..dim {
            let trial = sigma[j] + cfg.modulus * (step[j] - eps_prev[j]);
            let f = trial.abs() - yield_stress(cfg, eps_p[j]);
            if f > 0.0 {
                let dg = plastic_increment(cfg, trial.abs(), eps_p[j]);
                sigma[j] = trial - cfg.modulus * dg * trial.signum();
                eps_p[j] += dg;
            } else {
                sigma[j] = trial;
            }
            eps_prev[j] = step[j];
            out.push(sigma[j]);
        }
    }
    Sequence::from_flat(dim.max(1), out).expect("oracle output shape")
}

pub fn lf_oracle(cfg: &OracleConfig, path: &StrainPath) -> StressPath {
    hf_oracle(&cfg.low_fidelity(), path)
}

/// Noisy observation of `clean` and the per-element true std.
pub fn add_noise(clean: &StressPath, noise: NoiseModel, rng: &mut RngStream) -> (StressPath, Sequence) {
    let std = clean.map(|v| noise.std(v));
    let noisy = clean.zip_with(&std, |c, s| c + s * rng.normal()).expect("same shape");
    (noisy, std)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Lf,
    Hf,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Lf => "lf",
            Fidelity::Hf => "hf",
        })
    }
}

/// Benchmark scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Suite {
    /// Noisy single fidelity.
    S1,
    /// Clean LF + clean HF.
    S2,
    /// Noisy LF + noisy HF.
    S3,
    /// Noisy LF + clean HF.
    S4,
}

impl Suite {
    pub fn has_lf(self) -> bool {
        self != Suite::S1
    }

    pub fn lf_noisy(self) -> bool {
        matches!(self, Suite::S3 | Suite::S4)
    }

    pub fn hf_noisy(self) -> bool {
        matches!(self, Suite::S1 | Suite::S3)
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Suite::S1),
            "S2" => Ok(Suite::S2),
            "S3" => Ok(Suite::S3),
            "S4" => Ok(Suite::S4),
            _ => Err(Error::UnknownSuite(s.to_string())),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub path_id: usize,
    pub fidelity: Fidelity,
    pub strain: StrainPath,
    pub stress: StressPath,
    pub true_std: Option<Sequence>,
    pub replicate: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    path_id: usize,
    fidelity: Fidelity,
    strain: Vec<Vec<f64>>,
    stress: Vec<Vec<f64>>,
    true_std: Option<Vec<Vec<f64>>>,
    replicate: Option<usize>,
}

impl From<&PathRecord> for RecordJson {
    fn from(r: &PathRecord) -> Self {
        RecordJson {
            path_id: r.path_id,
            fidelity: r.fidelity,
            strain: r.strain.to_steps(),
            stress: r.stress.to_steps(),
            true_std: r.true_std.as_ref().map(Sequence::to_steps),
            replicate: r.replicate,
        }
    }
}

impl TryFrom<RecordJson> for PathRecord {
    type Error = Error;

    fn try_from(r: RecordJson) -> Result<Self> {
        Ok(PathRecord {
            path_id: r.path_id,
            fidelity: r.fidelity,
            strain: Sequence::from_steps(&r.strain)?,
            stress: Sequence::from_steps(&r.stress)?,
            true_std: r.true_std.as_deref().map(Sequence::from_steps).transpose()?,
            replicate: r.replicate,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub oracle_hash: String,
}

/// Paths of one fidelity. Test datasets hold clean means in `records` (with
/// `replicate: None`) and any noisy draws in `replicates`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub fidelity: Fidelity,
    pub noisy: bool,
    pub records: Vec<PathRecord>,
    pub replicates: Vec<PathRecord>,
    pub provenance: Provenance,
}

/// Per-component input/output standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub input: Normalizer,
    pub output: Normalizer,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn inputs(&self) -> Vec<StrainPath> {
        self.records.iter().map(|r| r.strain.clone()).collect()
    }

    pub fn outputs(&self) -> Vec<StressPath> {
        self.records.iter().map(|r| r.stress.clone()).collect()
    }

    /// Ground-truth std per path; zeros where the data are clean.
    pub fn true_stds(&self) -> Vec<Sequence> {
        self.records
            .iter()
            .map(|r| {
                r.true_std
                    .clone()
                    .unwrap_or_else(|| Sequence::zeros(r.stress.len(), r.stress.dim()))
            })
            .collect()
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        Ok(DatasetStats {
            input: Normalizer::fit(self.records.iter().map(|r| &r.strain))?,
            output: Normalizer::fit(self.records.iter().map(|r| &r.stress))?,
        })
    }

    /// First `n` paths (replicates of dropped paths are dropped too).
    pub fn take(&self, n: usize) -> Dataset {
        let records: Vec<PathRecord> = self.records.iter().take(n).cloned().collect();
        let keep: std::collections::HashSet<usize> = records.iter().map(|r| r.path_id).collect();
        Dataset {
            records,
            replicates: self
                .replicates
                .iter()
                .filter(|r| keep.contains(&r.path_id))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// JSON Lines, clean records first, then replicates.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in self.records.iter().chain(&self.replicates) {
            let line = serde_json::to_string(&RecordJson::from(r)).map_err(|e| Error::format(path, e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, noisy: bool, provenance: Provenance) -> Result<Dataset> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let mut replicates = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RecordJson =
                serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            let rec = PathRecord::try_from(raw)?;
            if rec.replicate.is_some() {
                replicates.push(rec);
            } else {
                records.push(rec);
            }
        }
        let fidelity = records.first().map_or(Fidelity::Hf, |r| r.fidelity);
        Ok(Dataset {
            fidelity,
            noisy,
            records,
            replicates,
            provenance,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSizes {
    #[serde(default)]
    pub n_lf: usize,
    #[serde(default)]
    pub n_hf: usize,
    #[serde(default = "default_test")]
    pub n_test_id: usize,
    #[serde(default = "default_test")]
    pub n_test_ood: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_control")]
    pub n_control: usize,
}

fn default_test() -> usize {
    100
}
fn default_replicates() -> usize {
    100
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_control() -> usize {
    DEFAULT_CONTROL_POINTS
}

impl Default for BenchmarkSizes {
    fn default() -> Self {
        BenchmarkSizes {
            n_lf: 0,
            n_hf: 0,
            n_test_id: default_test(),
            n_test_ood: default_test(),
            replicates: default_replicates(),
            steps: DEFAULT_STEPS,
            n_control: DEFAULT_CONTROL_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub suite: Suite,
    pub lf: Option<Dataset>,
    pub hf: Dataset,
    pub test_id: Dataset,
    pub test_ood: Dataset,
}

/// Stream-id namespaces; path `i` of a role uses `role << 32 | i`.
mod role {
    pub const LF_STRAIN: u64 = 1 << 32;
    pub const HF_STRAIN: u64 = 2 << 32;
    pub const ID_STRAIN: u64 = 3 << 32;
    pub const OOD_STRAIN: u64 = 4 << 32;
    pub const LF_NOISE: u64 = 5 << 32;
    pub const HF_NOISE: u64 = 6 << 32;
    pub const ID_REPLICATE: u64 = 7 << 32;
    pub const OOD_REPLICATE: u64 = 8 << 32;
}

fn training_set(
    fidelity: Fidelity,
    strains: Vec<StrainPath>,
    oracle: &OracleConfig,
    noisy: bool,
    seed: u64,
    noise_role: u64,
) -> Dataset {
    let records = strains
        .into_iter()
        .enumerate()
        .map(|(i, strain)| {
            let clean = match fidelity {
                Fidelity::Hf => hf_oracle(oracle, &strain),
                Fidelity::Lf => lf_oracle(oracle, &strain),
            };
            let (stress, true_std) = if noisy {
                let mut rng = RngStream::new(seed, noise_role + i as u64);
                let (y, s) = add_noise(&clean, oracle.noise(), &mut rng);
                (y, Some(s))
            } else {
                (clean, None)
            };
            PathRecord {
                path_id: i,
                fidelity,
                strain,
                stress,
                true_std,
                replicate: None,
            }
        })
        .collect();
    Dataset {
        fidelity,
        noisy,
        records,
        replicates: Vec::new(),
        provenance: Provenance {
            seed,
            oracle_hash: oracle.hash(),
        },
    }
}

fn test_set(
    strains: Vec<StrainPath>,
    oracle: &OracleConfig,
    noisy: bool,
    replicates: usize,
    seed: u64,
    replicate_role: u64,
) -> Dataset {
    let mut records = Vec::with_capacity(strains.len());
    let mut reps = Vec::new();
    for (i, strain) in strains.into_iter().enumerate() {
        let clean = hf_oracle(oracle, &strain);
        let true_std = noisy.then(|| clean.map(|v| oracle.noise().std(v)));
        if noisy {
            let mut rng = RngStream::new(seed, replicate_role + i as u64);
            for k in 0..replicates {
                let (y, s) = add_noise(&clean, oracle.noise(), &mut rng);
                reps.push(PathRecord {
                    path_id: i,
                    fidelity: Fidelity::Hf,
                    strain: strain.clone(),
                    stress: y,
                    true_std: Some(s),
                    replicate: Some(k),
                });
            }
        }
        records.push(PathRecord {
            path_id: i,
            fidelity: Fidelity::Hf,
            strain,
            stress: clean,
            true_std,
            replicate: None,
        });
    }
    Dataset {
        fidelity: Fidelity::Hf,
        noisy,
        records,
        replicates: reps,
        provenance: Provenance {
            seed,
            oracle_hash: oracle.hash(),
        },
    }
}

/// Build the four datasets of a suite. Test strain paths and clean means
/// depend only on `seed`, not on the suite.
pub fn build_benchmark(suite: Suite, sizes: &BenchmarkSizes, oracle: &OracleConfig, seed: u64) -> Result<Benchmark> {
    oracle.validate()?;
    let gen = |n, range, role| generate_strain_paths(n, range, sizes.steps, sizes.n_control, seed, role);
    let lf = if suite.has_lf() {
        let strains = gen(sizes.n_lf, ID_RANGE, role::LF_STRAIN)?;
        Some(training_set(
            Fidelity::Lf,
            strains,
            oracle,
            suite.lf_noisy(),
            seed,
            role::LF_NOISE,
        ))
    } else {
        None
    };
    let hf_strains = gen(sizes.n_hf, ID_RANGE, role::HF_STRAIN)?;
    let hf = training_set(Fidelity::Hf, hf_strains, oracle, suite.hf_noisy(), seed, role::HF_NOISE);
    let test_id = test_set(
        gen(sizes.n_test_id, ID_RANGE, role::ID_STRAIN)?,
        oracle,
        suite.hf_noisy(),
        sizes.replicates,
        seed,
        role::ID_REPLICATE,
    );
    let test_ood = test_set(
        gen(sizes.n_test_ood, OOD_RANGE, role::OOD_STRAIN)?,
        oracle,
        suite.hf_noisy(),
        sizes.replicates,
        seed,
        role::OOD_REPLICATE,
    );
    Ok(Benchmark {
        suite,
        lf,
        hf,
        test_id,
        test_ood,
    })
}

/// Sidecar manifest written next to the JSONL files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub suite: Suite,
    pub seed: u64,
    pub oracle: OracleConfig,
    pub oracle_hash: String,
    pub steps: usize,
    pub id_range: (f64, f64),
    pub ood_range: (f64, f64),
    pub sizes: BenchmarkSizes,
    pub lf_stats: Option<DatasetStats>,
    pub hf_stats: Option<DatasetStats>,
}

impl Benchmark {
    /// Write `lf.jsonl` (if any), `hf.jsonl`, `test_id.jsonl`,
    /// `test_ood.jsonl` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, sizes: &BenchmarkSizes, oracle: &OracleConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(lf) = &self.lf {
            lf.write_jsonl(&dir.join("lf.jsonl"))?;
        }
        self.hf.write_jsonl(&dir.join("hf.jsonl"))?;
        self.test_id.write_jsonl(&dir.join("test_id.jsonl"))?;
        self.test_ood.write_jsonl(&dir.join("test_ood.jsonl"))?;
        let stats = |d: &Dataset| if d.is_empty() { Ok(None) } else { d.stats().map(Some) };
        let manifest = DatasetManifest {
            suite: self.suite,
            seed: self.hf.provenance.seed,
            oracle: oracle.clone(),
            oracle_hash: oracle.hash(),
            steps: sizes.steps,
            id_range: ID_RANGE,
            ood_range: OOD_RANGE,
            sizes: sizes.clone(),
            lf_stats: self.lf.as_ref().map(stats).transpose()?.flatten(),
            hf_stats: stats(&self.hf)?,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<(Benchmark, DatasetManifest)> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let prov = Provenance {
            seed: manifest.seed,
            oracle_hash: manifest.oracle_hash.clone(),
        };
        let suite = manifest.suite;
        let lf = if suite.has_lf() {
            let mut d = Dataset::read_jsonl(&dir.join("lf.jsonl"), suite.lf_noisy(), prov.clone())?;
            d.fidelity = Fidelity::Lf;
            Some(d)
        } else {
            None
        };
        let hf = Dataset::read_jsonl(&dir.join("hf.jsonl"), suite.hf_noisy(), prov.clone())?;
        let test_id = Dataset::read_jsonl(&dir.join("test_id.jsonl"), suite.hf_noisy(), prov.clone())?;
        let test_ood = Dataset::read_jsonl(&dir.join("test_ood.jsonl"), suite.hf_noisy(), prov)?;
        Ok((
            Benchmark {
                suite,
                lf,
                hf,
                test_id,
                test_ood,
            },
            manifest,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_fit_recovers_exact_quadratic() {
        let s: Vec<f64> = (0..6).map(|k| k as f64 / 5.0).collect();
        let v: Vec<f64> = s.iter().map(|x| 0.3 - 0.2 * x + 0.7 * x * x).collect();
        let (a, b, c) = fit_quadratic(&s, &v);
        assert!((a - 0.3).abs() < 1e-12 && (b + 0.2).abs() < 1e-12 && (c - 0.7).abs() < 1e-12);
    }

    #[test]
    fn constant_controls_give_constant_path() {
        let controls = vec![vec![0.05; 6], vec![-0.02; 6], vec![0.0; 6]];
        let p = strain_path_from_controls(&controls, 100, ID_RANGE).unwrap();
        for step in p.steps() {
            assert!((step[0] - 0.05).abs() < 1e-15);
            assert!((step[1] + 0.02).abs() < 1e-15);
            assert!(step[2].abs() < 1e-15);
        }
    }

    #[test]
    fn suite_parsing() {
        assert_eq!("s3".parse::<Suite>().unwrap(), Suite::S3);
        assert!(matches!("S9".parse::<Suite>(), Err(Error::UnknownSuite(_))));
    }

    #[test]
    fn oracle_validation() {
        let bad = OracleConfig {
            exponent: 1.5,
            ..OracleConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "oracle.exponent"));
        OracleConfig::default().validate().unwrap();
    }
}
