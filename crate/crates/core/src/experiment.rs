//! Config-driven experiment runs: dataset generation, training of one model
//! row per seed, budget sweeps, and aggregation of the resulting tables.
//!
//! Output layout of a run directory:
//!
//! ```text
//! manifest.json          config hash, git describe, wall times
//! metrics.csv | sweep.csv
//! seed-<s>/model/        trained model files (run only)
//! summary.csv, long.csv  written by `report`
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{build_benchmark, Benchmark, BenchmarkSizes, OracleConfig, Suite};
use crate::error::{Error, Result};
use crate::multifidelity::{
    default_costs, rows_to_csv, sweep_row, total_cost, train_and_score, BudgetSpec, MfConfig, MfVariant, ModelPlan,
    Pairing, ReportRow, RowStatus, StageConfig, SweepSpec,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DETERMINISTIC_ENV: &str = "MFVEB_DETERMINISTIC";

/// Per-path costs; defaults depend on the suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Costs {
    pub c_hf: f64,
    pub c_lf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub total_cost: f64,
    pub fractions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub suite: Suite,
    pub pairing: Pairing,
    #[serde(default = "default_variant")]
    pub variant: MfVariant,
    pub seeds: Vec<u64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Directory written by `gen-data`; datasets are generated when absent.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    pub data: BenchmarkSizes,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub costs: Option<Costs>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub lf: Option<StageConfig>,
    #[serde(default)]
    pub hf: Option<StageConfig>,
}

fn default_variant() -> MfVariant {
    MfVariant::ResidualHidden
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(toml_field(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        let d = &self.data;
        if d.steps < 2 {
            return Err(Error::config("data.steps", "must be at least 2"));
        }
        if d.n_control < 3 {
            return Err(Error::config("data.n_control", "must be at least 3"));
        }
        if d.n_test_id == 0 {
            return Err(Error::config("data.n_test_id", "must be at least 1"));
        }
        if d.n_test_ood == 0 {
            return Err(Error::config("data.n_test_ood", "must be at least 1"));
        }
        self.oracle.validate()?;
        if let Some(c) = self.costs {
            BudgetSpec {
                n_hf: 0,
                n_lf: 0,
                c_hf: c.c_hf,
                c_lf: c.c_lf,
            }
            .validate()
            .map_err(|e| match e {
                Error::Config { field, detail } => Error::config(field.replace("budget.", "costs."), detail),
                other => other,
            })?;
        }
        if let Some(s) = &self.sweep {
            self.sweep_spec_from(s).validate()?;
        }
        if self.pairing.is_multi_fidelity() && !self.suite.has_lf() {
            return Err(Error::config(
                "pairing",
                format!("suite {} has no low-fidelity data", self.suite),
            ));
        }
        if self.sweep.is_none() && self.data_dir.is_none() {
            if d.n_hf == 0 {
                return Err(Error::config("data.n_hf", "must be at least 1"));
            }
            if self.pairing.is_multi_fidelity() && d.n_lf == 0 {
                return Err(Error::config("data.n_lf", "multi-fidelity pairing needs LF paths"));
            }
        }
        self.hf
            .as_ref()
            .ok_or_else(|| Error::config("hf", "stage config is required"))?
            .validate("hf")?;
        let needs_lf = self.pairing.is_multi_fidelity() || self.sweep.is_some();
        match &self.lf {
            Some(lf) => lf.validate("lf")?,
            None if needs_lf => {
                return Err(Error::config(
                    "lf",
                    "stage config is required by the pairing or the sweep",
                ));
            }
            None => {}
        }
        Ok(())
    }

    pub fn costs(&self) -> Costs {
        self.costs.unwrap_or_else(|| {
            let (c_hf, c_lf) = default_costs(self.suite);
            Costs { c_hf, c_lf }
        })
    }

    fn sweep_spec_from(&self, grid: &SweepGrid) -> SweepSpec {
        let c = self.costs();
        SweepSpec {
            total_cost: grid.total_cost,
            fractions: grid.fractions.clone(),
            c_hf: c.c_hf,
            c_lf: c.c_lf,
        }
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let grid = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::config("sweep", "section is required for a sweep"))?;
        Ok(self.sweep_spec_from(grid))
    }

    pub fn plan(&self) -> ModelPlan {
        let hf = self.hf.clone().unwrap_or_default();
        ModelPlan {
            pairing: self.pairing,
            variant: self.variant,
            config: MfConfig {
                lf: self.lf.clone().unwrap_or_else(|| hf.clone()),
                hf,
            },
        }
    }

    /// Training budget `T_c` of one run.
    pub fn run_cost(&self) -> f64 {
        let c = self.costs();
        let n_lf = if self.pairing.is_multi_fidelity() {
            self.data.n_lf
        } else {
            0
        };
        total_cost(&BudgetSpec {
            n_hf: self.data.n_hf,
            n_lf,
            c_hf: c.c_hf,
            c_lf: c.c_lf,
        })
    }

    /// Hex SHA-256 of the canonical JSON form; any field change alters it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seeds = vec![s];
        }
        if let Some(o) = &ov.out {
            self.out = Some(o.clone());
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| Error::config("out", "no output directory in the config or on the command line"))
    }
}

/// Best-effort dotted key path from a TOML error message.
fn toml_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".to_string()
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub jobs: usize,
    pub deterministic: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            deterministic: true,
        }
    }
}

/// Reads the determinism switch; unset means on. All reductions in this crate
/// run in a fixed order regardless, so the flag is only recorded.
pub fn deterministic_from_env() -> Result<bool> {
    match std::env::var(DETERMINISTIC_ENV) {
        Err(_) => Ok(true),
        Ok(v) => match v.trim() {
            "" | "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(Error::config(
                DETERMINISTIC_ENV,
                format!("expected 0 or 1, got `{other}`"),
            )),
        },
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::UnknownSuite(_) => 2,
        Error::Divergence { .. } | Error::NonFinite { .. } => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 1,
    }
}

/// Text printed by `--dry-run`.
pub fn describe(cfg: &ExperimentConfig, verb: &str) -> Result<String> {
    let c = cfg.costs();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "suite {}  pairing {}  seeds {:?}",
        cfg.suite,
        cfg.plan().label(),
        cfg.seeds
    );
    let _ = writeln!(s, "c_hf {}  c_lf {}", c.c_hf, c.c_lf);
    if verb == "sweep" {
        let spec = cfg.sweep_spec()?;
        let _ = writeln!(s, "fraction n_lf n_hf T_c");
        for &f in &spec.fractions {
            let (n_lf, n_hf) = crate::multifidelity::allocate(spec.total_cost, f, spec.c_hf, spec.c_lf);
            let t = total_cost(&BudgetSpec {
                n_hf,
                n_lf,
                c_hf: spec.c_hf,
                c_lf: spec.c_lf,
            });
            let _ = writeln!(s, "{f} {n_lf} {n_hf} {t}");
        }
    } else {
        let n_lf = if cfg.pairing.is_multi_fidelity() {
            cfg.data.n_lf
        } else {
            0
        };
        let _ = writeln!(s, "n_lf {n_lf}  n_hf {}  T_c {}", cfg.data.n_hf, cfg.run_cost());
    }
    let _ = write!(
        s,
        "test paths {} id / {} ood, {} steps",
        cfg.data.n_test_id, cfg.data.n_test_ood, cfg.data.steps
    );
    Ok(s)
}

/// Run `f` over `items` on up to `jobs` threads. Job `j` takes every item
/// whose index is `j` modulo `jobs`; results come back in item order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let f = &f;
                scope.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .skip(j)
                        .step_by(jobs)
                        .map(|(i, it)| (i, f(it)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobTiming {
    pub seed: u64,
    pub lf_fraction: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub verb: String,
    pub version: String,
    pub config_hash: String,
    pub git_describe: String,
    pub deterministic: bool,
    pub jobs: usize,
    pub wall_seconds: f64,
    pub timings: Vec<JobTiming>,
    pub config: ExperimentConfig,
}

fn write_manifest(out: &Path, m: &Manifest) -> Result<()> {
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::format(&path, e.to_string()))?;
    write_text(&path, &text)
}

fn benchmark_for(cfg: &ExperimentConfig, seed: u64) -> Result<Benchmark> {
    match &cfg.data_dir {
        Some(dir) => Ok(Benchmark::read(&seed_dir(dir, seed))?.0),
        None => build_benchmark(cfg.suite, &cfg.data, &cfg.oracle, seed),
    }
}

/// Write the datasets of every seed to `out/seed-<s>/`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<()> {
    let results = par_map(&cfg.seeds, opts.jobs, |&seed| {
        build_benchmark(cfg.suite, &cfg.data, &cfg.oracle, seed)?.write(&seed_dir(out, seed), &cfg.data, &cfg.oracle)
    });
    results.into_iter().collect()
}

/// Outcome of `run` or `sweep`: the table rows and where they were written.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub table: PathBuf,
}

/// Train and score the configured model for every seed; writes
/// `metrics.csv`, model files and the manifest under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<RunOutput> {
    let start = Instant::now();
    let plan = cfg.plan();
    let c = cfg.costs();
    let results = par_map(&cfg.seeds, opts.jobs, |&seed| -> Result<(ReportRow, f64)> {
        let t0 = Instant::now();
        let bench = benchmark_for(cfg, seed)?;
        let lf = if plan.pairing.is_multi_fidelity() {
            bench.lf.as_ref()
        } else {
            None
        };
        let (model, id, ood) = train_and_score(&plan, lf, &bench.hf, &bench.test_id, &bench.test_ood, cfg.alpha, seed)?;
        model.save(&seed_dir(out, seed).join("model"))?;
        let n_lf = lf.map_or(0, |d| d.len());
        let row = ReportRow {
            variant: plan.label(),
            n_lf,
            n_hf: bench.hf.len(),
            total_cost: total_cost(&BudgetSpec {
                n_hf: bench.hf.len(),
                n_lf,
                c_hf: c.c_hf,
                c_lf: c.c_lf,
            }),
            lf_fraction: None,
            status: RowStatus::Ok,
            id: Some(id),
            ood: Some(ood),
            seed,
        };
        Ok((row, t0.elapsed().as_secs_f64()))
    });
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, &seed) in results.into_iter().zip(&cfg.seeds) {
        let (row, secs) = r?;
        rows.push(row);
        timings.push(JobTiming {
            seed,
            lf_fraction: None,
            wall_seconds: secs,
        });
    }
    let table = out.join("metrics.csv");
    write_text(&table, &rows_to_csv(&rows))?;
    write_manifest(out, &manifest("run", cfg, opts, start, timings))?;
    Ok(RunOutput { rows, table })
}

/// Budget sweep over every seed and grid fraction; writes `sweep.csv`
/// ordered by LF fraction, then seed.
pub fn sweep(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<RunOutput> {
    let start = Instant::now();
    let spec = cfg.sweep_spec()?;
    let plan = cfg.plan();
    let mut items: Vec<(f64, u64)> = Vec::new();
    for &f in &spec.fractions {
        for &s in &cfg.seeds {
            items.push((f, s));
        }
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let results = par_map(&items, opts.jobs, |&(frac, seed)| -> Result<(ReportRow, f64)> {
        let t0 = Instant::now();
        let row = sweep_row(&spec, frac, cfg.suite, &cfg.data, &cfg.oracle, &plan, cfg.alpha, seed)?;
        Ok((row, t0.elapsed().as_secs_f64()))
    });
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, &(frac, seed)) in results.into_iter().zip(&items) {
        let (row, secs) = r?;
        rows.push(row);
        timings.push(JobTiming {
            seed,
            lf_fraction: Some(frac),
            wall_seconds: secs,
        });
    }
    let table = out.join("sweep.csv");
    write_text(&table, &rows_to_csv(&rows))?;
    write_manifest(out, &manifest("sweep", cfg, opts, start, timings))?;
    Ok(RunOutput { rows, table })
}

fn manifest(verb: &str, cfg: &ExperimentConfig, opts: RunOptions, start: Instant, timings: Vec<JobTiming>) -> Manifest {
    Manifest {
        verb: verb.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        git_describe: git_describe(),
        deterministic: opts.deterministic,
        jobs: opts.jobs,
        wall_seconds: start.elapsed().as_secs_f64(),
        timings,
        config: cfg.clone(),
    }
}

/// Metric columns of a metrics table, in file order.
pub const METRICS: [&str; 10] = [
    "eps_r_id",
    "eps_r_ood",
    "tll_id",
    "tll_ood",
    "wa_id",
    "wa_ood",
    "picp_id",
    "picp_ood",
    "mpiw_id",
    "mpiw_ood",
];

/// One parsed row of `metrics.csv` or `sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub variant: String,
    pub n_lf: usize,
    pub n_hf: usize,
    pub total_cost: f64,
    pub lf_fraction: Option<f64>,
    pub seed: u64,
    pub status: String,
    pub values: [Option<f64>; 10],
}

#[derive(Deserialize)]
struct CsvRow {
    variant: String,
    n_lf: usize,
    n_hf: usize,
    #[serde(rename = "T_c")]
    total_cost: f64,
    eps_r_id: Option<f64>,
    eps_r_ood: Option<f64>,
    tll_id: Option<f64>,
    tll_ood: Option<f64>,
    wa_id: Option<f64>,
    wa_ood: Option<f64>,
    picp_id: Option<f64>,
    picp_ood: Option<f64>,
    mpiw_id: Option<f64>,
    mpiw_ood: Option<f64>,
    seed: u64,
    lf_fraction: Option<f64>,
    status: String,
}

pub fn parse_table(text: &str, origin: &Path) -> Result<Vec<TableRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<CsvRow>()
        .map(|r| {
            let r = r.map_err(|e| Error::format(origin, e.to_string()))?;
            Ok(TableRow {
                variant: r.variant,
                n_lf: r.n_lf,
                n_hf: r.n_hf,
                total_cost: r.total_cost,
                lf_fraction: r.lf_fraction,
                seed: r.seed,
                status: r.status,
                values: [
                    r.eps_r_id,
                    r.eps_r_ood,
                    r.tll_id,
                    r.tll_ood,
                    r.wa_id,
                    r.wa_ood,
                    r.picp_id,
                    r.picp_ood,
                    r.mpiw_id,
                    r.mpiw_ood,
                ],
            })
        })
        .collect()
}

fn collect_tables(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_tables(&p, found)?;
        } else if matches!(
            p.file_name().and_then(|n| n.to_str()),
            Some("metrics.csv" | "sweep.csv")
        ) {
            found.push(p);
        }
    }
    Ok(())
}

/// Every `metrics.csv` and `sweep.csv` below `dir`.
pub fn load_tables(dir: &Path) -> Result<Vec<TableRow>> {
    let mut files = Vec::new();
    collect_tables(dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no metrics.csv or sweep.csv found"),
        ));
    }
    let mut rows = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        rows.extend(parse_table(&text, &f)?);
    }
    Ok(rows)
}

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, count: n })
    }
}

/// Rows sharing variant, path counts and LF fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub n_lf: usize,
    pub n_hf: usize,
    pub total_cost: f64,
    pub lf_fraction: Option<f64>,
    pub seeds: usize,
    pub stats: [Option<Stat>; 10],
}

fn sort_key(fraction: Option<f64>) -> (bool, f64) {
    (fraction.is_some(), fraction.unwrap_or(0.0))
}

fn cmp_rows(a: (&str, usize, usize, Option<f64>), b: (&str, usize, usize, Option<f64>)) -> std::cmp::Ordering {
    let (fa, fb) = (sort_key(a.3), sort_key(b.3));
    fa.0.cmp(&fb.0)
        .then(fa.1.total_cmp(&fb.1))
        .then(a.0.cmp(b.0))
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Group rows and aggregate each metric; groups are ordered by LF fraction
/// ascending (rows without one first), then variant and path counts.
pub fn summarize(rows: &[TableRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize, usize, Option<u64>), Vec<&TableRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.variant.clone(), r.n_lf, r.n_hf, r.lf_fraction.map(f64::to_bits)))
            .or_default()
            .push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let stats = std::array::from_fn(|k| {
                let vals: Vec<f64> = g.iter().filter_map(|r| r.values[k]).collect();
                Stat::of(&vals)
            });
            SummaryRow {
                variant: first.variant.clone(),
                n_lf: first.n_lf,
                n_hf: first.n_hf,
                total_cost: first.total_cost,
                lf_fraction: first.lf_fraction,
                seeds: g.len(),
                stats,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        cmp_rows(
            (&a.variant, a.n_lf, a.n_hf, a.lf_fraction),
            (&b.variant, b.n_lf, b.n_hf, b.lf_fraction),
        )
    });
    out
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut s = String::from("variant,n_lf,n_hf,T_c,lf_fraction,n_seeds");
    for m in METRICS {
        let _ = write!(s, ",{m}_mean,{m}_std");
    }
    s.push('\n');
    for r in summary {
        let _ = write!(
            s,
            "{},{},{},{:e},{},{}",
            r.variant,
            r.n_lf,
            r.n_hf,
            r.total_cost,
            opt_cell(r.lf_fraction),
            r.seeds
        );
        for st in &r.stats {
            let _ = write!(s, ",{},{}", opt_cell(st.map(|x| x.mean)), opt_cell(st.map(|x| x.std)));
        }
        s.push('\n');
    }
    s
}

/// One line per (row, metric) with a value, for plotting.
pub fn long_csv(rows: &[TableRow]) -> String {
    let mut sorted: Vec<&TableRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        cmp_rows(
            (&a.variant, a.n_lf, a.n_hf, a.lf_fraction),
            (&b.variant, b.n_lf, b.n_hf, b.lf_fraction),
        )
        .then(a.seed.cmp(&b.seed))
    });
    let mut s = String::from("variant,lf_fraction,n_lf,n_hf,T_c,seed,metric,value\n");
    for r in sorted {
        for (m, v) in METRICS.iter().zip(&r.values) {
            if let Some(v) = v {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{:e},{},{m},{v:e}",
                    r.variant,
                    opt_cell(r.lf_fraction),
                    r.n_lf,
                    r.n_hf,
                    r.total_cost,
                    r.seed
                );
            }
        }
    }
    s
}

/// Human-readable `mean ± std` table.
pub fn summary_table(summary: &[SummaryRow]) -> String {
    let mut s = String::new();
    for r in summary {
        let frac = r.lf_fraction.map(|f| format!(" frac={f}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{} n_lf={} n_hf={}{frac} seeds={}",
            r.variant, r.n_lf, r.n_hf, r.seeds
        );
        for (m, st) in METRICS.iter().zip(&r.stats) {
            if let Some(st) = st {
                let _ = writeln!(s, "  {m:<10} {:.6} ± {:.6}", st.mean, st.std);
            }
        }
    }
    s
}

/// Aggregate every table under `dir` into `summary.csv` and `long.csv`.
pub fn report(dir: &Path) -> Result<Vec<SummaryRow>> {
    let rows = load_tables(dir)?;
    let summary = summarize(&rows);
    write_text(&dir.join("summary.csv"), &summary_csv(&summary))?;
    write_text(&dir.join("long.csv"), &long_csv(&rows))?;
    Ok(summary)
}
