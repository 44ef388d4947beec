use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mfveb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfveb"))
        .args(args)
        .env_remove("MFVEB_DETERMINISTIC")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn shipped(dir: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(workspace().join("configs").join(dir))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    v.sort();
    assert!(!v.is_empty());
    v
}

fn verb_for(path: &Path) -> &'static str {
    let text = std::fs::read_to_string(path).unwrap();
    if text.contains("[sweep]") {
        "sweep"
    } else {
        "run"
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dry_run_validates_every_shipped_config_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    for cfg in shipped("smoke").into_iter().chain(shipped("full")) {
        let out = tmp.path().join("never");
        let o = mfveb(&[verb_for(&cfg), "--config", s(&cfg), "--out", s(&out), "--dry-run"]);
        assert_eq!(code(&o), 0, "{}: {}", cfg.display(), stderr(&o));
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(text.contains("T_c"), "{text}");
        assert!(!out.exists());
    }
}

#[test]
fn smoke_configs_complete_within_five_minutes() {
    let tmp = tempfile::tempdir().unwrap();
    for cfg in shipped("smoke") {
        let out = tmp.path().join(cfg.file_stem().unwrap());
        let verb = verb_for(&cfg);
        let start = Instant::now();
        let o = mfveb(&[verb, "--config", s(&cfg), "--out", s(&out)]);
        let took = start.elapsed();
        assert_eq!(code(&o), 0, "{}: {}", cfg.display(), stderr(&o));
        assert!(took < Duration::from_secs(300), "{} took {took:?}", cfg.display());
        let table = if verb == "sweep" { "sweep.csv" } else { "metrics.csv" };
        assert!(out.join(table).exists());
        assert!(out.join("manifest.json").exists());
        let r = mfveb(&["report", s(&out)]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        assert!(out.join("summary.csv").exists() && out.join("long.csv").exists());
    }
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const S1_100: &str = r#"
schema_version = 1
suite = "S1"
pairing = "vebrnn"
seeds = [4, 5]

[data]
n_hf = 100
n_test_id = 10
n_test_ood = 10
replicates = 2
steps = 30

[hf.net]
hidden = 8

[hf.cooperative]
iterations = 1

[hf.cooperative.mean]
epochs = 15
lr = 1e-2
batch_size = 16

[hf.cooperative.variance]
epochs = 15
lr = 1e-2

[hf.cooperative.psgld]
step_size = 1e-3
step_scale = "per-datum"
burn_in = 5
epochs = 15
stride = 2
batch_size = 16
"#;

#[test]
fn vebrnn_run_populates_every_metric_for_every_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s1.toml", S1_100);
    let out = tmp.path().join("out");
    let o = mfveb(&["run", "--config", s(&cfg), "--out", s(&out), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("variant,n_lf,n_hf,T_c,eps_r_id"));
    for (line, seed) in lines[1..].iter().zip(["4", "5"]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[2], "100");
        assert!(
            cells[4..14].iter().all(|c| c.parse::<f64>().is_ok_and(f64::is_finite)),
            "{line}"
        );
        assert_eq!(cells[14], seed);
    }
    assert!(out.join("seed-4/model/vebrnn.bin").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["git_describe"].is_string());
    assert_eq!(manifest["timings"].as_array().unwrap().len(), 2);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s1.toml", S1_100);
    let run = |name: &str, jobs: &str| {
        let out = tmp.path().join(name);
        let o = mfveb(&[
            "run",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--seed",
            "9",
            "--jobs",
            jobs,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
}

#[test]
fn generated_datasets_reproduce_the_direct_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s1.toml", S1_100);
    let data = tmp.path().join("data");
    let o = mfveb(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(data.join("seed-4/hf.jsonl").exists());
    let with_data = format!("data_dir = {:?}\n{S1_100}", s(&data));
    let cfg2 = write_config(tmp.path(), "s1_data.toml", &with_data);
    let direct = tmp.path().join("direct");
    let loaded = tmp.path().join("loaded");
    for (c, out) in [(&cfg, &direct), (&cfg2, &loaded)] {
        let o = mfveb(&["run", "--config", s(c), "--out", s(out), "--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(direct.join("metrics.csv")).unwrap(),
        std::fs::read(loaded.join("metrics.csv")).unwrap()
    );
}

#[test]
fn invalid_configs_exit_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (
            "typo.toml",
            S1_100.replace("[hf.net]\nhidden = 8", "[hf.net]\nhiden = 8"),
            "hiden",
        ),
        (
            "schema.toml",
            S1_100.replace("schema_version = 1", "schema_version = 7"),
            "schema_version",
        ),
        ("seeds.toml", S1_100.replace("seeds = [4, 5]", "seeds = []"), "seeds"),
        (
            "lr.toml",
            S1_100.replace(
                "epochs = 15\nlr = 1e-2\nbatch_size = 16",
                "epochs = 15\nlr = -1.0\nbatch_size = 16",
            ),
            "hf.cooperative.mean.lr",
        ),
        (
            "pairing.toml",
            S1_100.replace("pairing = \"vebrnn\"", "pairing = \"rnn+vebrnn\""),
            "pairing",
        ),
        ("stage.toml", S1_100.split("[hf.net]").next().unwrap().to_string(), "hf"),
    ];
    for (name, body, field) in cases {
        let cfg = write_config(tmp.path(), name, &body);
        let o = mfveb(&[
            "run",
            "--config",
            s(&cfg),
            "--out",
            s(&tmp.path().join("x")),
            "--dry-run",
        ]);
        assert_eq!(code(&o), 2, "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{name}: {}", stderr(&o));
    }
    let valid = write_config(tmp.path(), "valid.toml", S1_100);
    let o = Command::new(env!("CARGO_BIN_EXE_mfveb"))
        .args(["run", "--config", s(&valid), "--dry-run"])
        .env("MFVEB_DETERMINISTIC", "maybe")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("MFVEB_DETERMINISTIC"));
}

#[test]
fn missing_inputs_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mfveb(&["run", "--config", s(&tmp.path().join("absent.toml"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let o = mfveb(&["report", s(tmp.path())]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn divergent_sampler_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let body = S1_100
        .replace("step_size = 1e-3\nstep_scale = \"per-datum\"", "step_size = 1e12")
        .replace("seeds = [4, 5]", "seeds = [4]");
    let cfg = write_config(tmp.path(), "div.toml", &body);
    let o = mfveb(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

const HEADER: &str = "variant,n_lf,n_hf,T_c,eps_r_id,eps_r_ood,tll_id,tll_ood,wa_id,wa_ood,picp_id,picp_ood,mpiw_id,mpiw_ood,seed,lf_fraction,status";

#[test]
fn report_aggregates_over_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let rows = [
        "vebrnn,0,100,5e0,1,1,-1,-1,0.1,0.1,0.9,0.9,1,1,1,,ok",
        "vebrnn,0,100,5e0,3,3,-1,-1,0.1,0.1,0.9,0.9,1,1,2,,ok",
        "rnn,0,50,2.5e0,4,5,,,,,,,,,1,,ok",
    ];
    std::fs::write(dir.join("metrics.csv"), format!("{HEADER}\n{}\n", rows.join("\n"))).unwrap();
    let o = mfveb(&["report", s(dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let body: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let veb = body.iter().find(|r| r[0] == "vebrnn").unwrap();
    let rnn = body.iter().find(|r| r[0] == "rnn").unwrap();
    assert_eq!(veb[col("eps_r_id_mean")].parse::<f64>().unwrap(), 2.0);
    let std: f64 = veb[col("eps_r_id_std")].parse().unwrap();
    assert!((std - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(veb[col("n_seeds")], "2");
    assert_eq!(rnn[col("eps_r_id_std")].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rnn[col("tll_id_mean")], "");
    let long = std::fs::read_to_string(dir.join("long.csv")).unwrap();
    assert!(long.starts_with("variant,lf_fraction,n_lf,n_hf,T_c,seed,metric,value\n"));
    assert_eq!(long.lines().count(), 1 + 10 + 10 + 2);
}

#[test]
fn report_orders_sweep_rows_by_lf_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let rows = [
        "mf,120,0,1e0,9,9,,,,,,,,,1,1e0,lf-only",
        "mf,60,10,1e0,3,3,,,,,,,,,1,5e-1,ok",
        "mf,0,20,1e0,4,4,,,,,,,,,1,0e0,ok",
        "mf,60,10,1e0,5,5,,,,,,,,,2,5e-1,ok",
    ];
    std::fs::write(dir.join("sweep.csv"), format!("{HEADER}\n{}\n", rows.join("\n"))).unwrap();
    let o = mfveb(&["report", s(dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let fractions: Vec<f64> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(fractions, vec![0.0, 0.5, 1.0]);
    let mid = summary.lines().nth(2).unwrap();
    assert!(mid.contains(",2,4e0,"), "{mid}");
}
