use mfveb::experiment::{summarize, ExperimentConfig, Stat, TableRow};
use proptest::prelude::*;

const BASE: &str = r#"
schema_version = 1
suite = "S2"
pairing = "rnn+rnn"
variant = "residual-hidden"
seeds = [1, 2]

[data]
n_lf = 40
n_hf = 10

[lf.train]
epochs = 10
lr = 1e-2

[hf.train]
epochs = 10
lr = 1e-2
"#;

fn base() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(BASE).unwrap()
}

#[test]
fn hash_ignores_layout_but_not_values() {
    let reordered = r#"
seeds = [1, 2]
schema_version = 1
pairing = "rnn+rnn"
suite = "S2"

[hf.train]
lr = 0.01
epochs = 10

[lf.train]
epochs = 10
lr = 1e-2

[data]
n_hf = 10
n_lf = 40
"#;
    assert_eq!(
        base().hash(),
        ExperimentConfig::from_toml_str(reordered).unwrap().hash()
    );
    assert_eq!(base().hash().len(), 64);
}

#[derive(Clone, Debug)]
enum Edit {
    Seed(u64),
    Alpha(f64),
    HfEpochs(usize),
    LfLr(f64),
    NHf(usize),
    Modulus(f64),
    Name(String),
}

fn apply(cfg: &mut ExperimentConfig, e: &Edit) -> bool {
    let hf = cfg.hf.as_mut().unwrap();
    let lf = cfg.lf.as_mut().unwrap();
    let before = (
        cfg.seeds.clone(),
        cfg.alpha,
        hf.train.epochs,
        lf.train.lr,
        cfg.data.n_hf,
        cfg.oracle.modulus,
        cfg.name.clone(),
    );
    match e {
        Edit::Seed(s) => cfg.seeds[0] = *s,
        Edit::Alpha(a) => cfg.alpha = *a,
        Edit::HfEpochs(n) => hf.train.epochs = *n,
        Edit::LfLr(lr) => lf.train.lr = *lr,
        Edit::NHf(n) => cfg.data.n_hf = *n,
        Edit::Modulus(m) => cfg.oracle.modulus = *m,
        Edit::Name(n) => cfg.name = n.clone(),
    }
    let after = (
        cfg.seeds.clone(),
        cfg.alpha,
        cfg.hf.as_ref().unwrap().train.epochs,
        cfg.lf.as_ref().unwrap().train.lr,
        cfg.data.n_hf,
        cfg.oracle.modulus,
        cfg.name.clone(),
    );
    before != after
}

fn edit() -> impl Strategy<Value = Edit> {
    prop_oneof![
        (0u64..4).prop_map(Edit::Seed),
        prop_oneof![Just(0.05), Just(0.1), Just(0.2)].prop_map(Edit::Alpha),
        (9usize..12).prop_map(Edit::HfEpochs),
        prop_oneof![Just(1e-2), Just(1e-3)].prop_map(Edit::LfLr),
        (9usize..12).prop_map(Edit::NHf),
        prop_oneof![Just(40.0), Just(41.0)].prop_map(Edit::Modulus),
        prop_oneof![Just(String::new()), Just("x".to_string())].prop_map(Edit::Name),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hash_changes_iff_a_field_changes(e in edit()) {
        let mut cfg = base();
        let h0 = cfg.hash();
        let changed = apply(&mut cfg, &e);
        prop_assert_eq!(changed, cfg.hash() != h0);
    }
}

#[test]
fn stage_defaults_follow_the_pairing() {
    let cfg = base();
    assert!(cfg.validate().is_ok());
    assert!((cfg.run_cost() - (10.0 + 40.0 / 36.0)).abs() < 1e-12);
    let single = BASE.replace("pairing = \"rnn+rnn\"", "pairing = \"rnn\"");
    let c = ExperimentConfig::from_toml_str(&single).unwrap();
    assert_eq!(c.run_cost(), 10.0);
}

fn row(variant: &str, seed: u64, frac: Option<f64>, eps: Option<f64>) -> TableRow {
    let mut values = [None; 10];
    values[0] = eps;
    TableRow {
        variant: variant.into(),
        n_lf: 0,
        n_hf: 10,
        total_cost: 1.0,
        lf_fraction: frac,
        seed,
        status: "ok".into(),
        values,
    }
}

#[test]
fn stat_examples() {
    assert_eq!(Stat::of(&[]), None);
    let one = Stat::of(&[5.0]).unwrap();
    assert_eq!((one.mean, one.std), (5.0, 0.0));
    let two = Stat::of(&[1.0, 3.0]).unwrap();
    assert_eq!(two.mean, 2.0);
    assert_eq!(two.std, 2f64.sqrt());
}

#[test]
fn summary_groups_and_sorts() {
    let rows = vec![
        row("mf", 1, Some(1.0), None),
        row("mf", 1, Some(0.5), Some(3.0)),
        row("mf", 2, Some(0.5), Some(5.0)),
        row("mf", 1, Some(0.0), Some(4.0)),
    ];
    let s = summarize(&rows);
    let fr: Vec<Option<f64>> = s.iter().map(|r| r.lf_fraction).collect();
    assert_eq!(fr, vec![Some(0.0), Some(0.5), Some(1.0)]);
    assert_eq!(s[1].seeds, 2);
    assert_eq!(s[1].stats[0].unwrap().mean, 4.0);
    assert!(s[2].stats[0].is_none());
}
