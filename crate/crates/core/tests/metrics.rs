use mfveb::metrics::*;
use mfveb::numerics::RngStream;
use mfveb::sequence::Sequence;
use proptest::prelude::*;

fn col(v: Vec<f64>) -> Vec<Sequence> {
    vec![Sequence::from_flat(1, v).unwrap()]
}

proptest! {
    #[test]
    fn widening_intervals(
        pts in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0, -6.0f64..6.0), 1..40),
        delta in 0.001f64..3.0,
    ) {
        let lower = col(pts.iter().map(|p| p.0).collect());
        let upper = col(pts.iter().map(|p| p.0 + p.1).collect());
        let truth = col(pts.iter().map(|p| p.2).collect());
        let wl = col(pts.iter().map(|p| p.0 - delta / 2.0).collect());
        let wu = col(pts.iter().map(|p| p.0 + p.1 + delta / 2.0).collect());
        prop_assert!(picp(&wl, &wu, &truth).unwrap() >= picp(&lower, &upper, &truth).unwrap());
        let dm = mpiw(&wl, &wu).unwrap() - mpiw(&lower, &upper).unwrap();
        prop_assert!((dm - delta).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_is_a_metric(
        a in (-5.0f64..5.0, 0.0f64..3.0),
        b in (-5.0f64..5.0, 0.0f64..3.0),
        c in (-5.0f64..5.0, 0.0f64..3.0),
    ) {
        let d = |x: (f64, f64), y: (f64, f64)| wasserstein_gaussian(x.0, x.1, y.0, y.1);
        prop_assert!((d(a, b) - d(b, a)).abs() <= 1e-12);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
        prop_assert!(d(a, a) == 0.0);
    }

    #[test]
    fn tll_peaks_at_truth(mean in -3.0f64..3.0, var in 0.01f64..5.0) {
        let at = |y: f64| tll(&col(vec![mean]), &col(vec![var]), &col(vec![y])).unwrap();
        let best = at(mean);
        for k in 1..=20 {
            let off = 0.05 * k as f64;
            prop_assert!(at(mean + off) < best);
            prop_assert!(at(mean - off) < best);
        }
    }
}

#[test]
fn calibrated_intervals_cover_ninety_five_percent() {
    let mut rng = RngStream::new(17, 0);
    let n = 100_000;
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let m = rng.uniform_range(-1.0, 1.0);
        let s = rng.uniform_range(0.1, 2.0);
        mean.push(m);
        var.push(s * s);
        truth.push(m + s * rng.normal());
    }
    let (lower, upper) = gaussian_interval(
        &Sequence::from_flat(1, mean).unwrap(),
        &Sequence::from_flat(1, var).unwrap(),
        0.05,
    )
    .unwrap();
    let p = picp(&[lower], &[upper], &col(truth)).unwrap();
    assert!((0.94..=0.96).contains(&p), "{p}");
}

#[test]
fn deterministic_predictors_have_no_uncertainty_metrics() {
    let truth = col(vec![1.0, 2.0]);
    let pred = col(vec![1.1, 2.2]);
    let zeros = col(vec![0.0, 0.0]);
    let r = evaluate(
        &Scored {
            mean: &pred,
            epistemic_var: None,
            aleatoric_std: None,
        },
        &truth,
        &zeros,
        0.05,
    )
    .unwrap();
    assert!((r.eps_r - 10.0).abs() < 1e-12);
    assert!(r.tll.is_none() && r.wa.is_none() && r.picp.is_none() && r.mpiw.is_none());

    let var = col(vec![0.01, 0.01]);
    let std = col(vec![0.1, 0.1]);
    let r = evaluate(
        &Scored {
            mean: &pred,
            epistemic_var: Some(&var),
            aleatoric_std: Some(&std),
        },
        &truth,
        &zeros,
        0.05,
    )
    .unwrap();
    assert!((r.mpiw.unwrap() - 2.0 * 1.959964 * 0.1).abs() < 1e-6);
    assert_eq!(r.picp, Some(0.5));
    let wa = ((0.1f64.powi(2) + 0.01).sqrt() + (0.2f64.powi(2) + 0.01).sqrt()) / 2.0;
    assert!((r.wa.unwrap() - wa).abs() < 1e-12);
}
