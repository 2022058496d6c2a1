use neuromerge::{
    data_driven_cutoff, data_free_cutoff, histogram, CutoffEvidence, PruneStep, PruneTrace,
    SaliencyHistogram, DEFAULT_BINS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn trace_of(values: &[f64]) -> PruneTrace {
    PruneTrace {
        layer_index: 0,
        steps: values
            .iter()
            .enumerate()
            .map(|(k, &s)| PruneStep {
                step: k + 1,
                kept: Some(0),
                removed: k + 1,
                saliency: s,
                test_error: None,
            })
            .collect(),
    }
}

/// 400 values near 1.2 plus 100 spread over [2, 6].
pub fn saliency_mixture(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let near = Normal::new(1.2, 0.05).unwrap();
    let mut v: Vec<f64> = (0..400).map(|_| near.sample(&mut rng)).collect();
    v.extend((0..100).map(|_| rng.random_range(2.0..=6.0)));
    v
}

#[test]
fn mixture_mode_sits_near_the_cluster() {
    for seed in 0..10 {
        let h = SaliencyHistogram::from_values(&saliency_mixture(seed), DEFAULT_BINS).unwrap();
        let c = h.mode_center();
        assert!((1.1..=1.3).contains(&c), "seed {seed}: mode center {c}");
    }
}

#[test]
fn constant_oracle_keeps_every_step() {
    let t = trace_of(&(1..=50).map(|k| k as f64).collect::<Vec<_>>());
    let r = data_driven_cutoff(&t, |_| Ok(4.0), 8, 1.0).unwrap();
    assert_eq!(r.predicted_count, 50);
    assert!(r.warnings.is_empty());
}

#[test]
fn flat_then_ramp_found_within_five_steps() {
    // Saliency flat for 400 steps, then climbing. Error flat, then a linear ramp.
    let sal: Vec<f64> = (0..500)
        .map(|k| {
            if k < 400 {
                1.0 + 1e-4 * k as f64
            } else {
                1.0 + 0.05 * (k - 400) as f64
            }
        })
        .collect();
    let t = trace_of(&sal);
    for slope in [0.05, 0.1, 0.25, 1.0] {
        let oracle = |s: usize| {
            Ok(if s <= 400 {
                7.0
            } else {
                7.0 + slope * (s - 400) as f64
            })
        };
        let truth = (0..=500)
            .filter(|&s| oracle(s).unwrap() <= 8.0)
            .max()
            .unwrap();
        let mut calls = 0;
        let r = data_driven_cutoff(
            &t,
            |s| {
                calls += 1;
                oracle(s)
            },
            12,
            1.0,
        )
        .unwrap();
        assert!(calls <= 12);
        let got = r.predicted_count;
        assert!(
            got.abs_diff(truth) <= 5,
            "slope {slope}: got {got}, truth {truth}"
        );
        assert!(got <= truth);
    }
}

#[test]
fn budget_below_three_rejected() {
    let t = trace_of(&[1.0, 2.0]);
    assert!(data_driven_cutoff(&t, |_| Ok(0.0), 2, 1.0).is_err());
    assert!(data_driven_cutoff(&PruneTrace::new(0), |_| Ok(0.0), 5, 1.0).is_err());
}

#[test]
fn oracle_errors_propagate() {
    let t = trace_of(&[1.0, 2.0, 3.0]);
    let r = data_driven_cutoff(
        &t,
        |s| {
            if s == 0 {
                Ok(0.0)
            } else {
                Err(neuromerge::Error::invalid("boom"))
            }
        },
        5,
        1.0,
    );
    assert!(r.is_err());
}

fn arb_saliencies() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..100.0, 1..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn histogram_counts_cover_trace(v in arb_saliencies(), bins in 2usize..80) {
        let h = histogram(&trace_of(&v), bins).unwrap();
        prop_assert_eq!(h.total(), v.len());
        prop_assert!(h.counts.iter().all(|&c| c <= h.counts[h.mode_bin]));
        prop_assert_eq!(h.bin_edges.len(), h.counts.len() + 1);
    }

    #[test]
    fn data_free_ignores_power_of_two_scaling(v in arb_saliencies(), e in -20i32..20) {
        let scale = 2f64.powi(e);
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let a = data_free_cutoff(&trace_of(&v), DEFAULT_BINS, 1.0).unwrap();
        let b = data_free_cutoff(&trace_of(&scaled), DEFAULT_BINS, 1.0).unwrap();
        prop_assert_eq!(a.predicted_count, b.predicted_count);
        prop_assert_eq!(a.cutoff_saliency * scale, b.cutoff_saliency);
    }

    #[test]
    fn data_free_is_monotone_in_fraction(v in arb_saliencies(), f in 0.01f64..1.0, g in 0.01f64..1.0) {
        let t = trace_of(&v);
        let (lo, hi) = if f <= g { (f, g) } else { (g, f) };
        let a = data_free_cutoff(&t, DEFAULT_BINS, lo).unwrap();
        let b = data_free_cutoff(&t, DEFAULT_BINS, hi).unwrap();
        prop_assert!(a.predicted_count <= b.predicted_count);
        prop_assert!(b.predicted_count <= t.len());
    }

    #[test]
    fn oracle_calls_never_exceed_budget(
        v in arb_saliencies(),
        errs in prop::collection::vec(0.0f64..10.0, 201),
        budget in 3usize..30,
        tol in 0.0f64..5.0,
    ) {
        let t = trace_of(&v);
        let mut calls = 0;
        let r = data_driven_cutoff(&t, |s| { calls += 1; Ok(errs[s]) }, budget, tol).unwrap();
        prop_assert!(calls <= budget);
        let CutoffEvidence::ErrorSamples { baseline, samples, .. } = &r.evidence else {
            panic!("expected error samples");
        };
        prop_assert_eq!(samples.len(), calls);
        let p = r.predicted_count;
        prop_assert!(p == 0 || errs[p] <= baseline + tol);
        prop_assert!(p == 0 || samples.iter().any(|&(s, _)| s == p));
    }

    #[test]
    fn ample_budget_finds_last_passing_step_of_monotone_curve(
        v in arb_saliencies(),
        incs in prop::collection::vec(0.0f64..1.0, 200),
        tol in 0.0f64..5.0,
    ) {
        let t = trace_of(&v);
        let n = v.len();
        let mut curve = vec![0.0];
        for k in 0..n {
            curve.push(curve[k] + incs[k]);
        }
        let budget = 64;
        let r = data_driven_cutoff(&t, |s| Ok(curve[s]), budget, tol).unwrap();
        let truth = (0..=n).filter(|&s| curve[s] <= tol).max().unwrap();
        prop_assert_eq!(r.predicted_count, truth);
        let r2 = data_driven_cutoff(&t, |s| Ok(curve[s]), budget, tol + 0.5).unwrap();
        prop_assert!(r2.predicted_count >= r.predicted_count);
    }
}
