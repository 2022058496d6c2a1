//! Behaviour of the pruning policies and cutoffs on trained fixture networks.

use std::sync::OnceLock;

use neuromerge::{
    data_driven_cutoff, data_free_cutoff, error_curve, evaluate, prune_layer, replay_trace, train,
    Dataset, Network, PrunePolicy, SimilarityConfig, Split, SyntheticConfig, TrainConfig,
    DEFAULT_BINS,
};

const SEEDS: u64 = 5;

struct Trained {
    ds: Dataset,
    nets: Vec<Network>,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let ds = Dataset::synthetic(&SyntheticConfig::default()).unwrap();
        let nets = (0..SEEDS)
            .map(|seed| {
                train(
                    &ds,
                    &TrainConfig {
                        seed,
                        ..Default::default()
                    },
                )
                .unwrap()
            })
            .collect();
        Trained { ds, nets }
    })
}

fn mean_curve(policy: impl Fn(u64) -> PrunePolicy) -> Vec<f64> {
    let t = trained();
    let cfg = SimilarityConfig::default();
    let mut sum = vec![0.0; 20];
    for (seed, net) in t.nets.iter().enumerate() {
        let c = error_curve(net, 0, &t.ds, Split::Test, policy(seed as u64), &cfg, 1).unwrap();
        for (s, e) in c {
            sum[s] += e / SEEDS as f64;
        }
    }
    sum
}

#[test]
fn trained_fixture_beats_majority_rate() {
    let t = trained();
    for net in &t.nets {
        let acc = evaluate(net, &t.ds, Split::Train).unwrap().accuracy;
        assert!(acc > t.ds.majority_rate(Split::Train));
        assert!(evaluate(net, &t.ds, Split::Test).unwrap().accuracy >= 95.0);
    }
}

#[test]
fn half_removal_ordering_and_ablation() {
    let surgery = mean_curve(|_| PrunePolicy::SaliencySurgery);
    let plain = mean_curve(|_| PrunePolicy::SaliencyNoSurgery);
    let magnitude = mean_curve(|_| PrunePolicy::NaiveMagnitude);
    let random = mean_curve(|seed| PrunePolicy::Random { seed });
    assert!(
        surgery[10] <= magnitude[10],
        "{} vs {}",
        surgery[10],
        magnitude[10]
    );
    assert!(
        magnitude[10] <= random[10],
        "{} vs {}",
        magnitude[10],
        random[10]
    );
    for k in 8..20 {
        assert!(
            plain[k] > surgery[k],
            "step {k}: {} vs {}",
            plain[k],
            surgery[k]
        );
    }
}

#[test]
fn data_free_count_tracks_first_error_rise() {
    let t = trained();
    let cfg = SimilarityConfig::default();
    for net in &t.nets {
        let (_, trace) = prune_layer(net, 0, 19, PrunePolicy::SaliencySurgery, &cfg).unwrap();
        let report = data_free_cutoff(&trace, DEFAULT_BINS, 1.0).unwrap();
        let curve = error_curve(
            net,
            0,
            &t.ds,
            Split::Test,
            PrunePolicy::SaliencySurgery,
            &cfg,
            1,
        )
        .unwrap();
        let rise = curve
            .iter()
            .find(|(_, e)| *e >= curve[0].1 + 1.0)
            .map_or(19, |(s, _)| *s) as f64;
        let got = report.predicted_count as f64;
        assert!(
            (got - rise).abs() <= 0.2 * rise,
            "predicted {got}, first rise at {rise}"
        );
    }
}

#[test]
fn data_driven_count_stays_within_tolerance() {
    let t = trained();
    let cfg = SimilarityConfig::default();
    for net in &t.nets {
        let (_, trace) = prune_layer(net, 0, 19, PrunePolicy::SaliencySurgery, &cfg).unwrap();
        let oracle = |step: usize| {
            let pruned = replay_trace(net, &trace, step, true)?;
            Ok(evaluate(&pruned, &t.ds, Split::Val)?.error)
        };
        let report = data_driven_cutoff(&trace, oracle, 12, 1.0).unwrap();
        let curve = error_curve(
            net,
            0,
            &t.ds,
            Split::Val,
            PrunePolicy::SaliencySurgery,
            &cfg,
            1,
        )
        .unwrap();
        let rise = curve[report.predicted_count].1 - curve[0].1;
        assert!(rise <= 1.2, "step {} rises {rise}", report.predicted_count);
        assert!(report.predicted_count > 0);
    }
}
