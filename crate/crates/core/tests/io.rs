mod common;

use common::{random_inputs, random_net};
use neuromerge::io::{
    export_trace, import_trace, load_model, model_to_string, parse_model, save_model, trace_to_csv,
};
use neuromerge::{
    prune_layer, Activation, Error, PrunePolicy, PruneStep, PruneTrace, SimilarityConfig,
};
use proptest::prelude::*;
use std::path::Path;

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

#[test]
fn golden_model_loads() {
    let net = load_model(data("minimal.model")).unwrap();
    assert_eq!(net.input_dim(), 2);
    assert_eq!(net.output_dim(), 1);
    assert_eq!(net.layers()[0].activation(), Activation::Relu);
    assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![-10.75]);
    assert_eq!(net.forward(&[-1.0, -1.0]).unwrap(), vec![0.25]);
}

#[test]
fn golden_trace_loads() {
    let t = import_trace(data("minimal_trace.csv"), 0).unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.steps[0].kept, Some(0));
    assert_eq!(t.steps[0].removed, 3);
    assert_eq!(t.steps[0].saliency, 0.125);
    assert_eq!(t.steps[1].saliency, 1.0 / 3.0);
    assert_eq!(t.steps[1].test_error, Some(12.5));
    assert_eq!(t.steps[2].kept, None);
    assert_eq!(t.steps[2].test_error, None);
}

#[test]
fn saved_model_reproduces_outputs_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, act) in [(1, Activation::Sigmoid), (2, Activation::Relu)] {
        let net = random_net(&[7, 20, 5, 3], act, seed);
        let path = dir.path().join(format!("n{seed}.model"));
        save_model(&net, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.layers(), net.layers());
        for x in random_inputs(7, 100, seed) {
            let a = net.forward(&x).unwrap();
            let b = back.forward(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(model_to_string(&back), model_to_string(&net));
    }
}

#[test]
fn pruned_trace_round_trips() {
    let net = random_net(&[6, 20, 3], Activation::Sigmoid, 9);
    let (_, mut trace) = prune_layer(
        &net,
        0,
        19,
        PrunePolicy::SaliencySurgery,
        &SimilarityConfig::default(),
    )
    .unwrap();
    trace.steps[4].test_error = Some(17.123456789012345);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    export_trace(&trace, &path).unwrap();
    let back = import_trace(&path, 0).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        load_model("/nonexistent/x.model"),
        Err(Error::Io { .. })
    ));
    assert!(matches!(
        import_trace("/nonexistent/x.csv", 0),
        Err(Error::Io { .. })
    ));
}

#[test]
fn bad_trace_header_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    assert!(matches!(
        import_trace(&path, 0),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn trailing_content_rejected() {
    let text = std::fs::read_to_string(data("minimal.model")).unwrap() + "w 1 2\n";
    assert!(matches!(
        parse_model(&text, Path::new("m")),
        Err(Error::Parse { .. })
    ));
}

fn sig_digits_match(a: f64, b: f64) -> bool {
    format!("{a:.16e}") == format!("{b:.16e}")
}

proptest! {
    #[test]
    fn trace_values_keep_seventeen_digits(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
        let trace = PruneTrace {
            layer_index: 2,
            steps: values.iter().enumerate().map(|(k, &v)| PruneStep {
                step: k + 1, kept: Some(k), removed: k + 1, saliency: v.abs(), test_error: Some(v),
            }).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, trace_to_csv(&trace)).unwrap();
        let back = import_trace(&path, 2).unwrap();
        for (a, b) in trace.steps.iter().zip(&back.steps) {
            prop_assert!(sig_digits_match(a.saliency, b.saliency));
            prop_assert_eq!(a.test_error.unwrap().to_bits(), b.test_error.unwrap().to_bits());
        }
    }
}
