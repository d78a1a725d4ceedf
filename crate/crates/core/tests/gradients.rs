use morpher_core::gnn::init_gnn_random;
use morpher_core::gradcheck::{relative_error, run_gradcheck, GradcheckConfig};
use morpher_core::graph::{generate_separable_dataset, SeparableSpec};
use morpher_core::text::PseudoEncoder;
use morpher_core::train::{backward_all, init_state, TrainConfig};
use morpher_core::text::PhraseSource;

#[test]
fn every_block_matches_central_differences() {
    let config = GradcheckConfig::default();
    let report = run_gradcheck(&config).unwrap();
    assert_eq!(report.instances, 20);
    for b in &report.blocks {
        assert!(b.checked > 0, "{} never checked", b.block);
        assert!(b.worst_relative_error < 1e-4, "{}: {:e}", b.block, b.worst_relative_error);
    }
}

#[test]
fn other_seeds_pass_too() {
    for seed in [7, 123] {
        let report = run_gradcheck(&GradcheckConfig { seed, instances: 8, ..Default::default() }).unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }
}

#[test]
fn relative_error_flags_a_sign_flip() {
    assert!(relative_error(&[1.0, -2.0], &[1.0, 2.0]) > 1.0);
    assert_eq!(relative_error(&[0.5, 0.25], &[0.5, 0.25]), 0.0);
}

#[test]
fn huge_temperature_leaves_no_learning_signal() {
    let bundle = generate_separable_dataset(&SeparableSpec {
        n_graphs: 4,
        nodes_per_graph: 5,
        feature_dim: 4,
        classes: 2,
        noise: 0.1,
        seed: 2,
    })
    .unwrap();
    let gnn = init_gnn_random(4, 8, 6, 1).unwrap();
    let store = PseudoEncoder::new(8, 2, 0).store(bundle.label_texts()).unwrap();
    let mut config = TrainConfig::default();
    config.tau = 1e12;
    let state = init_state(&config, 4, 6, 8, 0, PhraseSource::Store(&store)).unwrap();
    let batch: Vec<_> = bundle.samples(&[0, 1, 2, 3]).collect();
    let (loss, grads) = backward_all(&batch, bundle.label_texts(), &state, &gnn, &store).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-9);
    for block in grads.blocks() {
        assert!(block.iter().all(|g| g.abs() < 1e-10));
    }
}
