use morpher_core::eval::{metrics, predict, predict_batch, zero_shot_protocol};
use morpher_core::gnn::init_gnn_random;
use morpher_core::graph::{
    few_shot_split, generate_separable_dataset, random_base_network, DatasetBundle, SeparableSpec, ZeroShotSpec,
};
use morpher_core::text::{PhraseSource, PseudoEncoder};
use morpher_core::train::{
    encode_state, init_state, label_embeddings, load_state, save_state, train_baseline, train_morpher, TrainConfig,
    TrainMode,
};
use ndarray::Array1;
use rand::Rng;

fn separable(seed: u64) -> DatasetBundle {
    let b = generate_separable_dataset(&SeparableSpec {
        n_graphs: 40,
        nodes_per_graph: 8,
        feature_dim: 4,
        classes: 2,
        noise: 0.1,
        seed,
    })
    .unwrap();
    few_shot_split(b, 10, seed).unwrap()
}

#[test]
fn history_has_one_record_per_epoch_and_bounded_initial_loss() {
    let bundle = separable(3);
    let gnn = init_gnn_random(4, 16, 8, 3).unwrap();
    let store = PseudoEncoder::new(16, 2, 3).store(bundle.label_texts()).unwrap();
    let config = TrainConfig {
        epochs: 7,
        seed: 3,
        ..Default::default()
    };
    let (_, history) = train_morpher(&bundle, &gnn, &store, &config).unwrap();
    assert_eq!(history.records.len(), 7);
    let b = bundle.splits().train.len() as f64;
    assert!((0.0..=2.0 * b.ln()).contains(&history.records[0].loss));
    assert!(history.best_epoch.is_some());
}

#[test]
fn morpher_training_is_bitwise_reproducible() {
    let bundle = separable(5);
    let gnn = init_gnn_random(4, 16, 8, 5).unwrap();
    let store = PseudoEncoder::new(16, 2, 5).store(bundle.label_texts()).unwrap();
    let config = TrainConfig {
        epochs: 10,
        seed: 5,
        batch_size: 4,
        ..Default::default()
    };
    let (a, ha) = train_morpher(&bundle, &gnn, &store, &config).unwrap();
    let (b, hb) = train_morpher(&bundle, &gnn, &store, &config).unwrap();
    assert_eq!(encode_state(&a), encode_state(&b));
    assert_eq!(ha, hb);
}

#[test]
fn separable_fixture_is_learned_by_both_paths() {
    let bundle = separable(0);
    let gnn = init_gnn_random(4, 64, 32, 0).unwrap();
    let store = PseudoEncoder::new(64, 3, 0).store(bundle.label_texts()).unwrap();
    let test: Vec<_> = bundle.splits().test.iter().map(|&i| &bundle.graphs()[i]).collect();
    let golds: Vec<usize> = bundle.splits().test.iter().map(|&i| bundle.labels()[i]).collect();

    let config = TrainConfig { epochs: 60, ..Default::default() };
    let (state, _) = train_morpher(&bundle, &gnn, &store, &config).unwrap();
    let preds = predict_batch(&test, &state, &gnn, &store, bundle.label_texts()).unwrap();
    assert!(metrics(&preds, &golds, 2).unwrap().accuracy >= 0.9);

    let config = TrainConfig {
        epochs: 60,
        mode: TrainMode::ImprovedAioHead,
        ..Default::default()
    };
    let (state, _) = train_baseline(&bundle, &gnn, &config, 64).unwrap();
    assert!(state.head.is_some());
    let preds = morpher_core::eval::predict_baseline_batch(&test, &state, &gnn).unwrap();
    assert!(metrics(&preds, &golds, 2).unwrap().accuracy >= 0.9);
}

#[test]
fn baseline_leaves_text_prompt_and_projector_untouched() {
    let bundle = separable(1);
    let gnn = init_gnn_random(4, 16, 8, 1).unwrap();
    let config = TrainConfig {
        epochs: 5,
        mode: TrainMode::AioHead,
        seed: 1,
        ..Default::default()
    };
    let (trained, _) = train_baseline(&bundle, &gnn, &config, 12).unwrap();
    let enc = PseudoEncoder::new(12, 1, 0);
    let fresh = init_state(&config, 4, 8, 12, 2, PhraseSource::Pseudo(&enc)).unwrap();
    assert_eq!(trained.text_prompt, fresh.text_prompt);
    assert_eq!(trained.projector, fresh.projector);
    assert_ne!(trained.graph_prompt, fresh.graph_prompt);
}

#[test]
fn state_file_round_trips() {
    let bundle = separable(2);
    let gnn = init_gnn_random(4, 16, 8, 2).unwrap();
    let config = TrainConfig {
        epochs: 3,
        mode: TrainMode::ImprovedAioHead,
        ..Default::default()
    };
    let (state, _) = train_baseline(&bundle, &gnn, &config, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.mpst");
    save_state(&path, &state).unwrap();
    assert_eq!(load_state(&path).unwrap(), state);
}

#[test]
fn predict_matches_a_brute_force_similarity_table() {
    let bundle = separable(4);
    let gnn = init_gnn_random(4, 16, 8, 4).unwrap();
    let texts: Vec<String> = (0..4).map(|c| format!("topic {c}")).collect();
    let store = PseudoEncoder::new(16, 2, 4).store(&texts).unwrap();
    let mut rng = morpher_core::seed::rng(99);
    for case in 0..100 {
        let config = TrainConfig {
            seed: case,
            ..Default::default()
        };
        let state = init_state(&config, 4, 8, 16, 0, PhraseSource::Store(&store)).unwrap();
        let g = &bundle.graphs()[rng.random_range(0..bundle.len())];
        let candidates = &texts[..rng.random_range(2..=4)];
        let zg = morpher_core::train::graph_branch(g, &state, &gnn).unwrap();
        let (zt, _) = label_embeddings(candidates, &state, &store).unwrap();
        let table: Vec<f64> = zt.iter().map(|z| zg.iter().zip(z).map(|(a, b)| a * b).sum()).collect();
        let mut best = 0;
        for (i, &s) in table.iter().enumerate() {
            if s > table[best] {
                best = i;
            }
        }
        assert_eq!(predict(g, &state, &gnn, &store, candidates).unwrap(), best);
    }
}

#[test]
fn text_prompt_gets_no_gradient_from_two_equal_length_labels() {
    // With two candidates of equal token count the centered difference
    // h_A - h_B does not involve the text prompt at all.
    let bundle = separable(6);
    let gnn = init_gnn_random(4, 16, 8, 6).unwrap();
    let store = PseudoEncoder::new(16, 3, 6).store(bundle.label_texts()).unwrap();
    let state = init_state(&TrainConfig::default(), 4, 8, 16, 0, PhraseSource::Store(&store)).unwrap();
    let batch: Vec<_> = bundle.samples(&bundle.splits().train).collect();
    let (_, grads) = morpher_core::train::backward_all(&batch, bundle.label_texts(), &state, &gnn, &store).unwrap();
    assert!(grads.text_prompt.iter().all(|g| g.abs() < 1e-12));
    assert!(grads.graph_prompt.iter().any(|g| g.abs() > 1e-8));
}

#[test]
fn zero_shot_curves_cover_every_epoch() {
    let spec = ZeroShotSpec::new(
        random_base_network(300, 150, 1),
        ["biology".into(), "informatics".into(), "bioinformatics".into()],
        1,
    );
    let enc = PseudoEncoder::new(16, 2, 1).with_midpoint("bioinformatics", "biology", "informatics");
    let store = enc.store(&spec.label_texts).unwrap();
    let gnn = init_gnn_random(2, 16, 8, 1).unwrap();
    let config = TrainConfig {
        epochs: 6,
        seed: 1,
        ..Default::default()
    };
    let (_, history) = zero_shot_protocol(&spec, &gnn, &store, &config).unwrap();
    assert_eq!(history.zero_shot.len(), 6);
    assert_eq!(history.records.len(), 6);
    assert!(history.best_epoch.is_none());
    for (e, p) in history.zero_shot.iter().enumerate() {
        assert_eq!(p.epoch, e);
        for acc in [p.acc_train2, p.acc_train3, p.acc_test_zero] {
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    let mid = store.tokens("bioinformatics").unwrap().mean_axis(ndarray::Axis(0)).unwrap();
    let ends: Array1<f64> = (store.tokens("biology").unwrap().mean_axis(ndarray::Axis(0)).unwrap()
        + store.tokens("informatics").unwrap().mean_axis(ndarray::Axis(0)).unwrap())
        / 2.0;
    assert!(mid.iter().zip(&ends).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn missing_label_text_is_reported() {
    let bundle = separable(0);
    let gnn = init_gnn_random(4, 16, 8, 0).unwrap();
    let store = PseudoEncoder::new(16, 2, 0).store(&["class 0"]).unwrap();
    let err = train_morpher(&bundle, &gnn, &store, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, morpher_core::Error::Label(_)), "{err}");
}
