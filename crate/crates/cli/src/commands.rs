//! Subcommands. Each returns an error for a nonzero exit.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use morpher_core::eval::{
    count_trainable, metrics, predict_baseline_batch, predict_batch, prompted_readout, silhouette, write_history_csv,
    write_report, write_zero_shot_csv, zero_shot_protocol, EvalReport,
};
use morpher_core::gnn::{init_gnn_random, load_gnn_weights, FrozenGnn};
use morpher_core::gradcheck::{run_gradcheck, GradcheckReport};
use morpher_core::graph::{
    few_shot_split, generate_one_hot_structural, generate_separable_dataset, generate_zero_dataset, load_dataset,
    random_base_network, write_dataset, write_labels, DatasetBundle, Graph, LoadOptions, OneHotSpec, SeparableSpec,
    ZeroShotSpec,
};
use morpher_core::seed::derive_seed;
use morpher_core::text::{load_token_embeddings, PseudoEncoder, TextEmbeddingStore};
use morpher_core::train::{graph_branch, load_state, save_state, train_baseline, train_morpher, PromptState, TrainHistory};
use ndarray::Array2;
use serde::Serialize;

use crate::config::{DataConfig, GnnConfig, RunConfig, SplitName, TextConfig, ZeroData};

pub const STATE_FILE: &str = "state.mpst";

/// Everything `train` produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: PromptState,
    pub history: TrainHistory,
    pub report: EvalReport,
}

fn data_config(config: &RunConfig) -> Result<&DataConfig> {
    config.data.as_ref().context("this command needs a [data] section")
}

fn zero_spec(zero: &ZeroData, seed: u64) -> Result<ZeroShotSpec> {
    let edges = match &zero.edge_list {
        Some(path) => morpher_core::graph::read_edge_list(path)?,
        None => random_base_network(zero.base_nodes, zero.extra_edges, seed),
    };
    let mut spec = ZeroShotSpec::new(edges, zero.label_texts.clone(), seed);
    spec.hops = zero.hops;
    Ok(spec)
}

/// Dataset with splits assigned.
pub fn build_dataset(config: &RunConfig) -> Result<DatasetBundle> {
    let seed = config.seed;
    let bundle = match data_config(config)? {
        DataConfig::File(f) => {
            let bundle = load_dataset(&f.path, &f.labels, LoadOptions { pad_to: f.pad_to })?;
            few_shot_split(bundle, f.shots, seed)?
        }
        DataConfig::Separable(s) => {
            let bundle = generate_separable_dataset(&SeparableSpec {
                n_graphs: s.n_graphs,
                nodes_per_graph: s.nodes_per_graph,
                feature_dim: s.feature_dim,
                classes: s.classes,
                noise: s.noise,
                seed,
            })?;
            few_shot_split(bundle, s.shots, seed)?
        }
        DataConfig::OneHot(o) => {
            let bundle = generate_one_hot_structural(&OneHotSpec {
                n_graphs: o.n_graphs,
                nodes_per_graph: o.nodes_per_graph,
                feature_dim: o.feature_dim,
                classes: o.classes,
                extra_edges_per_class: o.extra_edges_per_class,
                balanced: o.balanced,
                seed,
            })?;
            few_shot_split(bundle, o.shots, seed)?
        }
        DataConfig::Zero(z) => generate_zero_dataset(&zero_spec(z, seed)?)?,
    };
    Ok(bundle)
}

pub fn build_gnn(config: &RunConfig, feature_dim: usize) -> Result<FrozenGnn> {
    let gnn = match &config.gnn {
        GnnConfig::File { path } => load_gnn_weights(path)?,
        GnnConfig::Random(r) => init_gnn_random(feature_dim, r.hidden, r.output, derive_seed(config.seed, "gnn"))?,
    };
    gnn.ensure_input_dim(feature_dim)?;
    Ok(gnn)
}

/// Token store covering `labels` and the configured seed phrase.
pub fn build_store(config: &RunConfig, labels: &[String]) -> Result<TextEmbeddingStore> {
    let mut needed = labels.to_vec();
    if let Some(phrase) = &config.train.prompt.seed_phrase {
        if !needed.contains(phrase) {
            needed.push(phrase.clone());
        }
    }
    match &config.text {
        TextConfig::File { path } => {
            let store = load_token_embeddings(path)?;
            store.ensure_covers(labels)?;
            Ok(store)
        }
        TextConfig::Pseudo(p) => {
            let mut encoder = PseudoEncoder::new(p.dim, p.tokens_per_text, derive_seed(config.seed, "pseudo-encoder"));
            encoder.midpoints = p.midpoints.clone();
            Ok(encoder.store(&needed)?)
        }
    }
}

fn split_indices(bundle: &DatasetBundle, split: SplitName) -> &[usize] {
    match split {
        SplitName::Train => &bundle.splits().train,
        SplitName::Val => &bundle.splits().val,
        SplitName::Test => &bundle.splits().test,
    }
}

fn evaluate(
    config: &RunConfig,
    bundle: &DatasetBundle,
    state: &PromptState,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
) -> Result<EvalReport> {
    let indices = split_indices(bundle, config.eval.split);
    if indices.is_empty() {
        bail!("the {:?} split is empty", config.eval.split);
    }
    let graphs: Vec<&Graph> = indices.iter().map(|&i| &bundle.graphs()[i]).collect();
    let golds: Vec<usize> = indices.iter().map(|&i| bundle.labels()[i]).collect();
    let preds = if state.head.is_some() {
        predict_baseline_batch(&graphs, state, gnn)?
    } else {
        store.ensure_covers(bundle.label_texts())?;
        predict_batch(&graphs, state, gnn, store, bundle.label_texts())?
    };
    let mut report = metrics(&preds, &golds, bundle.num_classes())?;
    report.trainable_params = Some(count_trainable(state));
    if config.eval.silhouette {
        let rows = graphs
            .iter()
            .map(|g| {
                if state.head.is_some() {
                    prompted_readout(g, state, gnn)
                } else {
                    graph_branch(g, state, gnn)
                }
            })
            .collect::<morpher_core::Result<Vec<_>>>()?;
        let width = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let embeddings = Array2::from_shape_vec((rows.len(), width), flat)?;
        report.silhouette = match silhouette(&embeddings, &golds) {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("silhouette skipped: {e}");
                None
            }
        };
    }
    Ok(report)
}

fn prepare_out_dir(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))
}

fn out(config: &RunConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    outputs: Vec<String>,
    config: serde_json::Value,
}

/// Write `manifest.json` (the resolved config plus the files written) and a
/// resolved `config.toml`; either reproduces the run when passed to `--config`.
fn write_manifest(config: &RunConfig, command: &str, outputs: &[&str]) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        config: config.to_json()?,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(out(config, "manifest.json"), text)?;
    fs::write(out(config, "config.toml"), config.to_toml()?)?;
    Ok(())
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let bundle = build_dataset(config)?;
    info!(
        "{} graphs, {} classes, splits {}/{}/{}",
        bundle.len(),
        bundle.num_classes(),
        bundle.splits().train.len(),
        bundle.splits().val.len(),
        bundle.splits().test.len()
    );
    let gnn = build_gnn(config, bundle.feature_dim())?;
    let store = build_store(config, bundle.label_texts())?;
    let (state, history) = if config.train.mode.is_baseline() {
        train_baseline(&bundle, &gnn, &config.train, store.dim())?
    } else {
        train_morpher(&bundle, &gnn, &store, &config.train)?
    };
    let mut report = evaluate(config, &bundle, &state, &gnn, &store)?;
    report.runtime_secs = Some(start.elapsed().as_secs_f64());
    info!("{:?} accuracy {:.4}, macro F1 {:.4}", config.eval.split, report.accuracy, report.macro_f1);

    prepare_out_dir(config)?;
    save_state(&out(config, STATE_FILE), &state)?;
    write_history_csv(&out(config, "history.csv"), &history)?;
    write_report(&out(config, "report.json"), &report)?;
    write_manifest(config, "train", &[STATE_FILE, "history.csv", "report.json"])?;
    Ok(TrainOutcome { state, history, report })
}

pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let start = Instant::now();
    let state_path = config.eval.state.clone().unwrap_or_else(|| out(config, STATE_FILE));
    let state = load_state(&state_path)?;
    let bundle = build_dataset(config)?;
    let gnn = build_gnn(config, bundle.feature_dim())?;
    let store = build_store(config, bundle.label_texts())?;
    if state.head.is_none() && state.text_dim() != store.dim() {
        return Err(morpher_core::Error::Dimension(format!(
            "state text width {} but the embedding store has width {}",
            state.text_dim(),
            store.dim()
        ))
        .into());
    }
    if state.graph_embedding_dim() != gnn.output_dim() {
        return Err(morpher_core::Error::Dimension(format!(
            "state expects graph embeddings of width {}, the GNN outputs {}",
            state.graph_embedding_dim(),
            gnn.output_dim()
        ))
        .into());
    }
    let mut report = evaluate(config, &bundle, &state, &gnn, &store)?;
    report.runtime_secs = Some(start.elapsed().as_secs_f64());
    prepare_out_dir(config)?;
    write_report(&out(config, "eval_report.json"), &report)?;
    write_manifest(config, "eval", &["eval_report.json"])?;
    Ok(report)
}

pub fn cmd_zeroshot(config: &RunConfig) -> Result<TrainHistory> {
    config.validate()?;
    let Some(DataConfig::Zero(zero)) = &config.data else {
        bail!("zeroshot needs a [data.zero] section");
    };
    if config.train.mode.is_baseline() {
        bail!("zeroshot trains the text-aligned model; set train.mode = \"morpher\"");
    }
    let spec = zero_spec(zero, config.seed)?;
    let gnn = build_gnn(config, 2)?;
    let store = build_store(config, &zero.label_texts)?;
    let (state, history) = zero_shot_protocol(&spec, &gnn, &store, &config.train)?;
    let best = history.zero_shot.iter().map(|p| p.acc_test_zero).fold(0.0, f64::max);
    info!("max unseen-class accuracy over epochs {best:.4}");
    prepare_out_dir(config)?;
    write_zero_shot_csv(&out(config, "zeroshot.csv"), &history.zero_shot)?;
    save_state(&out(config, STATE_FILE), &state)?;
    write_manifest(config, "zeroshot", &["zeroshot.csv", STATE_FILE])?;
    Ok(history)
}

pub fn cmd_gradcheck(config: &RunConfig) -> Result<GradcheckReport> {
    let start = Instant::now();
    let report = run_gradcheck(&config.gradcheck)?;
    for block in &report.blocks {
        println!("{:<20} {:.3e}", block.block, block.worst_relative_error);
    }
    println!("worst {:.3e} over {} instances", report.worst(), report.instances);
    info!("gradcheck took {:.2} s", start.elapsed().as_secs_f64());
    prepare_out_dir(config)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(out(config, "gradcheck.json"), json)?;
    write_manifest(config, "gradcheck", &["gradcheck.json"])?;
    if !report.passed(config.gradcheck.tolerance) {
        bail!(
            "worst relative error {:.3e} is not below {:.1e}",
            report.worst(),
            config.gradcheck.tolerance
        );
    }
    Ok(report)
}

/// Materialize the configured dataset as `dataset.jsonl` + `labels.json`
/// (and `edges.txt` for the zero-shot construction).
pub fn cmd_gen(config: &RunConfig) -> Result<()> {
    let data = data_config(config)?;
    if let DataConfig::File(_) = data {
        bail!("gen needs a synthetic [data] section");
    }
    let bundle = build_dataset(config)?;
    prepare_out_dir(config)?;
    write_dataset(&out(config, "dataset.jsonl"), &bundle)?;
    write_labels(&out(config, "labels.json"), bundle.label_texts())?;
    let mut outputs = vec!["dataset.jsonl", "labels.json"];
    if let DataConfig::Zero(zero) = data {
        let spec = zero_spec(zero, config.seed)?;
        let text: String = spec.base_edges.iter().map(|(u, v)| format!("{u} {v}\n")).collect();
        fs::write(out(config, "edges.txt"), text)?;
        outputs.push("edges.txt");
    }
    write_manifest(config, "gen", &outputs)?;
    info!("wrote {} graphs to {}", bundle.len(), config.out_dir.display());
    Ok(())
}

/// Run `f` on a dedicated pool of `threads` workers.
pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

pub fn state_path(config: &RunConfig) -> PathBuf {
    out(config, STATE_FILE)
}
