//! Inference, classification metrics, silhouette score, parameter counting
//! and the zero-shot protocol.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::FrozenGnn;
use crate::graph::{generate_zero_dataset, Graph, ZeroShotSpec};
use crate::prompt::build_prompted;
use crate::text::TextEmbeddingStore;
use crate::train::{
    encode_prompted, graph_branch, head_logits, label_embeddings, train_morpher_with, PromptState, TrainConfig,
    TrainHistory, ZeroShotPoint,
};

/// Index of the largest value; ties go to the lower index.
pub fn argmax(scores: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Argmax of `z_graph · z_c` over the candidate text embeddings.
pub fn predict_from_embeddings(z_graph: &Array1<f64>, z_text: &[Array1<f64>]) -> usize {
    let scores: Array1<f64> = z_text.iter().map(|z| z_graph.dot(z)).collect();
    argmax(scores.view())
}

/// Predicted candidate index for one graph.
pub fn predict<S: AsRef<str>>(
    graph: &Graph,
    state: &PromptState,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
    label_texts: &[S],
) -> Result<usize> {
    let (z_text, _) = label_embeddings(label_texts, state, store)?;
    Ok(predict_from_embeddings(&graph_branch(graph, state, gnn)?, &z_text))
}

/// [`predict`] over many graphs, sharing the label embeddings.
pub fn predict_batch<S: AsRef<str>>(
    graphs: &[&Graph],
    state: &PromptState,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
    label_texts: &[S],
) -> Result<Vec<usize>> {
    let (z_text, _) = label_embeddings(label_texts, state, store)?;
    graphs
        .par_iter()
        .map(|g| Ok(predict_from_embeddings(&graph_branch(g, state, gnn)?, &z_text)))
        .collect()
}

/// Raw mean readout of the prompted graph.
pub fn prompted_readout(graph: &Graph, state: &PromptState, gnn: &FrozenGnn) -> Result<Array1<f64>> {
    let prompted = build_prompted(graph, &state.graph_prompt, state.style)?;
    Ok(encode_prompted(&prompted, gnn)?.0)
}

/// Task-head predictions of a baseline state.
pub fn predict_baseline_batch(graphs: &[&Graph], state: &PromptState, gnn: &FrozenGnn) -> Result<Vec<usize>> {
    graphs
        .par_iter()
        .map(|g| Ok(argmax(head_logits(&prompted_readout(g, state, gnn)?, state)?.view())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub silhouette: Option<f64>,
    pub trainable_params: Option<usize>,
    pub runtime_secs: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    if preds.len() != golds.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} golds", preds.len(), golds.len())));
    }
    if let Some(&c) = preds.iter().chain(golds).find(|&&c| c >= num_classes) {
        return Err(Error::Label(format!("class {c} outside {num_classes} classes")));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        confusion[g][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        accuracy: ratio(correct, preds.len()),
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64,
        per_class,
        confusion,
        silhouette: None,
        trainable_params: None,
        runtime_secs: None,
    })
}

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters score 0.
pub fn silhouette(embeddings: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = embeddings.nrows();
    if n != labels.len() || n == 0 {
        return Err(Error::InvalidArgument("silhouette needs one label per embedding".into()));
    }
    let num_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; num_clusters];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            if sizes[labels[i]] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; num_clusters];
            for j in 0..n {
                if j != i {
                    let diff = &embeddings.row(i) - &embeddings.row(j);
                    sums[labels[j]] += diff.dot(&diff).sqrt();
                }
            }
            let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
            let b = (0..num_clusters)
                .filter(|&c| c != labels[i] && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

/// `n_g·d + n_t·d_t + d_t·d_g + d_t`, plus `C·d_g + C` when a task head is
/// present.
pub fn count_trainable(state: &PromptState) -> usize {
    let gp = state.graph_prompt.tokens.len();
    let tp = state.text_prompt.tokens.len();
    let proj = state.projector.weight.len() + state.projector.bias.len();
    let head = state.head.as_ref().map_or(0, |h| h.weight.len() + h.bias.len());
    gp + tp + proj + head
}

fn accuracy(preds: &[usize], gold: impl Fn(usize) -> usize) -> f64 {
    let hits = preds.iter().enumerate().filter(|&(i, &p)| p == gold(i)).count();
    ratio(hits, preds.len())
}

/// Train on the two seen classes of a generated ZERO dataset and record, per
/// epoch: train accuracy against the two seen labels, train accuracy against
/// all three labels, and accuracy on the unseen class against all three.
pub fn zero_shot_protocol(
    spec: &ZeroShotSpec,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
    config: &TrainConfig,
) -> Result<(PromptState, TrainHistory)> {
    let bundle = generate_zero_dataset(spec)?;
    let all = bundle.label_texts().to_vec();
    store.ensure_covers(&all)?;
    let seen = &all[..2];
    let train: Vec<&Graph> = bundle.splits().train.iter().map(|&i| &bundle.graphs()[i]).collect();
    let train_golds: Vec<usize> = bundle.splits().train.iter().map(|&i| bundle.labels()[i]).collect();
    let test: Vec<&Graph> = bundle.splits().test.iter().map(|&i| &bundle.graphs()[i]).collect();
    let test_golds: Vec<usize> = bundle.splits().test.iter().map(|&i| bundle.labels()[i]).collect();

    train_morpher_with(&bundle, gnn, store, config, None, |epoch, state, history| {
        let train2 = predict_batch(&train, state, gnn, store, seen)?;
        let train3 = predict_batch(&train, state, gnn, store, &all)?;
        let test3 = predict_batch(&test, state, gnn, store, &all)?;
        history.zero_shot.push(ZeroShotPoint {
            epoch,
            acc_train2: accuracy(&train2, |i| train_golds[i]),
            acc_train3: accuracy(&train3, |i| train_golds[i]),
            acc_test_zero: accuracy(&test3, |i| test_golds[i]),
        });
        Ok(())
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    };
    let mut writer = csv::Writer::from_path(path).map_err(to_err)?;
    for row in rows {
        writer.serialize(row).map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Curves as CSV with header `epoch,acc_train2,acc_train3,acc_test_zero`.
pub fn write_zero_shot_csv(path: &Path, curves: &[ZeroShotPoint]) -> Result<()> {
    write_csv(path, curves)
}

/// Per-epoch history as CSV with header `epoch,loss,train_acc,val_acc`.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    write_csv(path, &history.records)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
