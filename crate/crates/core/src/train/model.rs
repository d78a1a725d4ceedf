//! Forward and reverse passes of both branches.
//!
//! Graph branch: prompted graph → frozen GCN → mean readout → L2 normalize →
//! `tanh(W v + b)`. Text branch: mean of `[P^t; tokens]` per candidate label
//! → center over the candidates → L2 normalize. Gradients reach the graph
//! prompt only through the prompt rows of the merged feature matrix; edges
//! are treated as constants.

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use super::loss::{contrastive_loss_with_grad, cross_entropy_with_grad};
use super::state::PromptState;
use crate::error::{Error, Result};
use crate::gnn::{gcn_backward_features, gcn_forward, normalize_adjacency, readout_mean, readout_mean_backward, FrozenGnn, ForwardTape};
use crate::graph::Graph;
use crate::prompt::{build_prompted, PromptedGraph};
use crate::text::{center_normalize_backward, center_normalize_labels, prompted_text_backward, prompted_text_embedding, LabelNormTape, TextEmbeddingStore, NORM_EPS};

/// Gradients for every block of a [`PromptState`], same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub graph_prompt: Array2<f64>,
    pub text_prompt: Array2<f64>,
    pub projector_weight: Array2<f64>,
    pub projector_bias: Array1<f64>,
    pub head_weight: Option<Array2<f64>>,
    pub head_bias: Option<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(state: &PromptState) -> Self {
        Self {
            graph_prompt: Array2::zeros(state.graph_prompt.tokens.dim()),
            text_prompt: Array2::zeros(state.text_prompt.tokens.dim()),
            projector_weight: Array2::zeros(state.projector.weight.dim()),
            projector_bias: Array1::zeros(state.projector.bias.len()),
            head_weight: state.head.as_ref().map(|h| Array2::zeros(h.weight.dim())),
            head_bias: state.head.as_ref().map(|h| Array1::zeros(h.bias.len())),
        }
    }

    /// Blocks in the order of [`PromptState::blocks_mut`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.graph_prompt.as_slice().expect("standard layout"),
            self.text_prompt.as_slice().expect("standard layout"),
            self.projector_weight.as_slice().expect("standard layout"),
            self.projector_bias.as_slice().expect("standard layout"),
        ];
        if let (Some(w), Some(b)) = (&self.head_weight, &self.head_bias) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}

/// `tanh(W v + b)`.
pub fn project(v: &Array1<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Result<Array1<f64>> {
    if weight.ncols() != v.len() || weight.nrows() != bias.len() {
        return Err(Error::Dimension(format!(
            "projector {:?} with bias {} applied to a {}-vector",
            weight.dim(),
            bias.len(),
            v.len()
        )));
    }
    Ok((weight.dot(v) + bias).mapv(f64::tanh))
}

/// Intermediates of one graph-branch forward pass.
#[derive(Debug, Clone)]
pub struct GraphTape {
    pub prompted: PromptedGraph,
    pub gcn: ForwardTape,
    pub readout: Array1<f64>,
    pub readout_norm: f64,
    pub normalized: Array1<f64>,
    /// Projector output before any optional renormalization.
    pub projected: Array1<f64>,
    /// Final embedding (equal to `projected` unless renormalized).
    pub output: Array1<f64>,
}

/// Run the frozen encoder on a prompted graph; the readout is taken over all
/// rows, prompt tokens included.
pub fn encode_prompted(prompted: &PromptedGraph, gnn: &FrozenGnn) -> Result<(Array1<f64>, ForwardTape)> {
    let adjacency = normalize_adjacency(prompted.num_nodes(), prompted.edges())?;
    let (h2, tape) = gcn_forward(&adjacency, prompted.features(), gnn)?;
    Ok((readout_mean(&h2)?, tape))
}

pub fn graph_forward(prompted: &PromptedGraph, state: &PromptState, gnn: &FrozenGnn, renormalize: bool) -> Result<GraphTape> {
    let (readout, gcn) = encode_prompted(prompted, gnn)?;
    let readout_norm = readout.dot(&readout).sqrt();
    if !(readout_norm > NORM_EPS) {
        return Err(Error::Degenerate(format!("graph readout norm {readout_norm:e}")));
    }
    let normalized = &readout / readout_norm;
    let projected = project(&normalized, &state.projector.weight, &state.projector.bias)?;
    let output = if renormalize {
        let n = projected.dot(&projected).sqrt();
        if !(n > NORM_EPS) {
            return Err(Error::Degenerate("projected graph embedding is zero".into()));
        }
        &projected / n
    } else {
        projected.clone()
    };
    Ok(GraphTape {
        prompted: prompted.clone(),
        gcn,
        readout,
        readout_norm,
        normalized,
        projected,
        output,
    })
}

/// Graph embedding `z^G` in the text space.
pub fn graph_branch(graph: &Graph, state: &PromptState, gnn: &FrozenGnn) -> Result<Array1<f64>> {
    let prompted = build_prompted(graph, &state.graph_prompt, state.style)?;
    Ok(graph_forward(&prompted, state, gnn, false)?.output)
}

/// Per-sample graph-branch gradient contributions.
#[derive(Debug, Clone)]
struct GraphGrad {
    prompt: Array2<f64>,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

/// Gradient of the prompt rows given `d_gcn_out` on the encoder output rows.
fn prompt_rows_grad(tape: &ForwardTape, d_h2: &Array2<f64>, num_prompt: usize, gnn: &FrozenGnn) -> Result<Array2<f64>> {
    let d_x = gcn_backward_features(tape, d_h2, gnn)?;
    Ok(d_x.slice(s![..num_prompt, ..]).to_owned())
}

fn graph_backward(tape: &GraphTape, d_out: &Array1<f64>, state: &PromptState, gnn: &FrozenGnn, renormalize: bool) -> Result<GraphGrad> {
    let d_projected = if renormalize {
        let n = tape.projected.dot(&tape.projected).sqrt();
        (d_out - &(&tape.output * tape.output.dot(d_out))) / n
    } else {
        d_out.clone()
    };
    let d_pre = &d_projected * &tape.projected.mapv(|z| 1.0 - z * z);
    let weight = outer(&d_pre, &tape.normalized);
    let d_normalized = state.projector.weight.t().dot(&d_pre);
    let v = &tape.normalized;
    let d_readout = (&d_normalized - &(v * v.dot(&d_normalized))) / tape.readout_norm;
    let d_h2 = readout_mean_backward(&d_readout, tape.prompted.num_nodes());
    let prompt = prompt_rows_grad(&tape.gcn, &d_h2, tape.prompted.num_prompt(), gnn)?;
    Ok(GraphGrad {
        prompt,
        weight,
        bias: d_pre,
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Intermediates of the text branch over a candidate label set.
#[derive(Debug, Clone)]
pub struct TextTape {
    token_counts: Vec<usize>,
    norm: LabelNormTape,
}

/// Centered, normalized text embeddings `z^t_c` for every candidate label.
pub fn label_embeddings<S: AsRef<str>>(
    candidates: &[S],
    state: &PromptState,
    store: &TextEmbeddingStore,
) -> Result<(Vec<Array1<f64>>, TextTape)> {
    let mut raw = Vec::with_capacity(candidates.len());
    let mut token_counts = Vec::with_capacity(candidates.len());
    for label in candidates {
        raw.push(prompted_text_embedding(label.as_ref(), &state.text_prompt, store)?);
        token_counts.push(store.tokens(label.as_ref())?.nrows());
    }
    let (z, norm) = center_normalize_labels(&raw)?;
    Ok((z, TextTape { token_counts, norm }))
}

fn text_backward(tape: &TextTape, d_z: &[Array1<f64>], d_prompt: &mut Array2<f64>) {
    let d_h = center_normalize_backward(&tape.norm, d_z);
    for (g, &k) in d_h.iter().zip(&tape.token_counts) {
        prompted_text_backward(g, k, d_prompt);
    }
}

/// Build the prompted graphs of a batch from the current graph prompt.
pub fn prompt_batch(graphs: &[&Graph], state: &PromptState) -> Result<Vec<PromptedGraph>> {
    graphs
        .par_iter()
        .map(|g| build_prompted(g, &state.graph_prompt, state.style))
        .collect()
}

/// Contrastive objective for a batch whose prompted structures are fixed.
/// Prompt rows of each structure are refreshed from `state` first, so the
/// result is a smooth function of every parameter.
///
/// `labels[i]` indexes `candidates`, the label set used for centering.
pub fn morpher_objective<S: AsRef<str> + Sync>(
    prompted: &[PromptedGraph],
    labels: &[usize],
    candidates: &[S],
    state: &PromptState,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
    renormalize: bool,
    with_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    if prompted.len() != labels.len() || prompted.is_empty() {
        return Err(Error::InvalidArgument("empty or mismatched batch".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= candidates.len()) {
        return Err(Error::Label(format!("label {y} outside {} candidates", candidates.len())));
    }
    let tapes: Vec<GraphTape> = prompted
        .par_iter()
        .map(|pg| graph_forward(&pg.with_tokens(&state.graph_prompt.tokens)?, state, gnn, renormalize))
        .collect::<Result<_>>()?;
    let (z_labels, text_tape) = label_embeddings(candidates, state, store)?;
    let z_graph: Vec<Array1<f64>> = tapes.iter().map(|t| t.output.clone()).collect();
    let z_text: Vec<Array1<f64>> = labels.iter().map(|&y| z_labels[y].clone()).collect();
    let cg = contrastive_loss_with_grad(&z_graph, &z_text, state.tau)?;
    if !with_grad {
        return Ok((cg.loss, None));
    }

    let mut grads = Gradients::zeros_like(state);
    let mut d_labels = vec![Array1::zeros(state.text_dim()); candidates.len()];
    for (&y, d) in labels.iter().zip(&cg.d_text) {
        d_labels[y] += d;
    }
    text_backward(&text_tape, &d_labels, &mut grads.text_prompt);

    let per_sample: Vec<GraphGrad> = tapes
        .par_iter()
        .zip(cg.d_graph.par_iter())
        .map(|(tape, d)| graph_backward(tape, d, state, gnn, renormalize))
        .collect::<Result<_>>()?;
    for g in per_sample {
        grads.graph_prompt += &g.prompt;
        grads.projector_weight += &g.weight;
        grads.projector_bias += &g.bias;
    }
    Ok((cg.loss, Some(grads)))
}

/// Loss and exact gradients for every parameter block on one batch, with
/// structures built from the current graph prompt.
pub fn backward_all<S: AsRef<str> + Sync>(
    batch: &[(&Graph, usize)],
    candidates: &[S],
    state: &PromptState,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
) -> Result<(f64, Gradients)> {
    let graphs: Vec<&Graph> = batch.iter().map(|(g, _)| *g).collect();
    let labels: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
    let prompted = prompt_batch(&graphs, state)?;
    let (loss, grads) = morpher_objective(&prompted, &labels, candidates, state, gnn, store, false, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Head logits `W_h h + b_h` on the raw readout.
pub fn head_logits(readout: &Array1<f64>, state: &PromptState) -> Result<Array1<f64>> {
    let head = state
        .head
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("state has no task head".into()))?;
    if head.weight.ncols() != readout.len() {
        return Err(Error::Dimension("task head width".into()));
    }
    Ok(head.weight.dot(readout) + &head.bias)
}

/// Softmax cross-entropy of the single-modal baseline on fixed structures.
pub fn baseline_objective(
    prompted: &[PromptedGraph],
    labels: &[usize],
    state: &PromptState,
    gnn: &FrozenGnn,
    with_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    if prompted.len() != labels.len() || prompted.is_empty() {
        return Err(Error::InvalidArgument("empty or mismatched batch".into()));
    }
    let forward: Vec<(PromptedGraph, Array1<f64>, ForwardTape)> = prompted
        .par_iter()
        .map(|pg| {
            let pg = pg.with_tokens(&state.graph_prompt.tokens)?;
            let (readout, tape) = encode_prompted(&pg, gnn)?;
            Ok((pg, readout, tape))
        })
        .collect::<Result<_>>()?;
    let classes = state.head.as_ref().map_or(0, |h| h.num_classes());
    let mut logits = Array2::zeros((prompted.len(), classes));
    for (i, (_, readout, _)) in forward.iter().enumerate() {
        logits.row_mut(i).assign(&head_logits(readout, state)?);
    }
    let (loss, d_logits) = cross_entropy_with_grad(&logits, labels)?;
    if !with_grad {
        return Ok((loss, None));
    }
    let head = state.head.as_ref().expect("checked by head_logits");
    let mut grads = Gradients::zeros_like(state);
    let per_sample: Vec<Array2<f64>> = forward
        .par_iter()
        .enumerate()
        .map(|(i, (pg, _, tape))| {
            let d_readout = head.weight.t().dot(&d_logits.row(i));
            let d_h2 = readout_mean_backward(&d_readout, pg.num_nodes());
            prompt_rows_grad(tape, &d_h2, pg.num_prompt(), gnn)
        })
        .collect::<Result<_>>()?;
    let hw = grads.head_weight.as_mut().expect("head present");
    let hb = grads.head_bias.as_mut().expect("head present");
    for (i, (_, readout, _)) in forward.iter().enumerate() {
        let d = d_logits.row(i).to_owned();
        *hw += &outer(&d, readout);
        *hb += &d;
    }
    for g in per_sample {
        grads.graph_prompt += &g;
    }
    Ok((loss, Some(grads)))
}
