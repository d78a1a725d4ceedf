//! Finite-difference check of every analytic gradient block.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gnn::{init_gnn_random, FrozenGnn};
use crate::graph::Graph;
use crate::prompt::{init_graph_prompt, PromptStyle, PromptedGraph};
use crate::seed;
use crate::text::{init_text_prompt, PhraseSource, TextEmbeddingStore};
use crate::train::{
    baseline_objective, morpher_objective, prompt_batch, Gradients, Projector, PromptState, TaskHead,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Worst relative error seen for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    pub worst_relative_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.worst_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.blocks.iter().all(|b| b.worst_relative_error < tolerance)
    }
}

const MORPHER_BLOCKS: [&str; 4] = ["graph_prompt", "text_prompt", "projector_weight", "projector_bias"];
const HEAD_BLOCKS: [(&str, usize); 3] = [("head/graph_prompt", 0), ("head/weight", 4), ("head/bias", 5)];

/// `max |a - n| / max(|a|_inf, |n|_inf, 1e-6)` over one block.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-6, f64::max);
    diff / scale
}

/// Central differences of `loss` with respect to block `block` of `state`.
pub fn numeric_gradient<F>(state: &PromptState, block: usize, step: f64, loss: F) -> Result<Vec<f64>>
where
    F: Fn(&PromptState) -> Result<f64>,
{
    let len = state.clone().blocks_mut()[block].len();
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        let mut plus = state.clone();
        plus.blocks_mut()[block][j] += step;
        let mut minus = state.clone();
        minus.blocks_mut()[block][j] -= step;
        out.push((loss(&plus)? - loss(&minus)?) / (2.0 * step));
    }
    Ok(out)
}

struct Instance {
    graphs: Vec<Graph>,
    labels: Vec<usize>,
    candidates: Vec<String>,
    gnn: FrozenGnn,
    store: TextEmbeddingStore,
    state: PromptState,
    renormalize: bool,
}

fn random_graph(rng: &mut impl Rng, d: usize) -> Result<Graph> {
    let n = rng.random_range(3..=6);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for _ in 0..rng.random_range(0..=n) {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            edges.push((u.min(v), u.max(v)));
        }
    }
    let x = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut *rng));
    Graph::new(n, &edges, x)
}

fn instance(root: u64, index: usize) -> Result<Instance> {
    let s = seed::derive_seed(root, &format!("gradcheck-{index}"));
    let mut rng = seed::rng(s);
    let (d, h, d_g, d_t) = (rng.random_range(3..=5), 6, 5, 6);
    let num_labels = rng.random_range(2..=3);
    let candidates: Vec<String> = (0..num_labels).map(|c| format!("label {c}")).collect();
    // Distinct token counts: with two equal counts the text prompt cancels
    // out of the centered difference and its gradient is exactly zero.
    let mut counts = vec![1, 2, 3, 4];
    counts.shuffle(&mut rng);
    let entries = candidates
        .iter()
        .zip(counts)
        .map(|(c, k)| {
            let t = Array2::<f64>::from_shape_simple_fn((k, d_t), || StandardNormal.sample(&mut rng));
            (c.clone(), t)
        })
        .collect();
    let store = TextEmbeddingStore::new(entries)?;
    let graphs = (0..4).map(|_| random_graph(&mut rng, d)).collect::<Result<Vec<_>>>()?;
    // At least two distinct labels, otherwise the in-batch loss is constant.
    let labels = (0..4)
        .map(|i| if i < 2 { i } else { rng.random_range(0..num_labels) })
        .collect();
    let style = if index.is_multiple_of(2) { PromptStyle::Improved } else { PromptStyle::Aio };
    let mut projector = Projector::init(d_t, d_g, seed::derive_seed(s, "projector"));
    projector.bias = (0..d_t).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let state = PromptState {
        graph_prompt: init_graph_prompt(3, d, seed::derive_seed(s, "graph-prompt"), 1.0)?
            .with_thresholds(0.5, style.default_delta_cross())?,
        style,
        text_prompt: init_text_prompt(None, 2, d_t, PhraseSource::Store(&store), seed::derive_seed(s, "text"))?,
        projector,
        tau: 0.07 + rng.random_range(0.0..0.5),
        head: Some(TaskHead::init(num_labels, d_g, seed::derive_seed(s, "head"))),
    };
    Ok(Instance {
        graphs,
        labels,
        candidates,
        gnn: init_gnn_random(d, h, d_g, seed::derive_seed(s, "gnn"))?,
        store,
        state,
        renormalize: index % 4 == 3,
    })
}

fn update(worst: &mut [BlockError], k: usize, analytic: &[f64], numeric: &[f64]) {
    let e = relative_error(analytic, numeric);
    worst[k].worst_relative_error = worst[k].worst_relative_error.max(e);
    worst[k].checked += analytic.len();
}

/// Compare analytic and central-difference gradients on seeded random
/// instances, holding each instance's prompted structure fixed. Covers the
/// four contrastive blocks and, on the same instances, the task-head path.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let names = MORPHER_BLOCKS.iter().copied().chain(HEAD_BLOCKS.iter().map(|(n, _)| *n));
    let mut blocks: Vec<BlockError> = names
        .map(|n| BlockError {
            block: n.to_owned(),
            worst_relative_error: 0.0,
            checked: 0,
        })
        .collect();
    for index in 0..config.instances {
        let inst = instance(config.seed, index)?;
        let refs: Vec<&Graph> = inst.graphs.iter().collect();
        let prompted: Vec<PromptedGraph> = prompt_batch(&refs, &inst.state)?;

        let morpher = |s: &PromptState| -> Result<f64> {
            let (loss, _) = morpher_objective(
                &prompted,
                &inst.labels,
                &inst.candidates,
                s,
                &inst.gnn,
                &inst.store,
                inst.renormalize,
                false,
            )?;
            Ok(loss)
        };
        let (_, grads) = morpher_objective(
            &prompted,
            &inst.labels,
            &inst.candidates,
            &inst.state,
            &inst.gnn,
            &inst.store,
            inst.renormalize,
            true,
        )?;
        let grads: Gradients = grads.expect("gradients requested");
        for (k, analytic) in grads.blocks().iter().take(4).enumerate() {
            let numeric = numeric_gradient(&inst.state, k, config.step, morpher)?;
            update(&mut blocks, k, analytic, &numeric);
        }

        let head = |s: &PromptState| -> Result<f64> { Ok(baseline_objective(&prompted, &inst.labels, s, &inst.gnn, false)?.0) };
        let (_, grads) = baseline_objective(&prompted, &inst.labels, &inst.state, &inst.gnn, true)?;
        let grads = grads.expect("gradients requested");
        let all = grads.blocks();
        for (i, &(_, block)) in HEAD_BLOCKS.iter().enumerate() {
            let numeric = numeric_gradient(&inst.state, block, config.step, head)?;
            update(&mut blocks, 4 + i, all[block], &numeric);
        }
    }
    Ok(GradcheckReport {
        instances: config.instances,
        blocks,
    })
}
