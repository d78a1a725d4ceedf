//! Graph prompts: learnable token rows inserted into an input graph as extra
//! nodes, wired by inner edges (token–token) and cross edges (node–token).
//!
//! Two constructions are provided. [`PromptStyle::Aio`] thresholds the
//! sigmoid of raw dot products for both edge kinds. [`PromptStyle::Improved`]
//! keeps the inner rule but ranks tokens by cosine similarity per input node
//! and caps each node at `max(1, ⌊n_e / n⌋)` tokens, so the total number of
//! cross edges never exceeds `max(n, n_e)`.
//!
//! Edges are structure only: they are recomputed from the current tokens on
//! every forward pass and never receive gradient.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed;

pub const DEFAULT_DELTA_INNER: f64 = 0.5;
pub const DEFAULT_DELTA_CROSS_IMPROVED: f64 = 0.1;
pub const DEFAULT_DELTA_CROSS_AIO: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    Aio,
    #[default]
    Improved,
}

impl PromptStyle {
    pub fn default_delta_cross(self) -> f64 {
        match self {
            PromptStyle::Aio => DEFAULT_DELTA_CROSS_AIO,
            PromptStyle::Improved => DEFAULT_DELTA_CROSS_IMPROVED,
        }
    }
}

/// Learnable prompt token matrix (`n_g × d`) and its edge thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPrompt {
    pub tokens: Array2<f64>,
    pub delta_inner: f64,
    /// Sigmoid threshold for AIO, cosine threshold for Improved.
    pub delta_cross: f64,
    pub init_std_multiplier: f64,
}

impl GraphPrompt {
    pub fn new(tokens: Array2<f64>, delta_inner: f64, delta_cross: f64) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::InvalidArgument("graph prompt needs n_g >= 1 and d >= 1".into()));
        }
        if !(delta_inner > 0.0 && delta_inner < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta_inner must lie in (0, 1), got {delta_inner}"
            )));
        }
        if !delta_cross.is_finite() {
            return Err(Error::InvalidArgument("delta_cross must be finite".into()));
        }
        Ok(Self {
            tokens,
            delta_inner,
            delta_cross,
            init_std_multiplier: 1.0,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn with_thresholds(mut self, delta_inner: f64, delta_cross: f64) -> Result<Self> {
        let checked = Self::new(std::mem::take(&mut self.tokens), delta_inner, delta_cross)?;
        Ok(Self {
            init_std_multiplier: self.init_std_multiplier,
            ..checked
        })
    }
}

/// Kaiming-uniform token init: entries uniform in `±√(6/d)·m`.
///
/// `m > 1` gives the high-variance ablation. The multiplier is applied after
/// sampling, so the same seed with `m = 3` yields exactly three times the
/// `m = 1` matrix.
pub fn init_graph_prompt(n_g: usize, d: usize, seed: u64, std_multiplier: f64) -> Result<GraphPrompt> {
    if n_g == 0 || d == 0 {
        return Err(Error::InvalidArgument("graph prompt needs n_g >= 1 and d >= 1".into()));
    }
    let mut rng = seed::rng(seed);
    let bound = (6.0 / d as f64).sqrt();
    let tokens = Array2::from_shape_simple_fn((n_g, d), || rng.random_range(-1.0..=1.0) * bound * std_multiplier);
    let mut prompt = GraphPrompt::new(tokens, DEFAULT_DELTA_INNER, DEFAULT_DELTA_CROSS_IMPROVED)?;
    prompt.init_std_multiplier = std_multiplier;
    Ok(prompt)
}

/// Gaussian token init with the given standard deviation (near-zero init).
pub fn init_graph_prompt_normal(n_g: usize, d: usize, std: f64, seed: u64) -> Result<GraphPrompt> {
    if n_g == 0 || d == 0 {
        return Err(Error::InvalidArgument("graph prompt needs n_g >= 1 and d >= 1".into()));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let tokens = Array2::from_shape_simple_fn((n_g, d), || normal.sample(&mut rng));
    GraphPrompt::new(tokens, DEFAULT_DELTA_INNER, DEFAULT_DELTA_CROSS_AIO)
}

/// Edge structure linking prompt tokens to an input graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptStructure {
    /// Token pairs `(i, j)`, `i < j`.
    pub inner: Vec<(usize, usize)>,
    /// `(input node, token)` pairs.
    pub cross: Vec<(usize, usize)>,
}

/// Input graph merged with prompt tokens. Rows `0..n_g` are prompt tokens,
/// rows `n_g..n_g + n` are the original nodes in their original order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptedGraph {
    num_prompt: usize,
    num_input: usize,
    structure: PromptStructure,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
}

impl PromptedGraph {
    /// Merge `graph` and `tokens` under a given structure.
    pub fn assemble(graph: &Graph, tokens: &Array2<f64>, structure: PromptStructure) -> Result<Self> {
        check_dims(graph, tokens)?;
        let n_g = tokens.nrows();
        let n = graph.num_nodes();
        let mut edges = Vec::with_capacity(structure.inner.len() + structure.cross.len() + graph.num_edges());
        for &(i, j) in &structure.inner {
            if i >= j || j >= n_g {
                return Err(Error::InvalidArgument(format!("bad inner edge ({i}, {j})")));
            }
            edges.push((i, j));
        }
        for &(node, token) in &structure.cross {
            if node >= n || token >= n_g {
                return Err(Error::InvalidArgument(format!("bad cross edge ({node}, {token})")));
            }
            edges.push((token, n_g + node));
        }
        edges.extend(graph.edges().iter().map(|&(u, v)| (n_g + u, n_g + v)));
        let mut features = Array2::zeros((n_g + n, graph.feature_dim()));
        features.slice_mut(ndarray::s![..n_g, ..]).assign(tokens);
        features.slice_mut(ndarray::s![n_g.., ..]).assign(graph.features());
        Ok(Self {
            num_prompt: n_g,
            num_input: n,
            structure,
            edges,
            features,
        })
    }

    /// Same structure with different token rows (used by finite-difference checks).
    pub fn with_tokens(&self, tokens: &Array2<f64>) -> Result<Self> {
        if tokens.dim() != (self.num_prompt, self.features.ncols()) {
            return Err(Error::Dimension("replacement tokens have the wrong shape".into()));
        }
        let mut out = self.clone();
        out.features.slice_mut(ndarray::s![..self.num_prompt, ..]).assign(tokens);
        Ok(out)
    }

    pub fn num_prompt(&self) -> usize {
        self.num_prompt
    }

    pub fn num_input(&self) -> usize {
        self.num_input
    }

    pub fn num_nodes(&self) -> usize {
        self.num_prompt + self.num_input
    }

    pub fn structure(&self) -> &PromptStructure {
        &self.structure
    }

    pub fn inner_edge_count(&self) -> usize {
        self.structure.inner.len()
    }

    pub fn cross_edge_count(&self) -> usize {
        self.structure.cross.len()
    }

    /// All undirected edges of the merged graph, each once.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Stacked features `[P^g; X]`.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Dense symmetric 0/1 adjacency of the merged graph.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut a = Array2::zeros((n, n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }
}

fn check_dims(graph: &Graph, tokens: &Array2<f64>) -> Result<()> {
    if graph.feature_dim() != tokens.ncols() {
        return Err(Error::Dimension(format!(
            "graph features have {} columns, prompt tokens {}",
            graph.feature_dim(),
            tokens.ncols()
        )));
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

fn inner_edges(prompt: &GraphPrompt) -> Vec<(usize, usize)> {
    let t = &prompt.tokens;
    let n_g = t.nrows();
    let mut out = Vec::new();
    for i in 0..n_g {
        for j in i + 1..n_g {
            if sigmoid(t.row(i).dot(&t.row(j))) > prompt.delta_inner {
                out.push((i, j));
            }
        }
    }
    out
}

/// AIO wiring: cross edge iff `σ(x_i · p_j) > δ_cross`.
pub fn aio_structure(graph: &Graph, prompt: &GraphPrompt) -> Result<PromptStructure> {
    check_dims(graph, &prompt.tokens)?;
    let mut cross = Vec::new();
    for (i, x) in graph.features().rows().into_iter().enumerate() {
        for (j, p) in prompt.tokens.rows().into_iter().enumerate() {
            if sigmoid(x.dot(&p)) > prompt.delta_cross {
                cross.push((i, j));
            }
        }
    }
    Ok(PromptStructure {
        inner: inner_edges(prompt),
        cross,
    })
}

/// Per-node token cap of the balanced construction.
pub fn cross_cap(num_nodes: usize, num_edges: usize) -> usize {
    (num_edges / num_nodes.max(1)).max(1)
}

/// Balanced wiring: for every input node keep at most
/// [`cross_cap`] tokens with cosine above `δ_cross`, best first, ties to the
/// lower token index.
pub fn improved_structure(graph: &Graph, prompt: &GraphPrompt) -> Result<PromptStructure> {
    check_dims(graph, &prompt.tokens)?;
    let k = cross_cap(graph.num_nodes(), graph.num_edges());
    let mut cross = Vec::new();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(prompt.num_tokens());
    for (i, x) in graph.features().rows().into_iter().enumerate() {
        scored.clear();
        scored.extend(
            prompt
                .tokens
                .rows()
                .into_iter()
                .enumerate()
                .map(|(j, p)| (cosine(x, p), j))
                .filter(|&(c, _)| c > prompt.delta_cross),
        );
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        cross.extend(scored.iter().take(k).map(|&(_, j)| (i, j)));
    }
    Ok(PromptStructure {
        inner: inner_edges(prompt),
        cross,
    })
}

pub fn build_aio(graph: &Graph, prompt: &GraphPrompt) -> Result<PromptedGraph> {
    PromptedGraph::assemble(graph, &prompt.tokens, aio_structure(graph, prompt)?)
}

pub fn build_improved(graph: &Graph, prompt: &GraphPrompt) -> Result<PromptedGraph> {
    PromptedGraph::assemble(graph, &prompt.tokens, improved_structure(graph, prompt)?)
}

pub fn build_prompted(graph: &Graph, prompt: &GraphPrompt, style: PromptStyle) -> Result<PromptedGraph> {
    match style {
        PromptStyle::Aio => build_aio(graph, prompt),
        PromptStyle::Improved => build_improved(graph, prompt),
    }
}
