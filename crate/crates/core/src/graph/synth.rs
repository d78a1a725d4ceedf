//! Seeded synthetic datasets: the three-class zero-shot construction, a
//! linearly separable fixture, and a one-hot structural fixture.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{induce_ego_graph, DatasetBundle, Graph, Splits, TaskLevel};
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of the zero-shot dataset built from a source network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSpec {
    pub base_edges: Vec<(usize, usize)>,
    pub num_samples: usize,
    pub hops: usize,
    pub train_per_class: usize,
    pub num_test: usize,
    /// Two seen classes followed by the unseen one.
    pub label_texts: [String; 3],
    pub seed: u64,
}

impl ZeroShotSpec {
    pub fn new(base_edges: Vec<(usize, usize)>, label_texts: [String; 3], seed: u64) -> Self {
        Self {
            base_edges,
            num_samples: 120,
            hops: 2,
            train_per_class: 10,
            num_test: 100,
            label_texts,
            seed,
        }
    }
}

/// Random spanning tree over `n` nodes followed by `extra` additional random
/// edges (duplicates and self-loops are redrawn a bounded number of times).
fn random_sparse_edges(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        set.insert((u, v));
    }
    let max_edges = n * (n - 1) / 2;
    let target = (set.len() + extra).min(max_edges);
    let mut attempts = 0;
    while set.len() < target && attempts < 50 * (extra + 1) {
        attempts += 1;
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            set.insert((u.min(v), u.max(v)));
        }
    }
    set.into_iter().collect()
}

/// Seeded random network: a spanning tree plus `extra_edges` random edges.
pub fn random_base_network(num_nodes: usize, extra_edges: usize, seed: u64) -> Vec<(usize, usize)> {
    if num_nodes < 2 {
        return Vec::new();
    }
    let mut rng = seed::rng_for(seed, "base-network");
    random_sparse_edges(num_nodes, extra_edges, &mut rng)
}

/// Build the three-class zero-shot dataset.
///
/// Ego-graphs are induced around distinct random centers. The first
/// `train_per_class` get feature `[1, 0]` on every node (class 0), the next
/// `train_per_class` get `[0, 1]` (class 1), and the rest get a uniformly
/// random choice of the two per node (class 2, the unseen label). The seen
/// graphs form the train split, the rest the test split; val is empty.
/// Self-loops in the base edge list are dropped.
pub fn generate_zero_dataset(spec: &ZeroShotSpec) -> Result<DatasetBundle> {
    if spec.num_samples != 2 * spec.train_per_class + spec.num_test {
        return Err(Error::InvalidArgument(format!(
            "num_samples {} != 2 * {} train + {} test",
            spec.num_samples, spec.train_per_class, spec.num_test
        )));
    }
    let num_nodes = spec
        .base_edges
        .iter()
        .map(|&(u, v)| u.max(v) + 1)
        .max()
        .unwrap_or(0);
    if num_nodes < spec.num_samples {
        return Err(Error::InsufficientSamples(format!(
            "base network has {num_nodes} nodes, {} samples requested",
            spec.num_samples
        )));
    }
    let edges: Vec<(usize, usize)> = spec.base_edges.iter().copied().filter(|(u, v)| u != v).collect();
    let base = Graph::new(num_nodes, &edges, Array2::zeros((num_nodes, 2)))?;

    let mut center_rng = seed::rng_for(spec.seed, "zero/centers");
    let mut feature_rng = seed::rng_for(spec.seed, "zero/features");
    let centers = sample(&mut center_rng, num_nodes, spec.num_samples).into_vec();

    let mut graphs = Vec::with_capacity(spec.num_samples);
    let mut labels = Vec::with_capacity(spec.num_samples);
    for (i, &center) in centers.iter().enumerate() {
        let ego = induce_ego_graph(&base, &[center], spec.hops)?;
        let n = ego.num_nodes();
        let class = if i < spec.train_per_class {
            0
        } else if i < 2 * spec.train_per_class {
            1
        } else {
            2
        };
        let features = match class {
            0 => Array2::from_shape_fn((n, 2), |(_, j)| if j == 0 { 1.0 } else { 0.0 }),
            1 => Array2::from_shape_fn((n, 2), |(_, j)| if j == 1 { 1.0 } else { 0.0 }),
            _ => {
                let mut x = Array2::zeros((n, 2));
                for mut row in x.rows_mut() {
                    row[usize::from(feature_rng.random_bool(0.5))] = 1.0;
                }
                x
            }
        };
        graphs.push(ego.with_features(features)?);
        labels.push(class);
    }
    let n_train = 2 * spec.train_per_class;
    let splits = Splits {
        train: (0..n_train).collect(),
        val: Vec::new(),
        test: (n_train..spec.num_samples).collect(),
    };
    DatasetBundle::new(graphs, labels, spec.label_texts.to_vec(), splits, TaskLevel::Node)
}

/// Parameters for [`generate_separable_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableSpec {
    pub n_graphs: usize,
    pub nodes_per_graph: usize,
    pub feature_dim: usize,
    pub classes: usize,
    /// Standard deviation of the Gaussian noise added to every feature entry.
    pub noise: f64,
    pub seed: u64,
}

/// Graph `i` belongs to class `i mod C`; every node of a class-`c` graph has
/// feature `e_c` plus Gaussian noise. Structure is a random tree with a few
/// extra edges and carries no class information.
pub fn generate_separable_dataset(spec: &SeparableSpec) -> Result<DatasetBundle> {
    if spec.classes == 0 || spec.classes > spec.feature_dim {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= classes <= feature dimension, got {} classes for d = {}",
            spec.classes, spec.feature_dim
        )));
    }
    if spec.nodes_per_graph == 0 {
        return Err(Error::InvalidArgument("nodes_per_graph must be positive".into()));
    }
    let mut rng = seed::rng_for(spec.seed, "separable");
    let n = spec.nodes_per_graph;
    let mut graphs = Vec::with_capacity(spec.n_graphs);
    let mut labels = Vec::with_capacity(spec.n_graphs);
    for i in 0..spec.n_graphs {
        let class = i % spec.classes;
        let edges = if n > 1 { random_sparse_edges(n, n / 2, &mut rng) } else { Vec::new() };
        let mut x = Array2::zeros((n, spec.feature_dim));
        for mut row in x.rows_mut() {
            row[class] = 1.0;
            if spec.noise > 0.0 {
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.noise * z;
                }
            }
        }
        graphs.push(Graph::new(n, &edges, x)?);
        labels.push(class);
    }
    let texts = (0..spec.classes).map(|c| format!("class {c}")).collect();
    DatasetBundle::new(graphs, labels, texts, Splits::default(), TaskLevel::Graph)
}

/// Parameters for [`generate_one_hot_structural`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotSpec {
    pub n_graphs: usize,
    pub nodes_per_graph: usize,
    pub feature_dim: usize,
    pub classes: usize,
    /// Class `c` graphs get `c * extra_edges_per_class` edges on top of a
    /// random spanning tree.
    pub extra_edges_per_class: usize,
    /// Give every graph the same feature histogram (node `i` gets category
    /// `i mod d` before shuffling), so graphs differ only in structure.
    #[serde(default)]
    pub balanced: bool,
    pub seed: u64,
}

/// Graphs whose node features are uniformly random one-hot rows (row L1 norm
/// 1); the class is carried only by edge density.
pub fn generate_one_hot_structural(spec: &OneHotSpec) -> Result<DatasetBundle> {
    if spec.classes == 0 || spec.feature_dim == 0 || spec.nodes_per_graph < 2 {
        return Err(Error::InvalidArgument(
            "one-hot fixture needs classes >= 1, d >= 1, at least 2 nodes per graph".into(),
        ));
    }
    let mut rng = seed::rng_for(spec.seed, "one-hot");
    let n = spec.nodes_per_graph;
    let mut graphs = Vec::with_capacity(spec.n_graphs);
    let mut labels = Vec::with_capacity(spec.n_graphs);
    for i in 0..spec.n_graphs {
        let class = i % spec.classes;
        let edges = random_sparse_edges(n, class * spec.extra_edges_per_class, &mut rng);
        let categories: Vec<usize> = if spec.balanced {
            let mut c: Vec<usize> = (0..n).map(|i| i % spec.feature_dim).collect();
            c.shuffle(&mut rng);
            c
        } else {
            (0..n).map(|_| rng.random_range(0..spec.feature_dim)).collect()
        };
        let mut x = Array2::zeros((n, spec.feature_dim));
        for (mut row, c) in x.rows_mut().into_iter().zip(categories) {
            row[c] = 1.0;
        }
        graphs.push(Graph::new(n, &edges, x)?);
        labels.push(class);
    }
    let texts = (0..spec.classes).map(|c| format!("structure {c}")).collect();
    DatasetBundle::new(graphs, labels, texts, Splits::default(), TaskLevel::Graph)
}
