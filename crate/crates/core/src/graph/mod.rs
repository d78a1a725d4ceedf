//! Graph representation, dataset bundles and task reformulation.
//!
//! Graphs are undirected and unweighted. Edges are stored once as `(u, v)`
//! with `u < v`; node features are dense `f64` rows.

mod ego;
mod io;
mod split;
mod synth;

pub use ego::{ego_graph_dataset, induce_ego_graph, EgoTask, UNBOUNDED_HOPS};
pub use io::{load_dataset, load_labels, read_edge_list, write_dataset, write_labels, LoadOptions};
pub use split::{few_shot_split, MAX_SHOTS_PER_CLASS};
pub use synth::{
    generate_one_hot_structural, generate_separable_dataset, generate_zero_dataset,
    random_base_network, OneHotSpec, SeparableSpec, ZeroShotSpec,
};

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse undirected graph with dense node features.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    /// Source-graph node id of every local node, when the graph was induced.
    node_ids: Option<Vec<usize>>,
    /// Local indices of the ego centers, when the graph was induced.
    centers: Vec<usize>,
}

impl Graph {
    /// Build a graph, symmetrizing and deduplicating the edge list.
    ///
    /// Self-loops, out-of-range endpoints and non-finite features are rejected.
    pub fn new(num_nodes: usize, edges: &[(usize, usize)], features: Array2<f64>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if features.nrows() != num_nodes {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                num_nodes
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Dimension("feature dimension is zero".into()));
        }
        if let Some(((row, col), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature ({row}, {col}) = {v}")));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            for w in [u, v] {
                if w >= num_nodes {
                    return Err(Error::NodeOutOfRange {
                        index: w,
                        num_nodes,
                    });
                }
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Self {
            num_nodes,
            edges: set.into_iter().collect(),
            features,
            node_ids: None,
            centers: Vec::new(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn node_ids(&self) -> Option<&[usize]> {
        self.node_ids.as_deref()
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Replace the feature matrix, keeping the structure.
    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                self.num_nodes
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("replacement features".into()));
        }
        self.features = features;
        Ok(self)
    }

    /// Right-pad feature rows with zeros up to `dim` columns.
    pub fn pad_features(self, dim: usize) -> Result<Self> {
        let d = self.feature_dim();
        if d > dim {
            return Err(Error::Dimension(format!(
                "cannot pad {d}-dimensional features to {dim}"
            )));
        }
        if d == dim {
            return Ok(self);
        }
        let mut padded = Array2::zeros((self.num_nodes, dim));
        padded
            .slice_mut(ndarray::s![.., ..d])
            .assign(&self.features);
        self.with_features(padded)
    }

    pub(crate) fn with_origin(mut self, node_ids: Vec<usize>, centers: Vec<usize>) -> Self {
        debug_assert_eq!(node_ids.len(), self.num_nodes);
        self.node_ids = Some(node_ids);
        self.centers = centers;
        self
    }
}

/// Which original task a bundle was reformulated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskLevel {
    #[default]
    Graph,
    Node,
    Edge,
}

/// Disjoint train/val/test index lists into a bundle's graphs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Labeled graphs with their label vocabulary and splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    graphs: Vec<Graph>,
    labels: Vec<usize>,
    label_texts: Vec<String>,
    splits: Splits,
    task_level: TaskLevel,
}

impl DatasetBundle {
    pub fn new(
        graphs: Vec<Graph>,
        labels: Vec<usize>,
        label_texts: Vec<String>,
        splits: Splits,
        task_level: TaskLevel,
    ) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(Error::Label(format!(
                "{} graphs but {} labels",
                graphs.len(),
                labels.len()
            )));
        }
        if label_texts.is_empty() {
            return Err(Error::Label("empty label vocabulary".into()));
        }
        let classes = label_texts.len();
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Label(format!(
                "graph {i} has class {y} but only {classes} label texts"
            )));
        }
        if let Some(first) = graphs.first() {
            let d = first.feature_dim();
            if let Some((i, g)) = graphs.iter().enumerate().find(|(_, g)| g.feature_dim() != d) {
                return Err(Error::Dimension(format!(
                    "graph {i} has feature dimension {} but graph 0 has {d}",
                    g.feature_dim()
                )));
            }
        }
        let mut seen = vec![false; graphs.len()];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= graphs.len() {
                return Err(Error::InvalidArgument(format!(
                    "split index {i} out of range for {} graphs",
                    graphs.len()
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "graph {i} appears in more than one split slot"
                )));
            }
        }
        Ok(Self {
            graphs,
            labels,
            label_texts,
            splits,
            task_level,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_texts(&self) -> &[String] {
        &self.label_texts
    }

    pub fn num_classes(&self) -> usize {
        self.label_texts.len()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn task_level(&self) -> TaskLevel {
        self.task_level
    }

    /// Feature dimension shared by every graph (0 for an empty bundle).
    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Same graphs and labels with new splits.
    pub fn with_splits(self, splits: Splits) -> Result<Self> {
        Self::new(
            self.graphs,
            self.labels,
            self.label_texts,
            splits,
            self.task_level,
        )
    }

    /// `(graph, label)` pairs for a list of indices.
    pub fn samples<'a>(&'a self, indices: &'a [usize]) -> impl Iterator<Item = (&'a Graph, usize)> + 'a {
        indices.iter().map(move |&i| (&self.graphs[i], self.labels[i]))
    }
}
