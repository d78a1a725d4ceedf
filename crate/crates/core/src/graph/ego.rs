//! Ego-graph induction, used to turn node and edge tasks into graph tasks.

use std::collections::VecDeque;

use ndarray::Array2;

use super::{DatasetBundle, Graph, Splits, TaskLevel};
use crate::error::{Error, Result};

/// Hop count that reaches every node connected to the centers.
pub const UNBOUNDED_HOPS: usize = usize::MAX;

/// Induce the subgraph on all nodes within `hops` of any center.
///
/// One center gives a node-task ego-graph; two centers (the endpoints of an
/// edge) give the union of both neighborhoods. Local nodes are ordered by
/// source id, features are copied unmodified, and the node-id map plus the
/// local center indices are kept on the result.
pub fn induce_ego_graph(source: &Graph, centers: &[usize], hops: usize) -> Result<Graph> {
    if centers.is_empty() || centers.len() > 2 {
        return Err(Error::InvalidArgument(format!(
            "ego-graph needs 1 or 2 centers, got {}",
            centers.len()
        )));
    }
    let n = source.num_nodes();
    if let Some(&c) = centers.iter().find(|&&c| c >= n) {
        return Err(Error::NodeOutOfRange {
            index: c,
            num_nodes: n,
        });
    }

    let adj = source.neighbors();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &c in centers {
        if dist[c] != 0 {
            dist[c] = 0;
            queue.push_back(c);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] >= hops {
            continue;
        }
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }

    let node_ids: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX).collect();
    let mut local = vec![usize::MAX; n];
    for (i, &v) in node_ids.iter().enumerate() {
        local[v] = i;
    }
    let edges: Vec<(usize, usize)> = source
        .edges()
        .iter()
        .filter(|&&(u, v)| local[u] != usize::MAX && local[v] != usize::MAX)
        .map(|&(u, v)| (local[u], local[v]))
        .collect();
    let d = source.feature_dim();
    let mut features = Array2::zeros((node_ids.len(), d));
    for (i, &v) in node_ids.iter().enumerate() {
        features.row_mut(i).assign(&source.features().row(v));
    }
    let mut local_centers: Vec<usize> = centers.iter().map(|&c| local[c]).collect();
    local_centers.dedup();
    Ok(Graph::new(node_ids.len(), &edges, features)?.with_origin(node_ids, local_centers))
}

/// One node or edge classification target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoTask {
    /// One node (node task) or two endpoints (edge task).
    pub centers: Vec<usize>,
    pub label: usize,
}

/// Reformulate node or edge labels on `source` as a graph classification
/// bundle of `hops`-hop ego-graphs. The task level is inferred from the
/// number of centers and must be uniform.
pub fn ego_graph_dataset(
    source: &Graph,
    tasks: &[EgoTask],
    label_texts: Vec<String>,
    hops: usize,
) -> Result<DatasetBundle> {
    let level = match tasks.first().map(|t| t.centers.len()) {
        Some(1) | None => TaskLevel::Node,
        Some(2) => TaskLevel::Edge,
        Some(k) => {
            return Err(Error::InvalidArgument(format!(
                "ego task with {k} centers"
            )))
        }
    };
    let expected = if level == TaskLevel::Node { 1 } else { 2 };
    let mut graphs = Vec::with_capacity(tasks.len());
    let mut labels = Vec::with_capacity(tasks.len());
    for task in tasks {
        if task.centers.len() != expected {
            return Err(Error::InvalidArgument(
                "mixed node and edge tasks in one dataset".into(),
            ));
        }
        graphs.push(induce_ego_graph(source, &task.centers, hops)?);
        labels.push(task.label);
    }
    DatasetBundle::new(graphs, labels, label_texts, Splits::default(), level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn path5() -> Graph {
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64);
        Graph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], x).unwrap()
    }

    #[test]
    fn one_hop_on_a_path() {
        let ego = induce_ego_graph(&path5(), &[2], 1).unwrap();
        assert_eq!(ego.node_ids().unwrap(), &[1, 2, 3]);
        // local ids 0,1,2 correspond to source 1,2,3
        assert_eq!(ego.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(ego.centers(), &[1]);
        assert_eq!(ego.features().row(0).to_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn zero_hops_is_the_center_alone() {
        let ego = induce_ego_graph(&path5(), &[3], 0).unwrap();
        assert_eq!(ego.num_nodes(), 1);
        assert_eq!(ego.num_edges(), 0);
        assert_eq!(ego.node_ids().unwrap(), &[3]);
    }

    /// Brute force: node set is every node within `hops` of either center by
    /// Floyd–Warshall distances; edges are all source edges inside the set.
    fn brute_force(g: &Graph, centers: &[usize], hops: usize) -> (BTreeSet<usize>, BTreeSet<(usize, usize)>) {
        let n = g.num_nodes();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for &(u, v) in g.edges() {
            d[u][v] = 1;
            d[v][u] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        let nodes: BTreeSet<usize> = (0..n)
            .filter(|&v| centers.iter().any(|&c| d[c][v] <= hops))
            .collect();
        let edges = g
            .edges()
            .iter()
            .copied()
            .filter(|(u, v)| nodes.contains(u) && nodes.contains(v))
            .collect();
        (nodes, edges)
    }

    fn source_view(ego: &Graph) -> (BTreeSet<usize>, BTreeSet<(usize, usize)>) {
        let ids = ego.node_ids().unwrap();
        let nodes = ids.iter().copied().collect();
        let edges = ego.edges().iter().map(|&(u, v)| (ids[u], ids[v])).collect();
        (nodes, edges)
    }

    #[test]
    fn two_centers_on_a_triangle() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], Array2::zeros((3, 1))).unwrap();
        let ego = induce_ego_graph(&g, &[0, 2], 0).unwrap();
        let expected = brute_force(&g, &[0, 2], 0);
        assert_eq!(source_view(&ego), expected);
        assert_eq!(expected.0, BTreeSet::from([0, 2]));
        assert_eq!(expected.1, BTreeSet::from([(0, 2)]));
    }

    #[test]
    fn matches_brute_force_on_a_random_graph() {
        use rand::Rng;
        let mut rng = crate::seed::rng(11);
        let n = 30;
        let edges: Vec<(usize, usize)> = (0..45)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .filter(|(u, v)| u != v)
            .collect();
        let g = Graph::new(n, &edges, Array2::zeros((n, 1))).unwrap();
        for hops in 0..4 {
            for centers in [vec![0], vec![5, 17], vec![29]] {
                let ego = induce_ego_graph(&g, &centers, hops).unwrap();
                assert_eq!(source_view(&ego), brute_force(&g, &centers, hops));
            }
        }
    }

    #[test]
    fn center_out_of_range() {
        assert!(matches!(
            induce_ego_graph(&path5(), &[9], 1),
            Err(Error::NodeOutOfRange { index: 9, .. })
        ));
    }

    #[test]
    fn edge_task_dataset_records_level() {
        let tasks = vec![
            EgoTask { centers: vec![0, 1], label: 0 },
            EgoTask { centers: vec![3, 4], label: 1 },
        ];
        let bundle = ego_graph_dataset(&path5(), &tasks, vec!["a".into(), "b".into()], 1).unwrap();
        assert_eq!(bundle.task_level(), TaskLevel::Edge);
        assert_eq!(bundle.graphs()[1].node_ids().unwrap(), &[2, 3, 4]);
    }
}
