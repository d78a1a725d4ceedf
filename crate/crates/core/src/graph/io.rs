//! JSON-lines dataset files, label files and plain edge lists.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, Graph, Splits, TaskLevel};
use crate::error::{Error, Result};

/// One line of a dataset file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    x: Vec<Vec<f64>>,
    y: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Zero-pad every feature row on the right to this width.
    pub pad_to: Option<usize>,
}

fn parse_record(line: &str, line_no: usize) -> Result<(Graph, usize)> {
    let rec: GraphRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if rec.x.len() != rec.n {
        return Err(Error::Parse {
            line: line_no,
            message: format!("{} feature rows for n = {}", rec.x.len(), rec.n),
        });
    }
    let d = rec.x.first().map_or(0, Vec::len);
    if rec.x.iter().any(|row| row.len() != d) {
        return Err(Error::Parse {
            line: line_no,
            message: "ragged feature rows".into(),
        });
    }
    let flat: Vec<f64> = rec.x.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((rec.n, d), flat).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let edges: Vec<(usize, usize)> = rec.edges.iter().map(|e| (e[0], e[1])).collect();
    let graph = Graph::new(rec.n, &edges, features).map_err(|e| match e {
        Error::InvalidGraph(m) => Error::InvalidGraph(format!("line {line_no}: {m}")),
        other => other,
    })?;
    Ok((graph, rec.y))
}

/// Load a JSON array of label strings.
pub fn load_labels(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if labels.is_empty() {
        return Err(Error::Label(format!("{} holds no labels", path.display())));
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, labels).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Load a dataset file and its label vocabulary.
///
/// The returned bundle has empty splits; use [`super::few_shot_split`] to
/// assign them.
pub fn load_dataset(path: &Path, labels_path: &Path, options: LoadOptions) -> Result<DatasetBundle> {
    let label_texts = load_labels(labels_path)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut graphs = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (mut graph, y) = parse_record(&line, line_no)?;
        if y >= label_texts.len() {
            return Err(Error::Label(format!(
                "line {line_no}: class {y} but only {} labels",
                label_texts.len()
            )));
        }
        if let Some(dim) = options.pad_to {
            graph = graph.pad_features(dim).map_err(|e| match e {
                Error::Dimension(m) => Error::Dimension(format!("line {line_no}: {m}")),
                other => other,
            })?;
        } else if let Some(first) = graphs.first().map(Graph::feature_dim) {
            if graph.feature_dim() != first {
                return Err(Error::Dimension(format!(
                    "line {line_no}: feature dimension {} differs from {first}; enable padding",
                    graph.feature_dim()
                )));
            }
        }
        graphs.push(graph);
        labels.push(y);
    }
    DatasetBundle::new(graphs, labels, label_texts, Splits::default(), TaskLevel::Graph)
}

/// Write the graphs of a bundle as JSON lines (splits are not persisted).
pub fn write_dataset(path: &Path, bundle: &DatasetBundle) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (graph, &y) in bundle.graphs().iter().zip(bundle.labels()) {
        let rec = GraphRecord {
            n: graph.num_nodes(),
            edges: graph.edges().iter().map(|&(u, v)| [u, v]).collect(),
            x: graph.features().rows().into_iter().map(|r| r.to_vec()).collect(),
            y,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read whitespace-separated `u v` pairs, 0-based. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let mut next = || -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: "expected two node indices".into(),
                })?
                .parse()
                .map_err(|e: std::num::ParseIntError| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
        };
        let u = next()?;
        let v = next()?;
        edges.push((u, v));
    }
    Ok(edges)
}
