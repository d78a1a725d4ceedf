//! Frozen two-layer GCN: `H2 = Â · ReLU(Â · X · W1) · W2` with
//! `Â = D^{-1/2} (A + I) D^{-1/2}`.
//!
//! Weights never change after construction. The backward pass returns the
//! gradient with respect to the input features only; that is all prompt
//! training needs, since prompt tokens enter the encoder as feature rows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

const MAGIC: &[u8; 4] = b"MGNN";
const VERSION: u32 = 1;

/// Symmetric-normalized adjacency with self loops, stored as sorted rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `Â · m`. Row entries are visited in ascending column order, so the
    /// result is bitwise reproducible.
    pub fn matmul(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), m.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = out.row_mut(i);
            for &(j, w) in row {
                acc.scaled_add(w, &m.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.rows.len();
        let mut a = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                a[[i, j]] = w;
            }
        }
        a
    }
}

/// Normalize an undirected edge list over `num_nodes` nodes. Each edge is
/// given once; isolated nodes get degree 1 from their self loop.
pub fn normalize_adjacency(num_nodes: usize, edges: &[(usize, usize)]) -> Result<NormalizedAdjacency> {
    let mut nbrs: Vec<Vec<usize>> = (0..num_nodes).map(|i| vec![i]).collect();
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::NodeOutOfRange {
                index: u.max(v),
                num_nodes,
            });
        }
        if u == v {
            return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
        }
        nbrs[u].push(v);
        nbrs[v].push(u);
    }
    for list in &mut nbrs {
        list.sort_unstable();
        list.dedup();
    }
    let inv_sqrt: Vec<f64> = nbrs.iter().map(|l| 1.0 / (l.len() as f64).sqrt()).collect();
    let rows = nbrs
        .iter()
        .enumerate()
        .map(|(i, list)| list.iter().map(|&j| (j, inv_sqrt[i] * inv_sqrt[j])).collect())
        .collect();
    Ok(NormalizedAdjacency { rows })
}

/// Pretrained two-layer GCN weights: `W1: d × h`, `W2: h × d_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenGnn {
    w1: Array2<f64>,
    w2: Array2<f64>,
}

impl FrozenGnn {
    pub fn new(w1: Array2<f64>, w2: Array2<f64>) -> Result<Self> {
        if w1.ncols() != w2.nrows() {
            return Err(Error::Dimension(format!(
                "W1 is {:?} but W2 is {:?}",
                w1.dim(),
                w2.dim()
            )));
        }
        if w1.is_empty() || w2.is_empty() {
            return Err(Error::Dimension("empty weight matrix".into()));
        }
        if w1.iter().chain(w2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GNN weights".into()));
        }
        Ok(Self { w1, w2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn w2(&self) -> &Array2<f64> {
        &self.w2
    }

    pub fn num_parameters(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    pub fn ensure_input_dim(&self, d: usize) -> Result<()> {
        if self.input_dim() != d {
            return Err(Error::Dimension(format!(
                "GNN expects {}-dimensional features, dataset has {d}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Seeded Kaiming-uniform weights, entries in `±√(6 / fan_in)`.
pub fn init_gnn_random(d: usize, h: usize, d_g: usize, seed: u64) -> Result<FrozenGnn> {
    if d == 0 || h == 0 || d_g == 0 {
        return Err(Error::InvalidArgument("GNN dimensions must be >= 1".into()));
    }
    let mut rng = seed::rng(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let bound = (6.0 / rows as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
    };
    let w1 = uniform(d, h);
    let w2 = uniform(h, d_g);
    FrozenGnn::new(w1, w2)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64_matrix(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"))
}

/// Read an MGNN weight file.
pub fn load_gnn_weights(path: &Path) -> Result<FrozenGnn> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: bad magic {magic:?}", path.display())));
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(Error::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let d = read_u32(&mut r).map_err(io)? as usize;
    let h = read_u32(&mut r).map_err(io)? as usize;
    let d_g = read_u32(&mut r).map_err(io)? as usize;
    let w1 = read_f64_matrix(&mut r, d, h).map_err(io)?;
    let w2 = read_f64_matrix(&mut r, h, d_g).map_err(io)?;
    FrozenGnn::new(w1, w2)
}

pub fn save_gnn_weights(path: &Path, gnn: &FrozenGnn) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::with_capacity(20 + 8 * gnn.num_parameters());
    bytes.extend_from_slice(MAGIC);
    for v in [VERSION, gnn.input_dim() as u32, gnn.hidden_dim() as u32, gnn.output_dim() as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in gnn.w1.iter().chain(gnn.w2.iter()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Intermediates of one forward pass, exactly as used.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    adjacency: NormalizedAdjacency,
    /// Layer-1 pre-activation `Â X W1`.
    pub z1: Array2<f64>,
    /// `ReLU(z1)`.
    pub h1: Array2<f64>,
    /// Output node embeddings `Â h1 W2`.
    pub h2: Array2<f64>,
}

impl ForwardTape {
    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adjacency
    }
}

pub fn gcn_forward(
    adjacency: &NormalizedAdjacency,
    x: &Array2<f64>,
    gnn: &FrozenGnn,
) -> Result<(Array2<f64>, ForwardTape)> {
    if x.nrows() != adjacency.num_nodes() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            x.nrows(),
            adjacency.num_nodes()
        )));
    }
    gnn.ensure_input_dim(x.ncols())?;
    let z1 = adjacency.matmul(&x.dot(&gnn.w1));
    let h1 = z1.mapv(|v| v.max(0.0));
    let h2 = adjacency.matmul(&h1.dot(&gnn.w2));
    let tape = ForwardTape {
        adjacency: adjacency.clone(),
        z1,
        h1,
        h2: h2.clone(),
    };
    Ok((h2, tape))
}

/// Gradient of a scalar with respect to the input features, given its
/// gradient `d_h2` with respect to the output embeddings.
///
/// ReLU's derivative at exactly 0 is taken as 0.
pub fn gcn_backward_features(tape: &ForwardTape, d_h2: &Array2<f64>, gnn: &FrozenGnn) -> Result<Array2<f64>> {
    if d_h2.dim() != tape.h2.dim() {
        return Err(Error::Dimension(format!(
            "output gradient {:?} does not match tape {:?}",
            d_h2.dim(),
            tape.h2.dim()
        )));
    }
    if tape.h1.ncols() != gnn.hidden_dim() || tape.h2.ncols() != gnn.output_dim() {
        return Err(Error::Dimension("tape was recorded with a different GNN".into()));
    }
    // Â is symmetric, so Âᵀ = Â.
    let d_h1 = tape.adjacency.matmul(d_h2).dot(&gnn.w2.t());
    let mut d_z1 = d_h1;
    ndarray::Zip::from(&mut d_z1)
        .and(&tape.z1)
        .for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
    Ok(tape.adjacency.matmul(&d_z1).dot(&gnn.w1.t()))
}

/// Column-wise mean of the rows.
pub fn readout_mean(h: &Array2<f64>) -> Result<Array1<f64>> {
    h.mean_axis(Axis(0))
        .filter(|_| h.nrows() > 0)
        .ok_or_else(|| Error::InvalidArgument("readout of an empty matrix".into()))
}

/// Gradient of the mean readout: every row receives `d_out / rows`.
pub fn readout_mean_backward(d_out: &Array1<f64>, rows: usize) -> Array2<f64> {
    let scaled = d_out / rows as f64;
    let mut out = Array2::zeros((rows, d_out.len()));
    for mut row in out.rows_mut() {
        row.assign(&scaled);
    }
    out
}
