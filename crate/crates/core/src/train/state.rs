//! Trainable parameters and their MPST file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::prompt::{GraphPrompt, PromptStyle};
use crate::seed;
use crate::text::TextPrompt;

const MAGIC: &[u8; 4] = b"MPST";
const VERSION: u32 = 1;

/// `tanh(W v + b)` from the graph space (`d_g`) into the text space (`d_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    /// `d_t × d_g`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Projector {
    /// Kaiming-uniform weight with `fan_in = d_g`, zero bias.
    pub fn init(d_t: usize, d_g: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let bound = (6.0 / d_g as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((d_t, d_g), || rng.random_range(-bound..=bound)),
            bias: Array1::zeros(d_t),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Linear classifier used by the single-modal baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    /// `C × d_g`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl TaskHead {
    pub fn init(classes: usize, d_g: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let bound = (6.0 / d_g as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((classes, d_g), || rng.random_range(-bound..=bound)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }
}

/// Everything that trains. The GNN and the text encoder stay frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    pub graph_prompt: GraphPrompt,
    pub style: PromptStyle,
    pub text_prompt: TextPrompt,
    pub projector: Projector,
    pub tau: f64,
    pub head: Option<TaskHead>,
}

impl PromptState {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {}", self.tau)));
        }
        if self.projector.output_dim() != self.text_prompt.dim() || self.projector.bias.len() != self.text_prompt.dim() {
            return Err(Error::Dimension(format!(
                "projector outputs {} dims, text prompt has {}",
                self.projector.output_dim(),
                self.text_prompt.dim()
            )));
        }
        if let Some(head) = &self.head {
            if head.weight.ncols() != self.projector.input_dim() || head.bias.len() != head.num_classes() {
                return Err(Error::Dimension("task head does not match the graph embedding width".into()));
            }
        }
        Ok(())
    }

    pub fn text_dim(&self) -> usize {
        self.text_prompt.dim()
    }

    pub fn graph_embedding_dim(&self) -> usize {
        self.projector.input_dim()
    }

    /// Parameter blocks in a fixed order: graph prompt, text prompt,
    /// projector weight, projector bias, then head weight and bias if present.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.graph_prompt.tokens.as_slice_mut().expect("standard layout"),
            self.text_prompt.tokens.as_slice_mut().expect("standard layout"),
            self.projector.weight.as_slice_mut().expect("standard layout"),
            self.projector.bias.as_slice_mut().expect("standard layout"),
        ];
        if let Some(head) = &mut self.head {
            out.push(head.weight.as_slice_mut().expect("standard layout"));
            out.push(head.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

fn push_matrix(bytes: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a state to bytes in MPST layout.
pub fn encode_state(state: &PromptState) -> Vec<u8> {
    let gp = &state.graph_prompt;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(match state.style {
        PromptStyle::Aio => 0,
        PromptStyle::Improved => 1,
    });
    let head_classes = state.head.as_ref().map_or(0, TaskHead::num_classes);
    for v in [
        gp.num_tokens(),
        gp.dim(),
        state.text_prompt.num_tokens(),
        state.text_dim(),
        state.graph_embedding_dim(),
        head_classes,
    ] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [gp.delta_inner, gp.delta_cross, gp.init_std_multiplier, state.tau] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    push_matrix(&mut bytes, gp.tokens.iter().copied());
    push_matrix(&mut bytes, state.text_prompt.tokens.iter().copied());
    push_matrix(&mut bytes, state.projector.weight.iter().copied());
    push_matrix(&mut bytes, state.projector.bias.iter().copied());
    if let Some(head) = &state.head {
        push_matrix(&mut bytes, head.weight.iter().copied());
        push_matrix(&mut bytes, head.bias.iter().copied());
    }
    bytes
}

pub fn save_state(path: &Path, state: &PromptState) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_state(state))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> std::io::Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn vec(&mut self, len: usize) -> std::io::Result<Vec<f64>> {
        (0..len).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> std::io::Result<Array2<f64>> {
        Ok(Array2::from_shape_vec((rows, cols), self.vec(rows * cols)?).expect("shape matches length"))
    }
}

pub fn load_state(path: &Path) -> Result<PromptState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let io = |e| Error::io(path, e);
    let magic: [u8; 4] = r.bytes().map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: bad magic {magic:?}", path.display())));
    }
    let version = r.u32().map_err(io)?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let style = match r.bytes::<1>().map_err(io)?[0] {
        0 => PromptStyle::Aio,
        1 => PromptStyle::Improved,
        other => return Err(Error::Format(format!("unknown prompt style tag {other}"))),
    };
    let n_g = r.u32().map_err(io)?;
    let d = r.u32().map_err(io)?;
    let n_t = r.u32().map_err(io)?;
    let d_t = r.u32().map_err(io)?;
    let d_g = r.u32().map_err(io)?;
    let head_classes = r.u32().map_err(io)?;
    let delta_inner = r.f64().map_err(io)?;
    let delta_cross = r.f64().map_err(io)?;
    let multiplier = r.f64().map_err(io)?;
    let tau = r.f64().map_err(io)?;
    let mut graph_prompt = GraphPrompt::new(r.matrix(n_g, d).map_err(io)?, delta_inner, delta_cross)?;
    graph_prompt.init_std_multiplier = multiplier;
    let text_prompt = TextPrompt::new(r.matrix(n_t, d_t).map_err(io)?)?;
    let projector = Projector {
        weight: r.matrix(d_t, d_g).map_err(io)?,
        bias: Array1::from(r.vec(d_t).map_err(io)?),
    };
    let head = if head_classes > 0 {
        Some(TaskHead {
            weight: r.matrix(head_classes, d_g).map_err(io)?,
            bias: Array1::from(r.vec(head_classes).map_err(io)?),
        })
    } else {
        None
    };
    let mut trailing = Vec::new();
    r.inner.read_to_end(&mut trailing).map_err(io)?;
    if !trailing.is_empty() {
        return Err(Error::Format(format!("{}: {} trailing bytes", path.display(), trailing.len())));
    }
    let state = PromptState {
        graph_prompt,
        style,
        text_prompt,
        projector,
        tau,
        head,
    };
    state.validate()?;
    Ok(state)
}
