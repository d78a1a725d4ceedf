//! Multi-modal prompt learning for frozen graph encoders.
//!
//! A frozen GCN and a frozen text encoder are aligned by training only three
//! small pieces: a graph prompt inserted into every input graph, a text
//! prompt prepended to every label's token embeddings, and a tanh projector
//! from the graph embedding space into the text embedding space. Prediction
//! is the label whose centered, normalized text embedding has the largest
//! dot product with the projected graph embedding, which also lets the model
//! score labels it never saw during training.

pub mod error;
pub mod eval;
pub mod gnn;
pub mod gradcheck;
pub mod graph;
pub mod prompt;
pub mod seed;
pub mod text;
pub mod train;

pub use error::{Error, Result};
