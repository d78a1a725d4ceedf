//! Text side: frozen per-token label embeddings, the learnable text prompt
//! prepended to them, mean readout, and label-set centering.
//!
//! The prompt is concatenated after the frozen encoder, so the encoder is
//! never differentiated through and precomputed token embeddings suffice.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

const MAGIC: &[u8; 4] = b"MTEB";
const VERSION: u32 = 1;

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Frozen token embeddings per label text.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, Array2<f64>>,
}

impl TextEmbeddingStore {
    pub fn new(entries: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|(_, m)| m.ncols())
            .ok_or_else(|| Error::Format("embedding store has no entries".into()))?;
        if dim == 0 {
            return Err(Error::Dimension("embedding width is zero".into()));
        }
        let mut map = BTreeMap::new();
        for (label, tokens) in entries {
            if tokens.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "entry {label:?} has width {}, expected {dim}",
                    tokens.ncols()
                )));
            }
            if tokens.nrows() == 0 {
                return Err(Error::Format(format!("entry {label:?} has no tokens")));
            }
            if tokens.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of {label:?}")));
            }
            if map.insert(label.clone(), tokens).is_some() {
                return Err(Error::Format(format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { dim, entries: map })
    }

    /// Embedding width `d_t`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&Array2<f64>> {
        self.entries.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn tokens(&self, label: &str) -> Result<&Array2<f64>> {
        self.get(label)
            .ok_or_else(|| Error::Label(format!("no embedding for label {label:?}")))
    }

    /// Every label of `vocabulary` must have an entry.
    pub fn ensure_covers<S: AsRef<str>>(&self, vocabulary: &[S]) -> Result<()> {
        for label in vocabulary {
            self.tokens(label.as_ref())?;
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Read an MTEB embedding file; `f32` payloads are widened to `f64`.
pub fn load_token_embeddings(path: &Path) -> Result<TextEmbeddingStore> {
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
    let count = read_u32(&mut r).map_err(io)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r).map_err(io)? as usize;
        let mut label = vec![0u8; len];
        r.read_exact(&mut label).map_err(io)?;
        let label = String::from_utf8(label)
            .map_err(|e| Error::Format(format!("{}: label is not UTF-8: {e}", path.display())))?;
        let k = read_u32(&mut r).map_err(io)? as usize;
        let d = read_u32(&mut r).map_err(io)? as usize;
        let mut buf = vec![0u8; k * d * 4];
        r.read_exact(&mut buf).map_err(io)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
            .collect();
        let tokens = Array2::from_shape_vec((k, d), data).expect("shape matches length");
        entries.push((label, tokens));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    TextEmbeddingStore::new(entries)
}

/// Write entries in MTEB format (values narrowed to `f32`).
pub fn save_token_embeddings(path: &Path, entries: &[(String, Array2<f64>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (label, tokens) in entries {
        bytes.extend_from_slice(&(label.len() as u32).to_le_bytes());
        bytes.extend_from_slice(label.as_bytes());
        bytes.extend_from_slice(&(tokens.nrows() as u32).to_le_bytes());
        bytes.extend_from_slice(&(tokens.ncols() as u32).to_le_bytes());
        for &v in tokens.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Deterministic stand-in for a text encoder: `k` unit rows, row `r` drawn
/// from a generator seeded by a hash of `(seed, text, r)`.
pub fn pseudo_encode(text: &str, dim: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((k, dim));
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut key = text.as_bytes().to_vec();
        key.push(0xff);
        key.extend_from_slice(&(r as u64).to_le_bytes());
        let mut rng = seed::rng(seed::hash_bytes(seed, &key));
        loop {
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > NORM_EPS {
                row /= norm;
                break;
            }
        }
    }
    out
}

/// Label `target` is encoded as the rows of `left` followed by the rows of
/// `right`, so its mean readout is the midpoint of theirs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MidpointRule {
    pub target: String,
    pub left: String,
    pub right: String,
}

/// Seeded pseudo encoder with optional midpoint rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoEncoder {
    pub dim: usize,
    pub tokens_per_text: usize,
    pub seed: u64,
    #[serde(default)]
    pub midpoints: Vec<MidpointRule>,
}

impl PseudoEncoder {
    pub fn new(dim: usize, tokens_per_text: usize, seed: u64) -> Self {
        Self {
            dim,
            tokens_per_text,
            seed,
            midpoints: Vec::new(),
        }
    }

    pub fn with_midpoint(mut self, target: &str, left: &str, right: &str) -> Self {
        self.midpoints.push(MidpointRule {
            target: target.into(),
            left: left.into(),
            right: right.into(),
        });
        self
    }

    pub fn encode(&self, text: &str) -> Array2<f64> {
        let base = |t: &str| pseudo_encode(t, self.dim, self.tokens_per_text, self.seed);
        match self.midpoints.iter().find(|m| m.target == text) {
            Some(rule) => ndarray::concatenate(Axis(0), &[base(&rule.left).view(), base(&rule.right).view()])
                .expect("equal widths"),
            None => base(text),
        }
    }

    /// One unit row per whitespace-separated word.
    pub fn encode_words(&self, phrase: &str) -> Option<Array2<f64>> {
        let words: Vec<&str> = phrase.split_whitespace().collect();
        if words.is_empty() {
            return None;
        }
        let mut out = Array2::zeros((words.len(), self.dim));
        for (mut row, word) in out.rows_mut().into_iter().zip(words) {
            row.assign(&pseudo_encode(word, self.dim, 1, self.seed).row(0));
        }
        Some(out)
    }

    pub fn store<S: AsRef<str>>(&self, labels: &[S]) -> Result<TextEmbeddingStore> {
        TextEmbeddingStore::new(
            labels
                .iter()
                .map(|l| (l.as_ref().to_owned(), self.encode(l.as_ref())))
                .collect(),
        )
    }
}

/// Learnable text prompt rows (`n_t × d_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct TextPrompt {
    pub tokens: Array2<f64>,
}

impl TextPrompt {
    pub fn new(tokens: Array2<f64>) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::InvalidArgument("text prompt needs n_t >= 1 and d_t >= 1".into()));
        }
        Ok(Self { tokens })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Where seed-phrase token embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum PhraseSource<'a> {
    Store(&'a TextEmbeddingStore),
    Pseudo(&'a PseudoEncoder),
}

/// Initialize the text prompt from a seed phrase's token embeddings (cycled
/// when the phrase is shorter than `n_t`), or from `N(0, 0.02²)` when no
/// phrase is given or it cannot be encoded.
pub fn init_text_prompt(
    seed_phrase: Option<&str>,
    n_t: usize,
    d_t: usize,
    source: PhraseSource<'_>,
    seed: u64,
) -> Result<TextPrompt> {
    if n_t == 0 || d_t == 0 {
        return Err(Error::InvalidArgument("text prompt needs n_t >= 1 and d_t >= 1".into()));
    }
    let phrase_tokens = seed_phrase.and_then(|phrase| {
        let tokens = match source {
            PhraseSource::Store(store) => store.get(phrase).cloned(),
            PhraseSource::Pseudo(enc) => enc.encode_words(phrase),
        };
        if tokens.is_none() {
            log::warn!("seed phrase {phrase:?} cannot be encoded; using Gaussian init");
        }
        tokens.filter(|t| t.ncols() == d_t)
    });
    let tokens = match phrase_tokens {
        Some(src) => Array2::from_shape_fn((n_t, d_t), |(i, j)| src[[i % src.nrows(), j]]),
        None => {
            let normal = Normal::new(0.0, 0.02).expect("valid std");
            let mut rng = seed::rng(seed);
            Array2::from_shape_simple_fn((n_t, d_t), || normal.sample(&mut rng))
        }
    };
    TextPrompt::new(tokens)
}

/// Mean readout of `[P^t; tokens(label)]`.
pub fn prompted_text_embedding(label: &str, prompt: &TextPrompt, store: &TextEmbeddingStore) -> Result<Array1<f64>> {
    let tokens = store.tokens(label)?;
    if tokens.ncols() != prompt.dim() {
        return Err(Error::Dimension(format!(
            "text prompt width {} but store width {}",
            prompt.dim(),
            tokens.ncols()
        )));
    }
    let total = prompt.num_tokens() + tokens.nrows();
    let sum = prompt.tokens.sum_axis(Axis(0)) + tokens.sum_axis(Axis(0));
    Ok(sum / total as f64)
}

/// Accumulate the prompt gradient of [`prompted_text_embedding`]: every
/// prompt row receives `d_h / (n_t + K)`.
pub fn prompted_text_backward(d_h: &Array1<f64>, num_label_tokens: usize, d_prompt: &mut Array2<f64>) {
    let scale = 1.0 / (d_prompt.nrows() + num_label_tokens) as f64;
    for mut row in d_prompt.rows_mut() {
        row.scaled_add(scale, d_h);
    }
}

/// Values kept from [`center_normalize_labels`] for its backward pass.
#[derive(Debug, Clone)]
pub struct LabelNormTape {
    pub centered: bool,
    pub norms: Vec<f64>,
    pub normalized: Vec<Array1<f64>>,
}

/// Subtract the mean of the candidate label embeddings and scale each to
/// unit norm. With fewer than two candidates centering is skipped and plain
/// normalization is applied.
pub fn center_normalize_labels(embeddings: &[Array1<f64>]) -> Result<(Vec<Array1<f64>>, LabelNormTape)> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::InvalidArgument("no label embeddings".into()))?;
    let centered = embeddings.len() >= 2;
    let shifted: Vec<Array1<f64>> = if centered {
        let mut mean = Array1::zeros(first.len());
        for h in embeddings {
            mean += h;
        }
        mean /= embeddings.len() as f64;
        embeddings.iter().map(|h| h - &mean).collect()
    } else {
        log::warn!("single candidate label: centering skipped");
        embeddings.to_vec()
    };
    let mut norms = Vec::with_capacity(shifted.len());
    let mut out = Vec::with_capacity(shifted.len());
    for (i, v) in shifted.into_iter().enumerate() {
        let norm = v.dot(&v).sqrt();
        if !(norm > NORM_EPS) {
            return Err(Error::Degenerate(format!(
                "label embedding {i} has norm {norm:e} after centering"
            )));
        }
        out.push(v / norm);
        norms.push(norm);
    }
    let tape = LabelNormTape {
        centered,
        norms,
        normalized: out.clone(),
    };
    Ok((out, tape))
}

/// Gradient with respect to the uncentered label embeddings.
pub fn center_normalize_backward(tape: &LabelNormTape, d_z: &[Array1<f64>]) -> Vec<Array1<f64>> {
    let mut d_u: Vec<Array1<f64>> = d_z
        .iter()
        .zip(&tape.normalized)
        .zip(&tape.norms)
        .map(|((g, z), &norm)| (g - &(z * z.dot(g))) / norm)
        .collect();
    if tape.centered {
        let m = d_u.len() as f64;
        let mut mean = Array1::zeros(d_u[0].len());
        for g in &d_u {
            mean += g;
        }
        mean /= m;
        for g in &mut d_u {
            *g -= &mean;
        }
    }
    d_u
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pseudo_encoder_is_deterministic_with_unit_rows() {
        let a = pseudo_encode("bioinformatics", 16, 3, 5);
        assert_eq!(a, pseudo_encode("bioinformatics", 16, 3, 5));
        assert_ne!(a, pseudo_encode("biology", 16, 3, 5));
        for row in a.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_readout() {
        let enc = PseudoEncoder::new(8, 3, 1).with_midpoint("C", "A", "B");
        let store = enc.store(&["A", "B", "C"]).unwrap();
        let mean = |l: &str| store.tokens(l).unwrap().mean_axis(Axis(0)).unwrap();
        let mid = (mean("A") + mean("B")) / 2.0;
        for (a, b) in mean("C").iter().zip(mid.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_row_mean() {
        let store = TextEmbeddingStore::new(vec![("x".into(), array![[1.0, 3.0]])]).unwrap();
        let prompt = TextPrompt::new(array![[3.0, -1.0]]).unwrap();
        assert_eq!(prompted_text_embedding("x", &prompt, &store).unwrap(), array![2.0, 1.0]);
    }

    #[test]
    fn zero_prompt_closed_form() {
        let e = array![0.5, -2.0, 1.0];
        let tokens = Array2::from_shape_fn((4, 3), |(_, j)| e[j]);
        let store = TextEmbeddingStore::new(vec![("x".into(), tokens)]).unwrap();
        let prompt = TextPrompt::new(Array2::zeros((2, 3))).unwrap();
        let h = prompted_text_embedding("x", &prompt, &store).unwrap();
        let expected = &e * 4.0 / 6.0;
        for (a, b) in h.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_label() {
        let store = TextEmbeddingStore::new(vec![("x".into(), array![[1.0]])]).unwrap();
        let prompt = TextPrompt::new(array![[0.0]]).unwrap();
        assert!(matches!(prompted_text_embedding("y", &prompt, &store), Err(Error::Label(_))));
    }

    #[test]
    fn prompt_gradient_matches_finite_differences() {
        let enc = PseudoEncoder::new(5, 3, 2);
        let store = enc.store(&["lbl"]).unwrap();
        let prompt = init_text_prompt(None, 2, 5, PhraseSource::Store(&store), 4).unwrap();
        let weights = array![0.3, -1.0, 0.7, 0.1, 2.0];
        let objective = |p: &TextPrompt| prompted_text_embedding("lbl", p, &store).unwrap().dot(&weights);
        let mut grad = Array2::zeros((2, 5));
        prompted_text_backward(&weights, 3, &mut grad);
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..5 {
                let mut plus = prompt.clone();
                plus.tokens[[i, j]] += h;
                let mut minus = prompt.clone();
                minus.tokens[[i, j]] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                assert!((fd - grad[[i, j]]).abs() <= 1e-8 * grad[[i, j]].abs().max(1e-3), "{fd} vs {}", grad[[i, j]]);
            }
        }
    }

    #[test]
    fn antipodal_labels() {
        let e = array![3.0, 4.0];
        let (z, _) = center_normalize_labels(&[e.clone(), -&e]).unwrap();
        assert_eq!(z[0], array![0.6, 0.8]);
        assert_eq!(z[1], array![-0.6, -0.8]);
    }

    #[test]
    fn outputs_are_unit_norm() {
        let enc = PseudoEncoder::new(6, 2, 8);
        let hs: Vec<_> = ["a", "b", "c", "d"]
            .iter()
            .map(|l| enc.encode(l).mean_axis(Axis(0)).unwrap())
            .collect();
        let (z, _) = center_normalize_labels(&hs).unwrap();
        for v in z {
            assert!((v.dot(&v).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_equal_to_mean_is_degenerate() {
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        let c = (&a + &b) / 2.0;
        assert!(matches!(center_normalize_labels(&[a, b, c]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_label_is_plainly_normalized() {
        let (z, tape) = center_normalize_labels(&[array![0.0, 2.0]]).unwrap();
        assert!(!tape.centered);
        assert_eq!(z[0], array![0.0, 1.0]);
    }

    #[test]
    fn centering_backward_matches_finite_differences() {
        let enc = PseudoEncoder::new(4, 2, 3);
        let hs: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|l| enc.encode(l).mean_axis(Axis(0)).unwrap())
            .collect();
        let w: Vec<Array1<f64>> = (0..3)
            .map(|i| Array1::from_shape_fn(4, |j| ((i * 4 + j) as f64 * 0.7).sin()))
            .collect();
        let objective = |hs: &[Array1<f64>]| {
            let (z, _) = center_normalize_labels(hs).unwrap();
            z.iter().zip(&w).map(|(a, b)| a.dot(b)).sum::<f64>()
        };
        let (_, tape) = center_normalize_labels(&hs).unwrap();
        let grads = center_normalize_backward(&tape, &w);
        let h = 1e-6;
        for c in 0..3 {
            for j in 0..4 {
                let mut plus = hs.clone();
                plus[c][j] += h;
                let mut minus = hs.clone();
                minus[c][j] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                assert!((fd - grads[c][j]).abs() < 1e-7, "{fd} vs {}", grads[c][j]);
            }
        }
    }

    #[test]
    fn seed_phrase_rows_and_cycling() {
        let enc = PseudoEncoder::new(6, 2, 0);
        let p = init_text_prompt(Some("a graph with property"), 3, 6, PhraseSource::Pseudo(&enc), 0).unwrap();
        let words = enc.encode_words("a graph with property").unwrap();
        for i in 0..3 {
            assert_eq!(p.tokens.row(i), words.row(i));
        }
        let cyc = init_text_prompt(Some("a paper"), 5, 6, PhraseSource::Pseudo(&enc), 0).unwrap();
        let two = enc.encode_words("a paper").unwrap();
        for (i, src) in [0, 1, 0, 1, 0].into_iter().enumerate() {
            assert_eq!(cyc.tokens.row(i), two.row(src));
        }
    }

    #[test]
    fn gaussian_init_is_deterministic() {
        let enc = PseudoEncoder::new(6, 2, 0);
        let a = init_text_prompt(None, 4, 6, PhraseSource::Pseudo(&enc), 11).unwrap();
        let b = init_text_prompt(None, 4, 6, PhraseSource::Pseudo(&enc), 11).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.iter().all(|v| v.abs() < 0.2));
    }

    #[test]
    fn store_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.mteb");
        let enc = PseudoEncoder::new(8, 3, 1);
        let entries: Vec<_> = ["x", "yy", "zzz"].iter().map(|l| (l.to_string(), enc.encode(l))).collect();
        save_token_embeddings(&path, &entries).unwrap();
        let store = load_token_embeddings(&path).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.dim(), 8);
        for (label, tokens) in &entries {
            let loaded = store.tokens(label).unwrap();
            for (a, b) in loaded.iter().zip(tokens.iter()) {
                assert_eq!(*a, f64::from(*b as f32));
            }
        }
    }

    #[test]
    fn store_rejects_duplicates_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.mteb");
        let m = array![[1.0, 2.0]];
        save_token_embeddings(&path, &[("a".into(), m.clone()), ("a".into(), m)]).unwrap();
        assert!(matches!(load_token_embeddings(&path), Err(Error::Format(_))));
        let empty = dir.path().join("empty.mteb");
        save_token_embeddings(&empty, &[]).unwrap();
        assert!(load_token_embeddings(&empty).is_err());
        let bad = dir.path().join("bad.mteb");
        std::fs::write(&bad, b"MTEX\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_token_embeddings(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn store_rejects_mixed_widths() {
        let err = TextEmbeddingStore::new(vec![
            ("a".into(), array![[1.0, 2.0]]),
            ("b".into(), array![[1.0, 2.0, 3.0]]),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
