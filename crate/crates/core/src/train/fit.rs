//! Training loops for the multi-modal model and the single-modal baselines.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::model::{baseline_objective, morpher_objective, prompt_batch, Gradients};
use super::state::{Projector, PromptState, TaskHead};
use crate::error::{Error, Result};
use crate::eval::{predict_baseline_batch, predict_batch};
use crate::gnn::FrozenGnn;
use crate::graph::{DatasetBundle, Graph};
use crate::prompt::{init_graph_prompt, init_graph_prompt_normal, PromptStyle, DEFAULT_DELTA_INNER};
use crate::seed;
use crate::text::{init_text_prompt, PhraseSource, TextEmbeddingStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Morpher,
    ImprovedAioHead,
    AioHead,
}

impl TrainMode {
    pub fn is_baseline(self) -> bool {
        !matches!(self, TrainMode::Morpher)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PromptInit {
    /// Uniform in `±√(6/d)` times `init_multiplier`.
    #[default]
    Kaiming,
    /// Gaussian with standard deviation `init_std`.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Number of graph prompt tokens.
    pub n_g: usize,
    /// Number of text prompt tokens.
    pub n_t: usize,
    /// Wiring used in `morpher` mode; the baselines fix their own.
    pub style: PromptStyle,
    pub delta_inner: f64,
    /// Defaults to 0.1 for the balanced wiring and 0.3 for AIO.
    pub delta_cross: Option<f64>,
    pub init: PromptInit,
    pub init_multiplier: f64,
    pub init_std: f64,
    pub seed_phrase: Option<String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            n_g: 10,
            n_t: 4,
            style: PromptStyle::Improved,
            delta_inner: DEFAULT_DELTA_INNER,
            delta_cross: None,
            init: PromptInit::Kaiming,
            init_multiplier: 1.0,
            init_std: 0.01,
            seed_phrase: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub tau: f64,
    /// Re-normalize the projected graph embedding before the similarity.
    pub renormalize_projection: bool,
    pub prompt: PromptConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            adam: AdamConfig::default(),
            batch_size: 0,
            seed: 0,
            mode: TrainMode::Morpher,
            tau: 0.07,
            renormalize_projection: false,
            prompt: PromptConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Prompt wiring actually used by this mode.
    pub fn style(&self) -> PromptStyle {
        match self.mode {
            TrainMode::Morpher => self.prompt.style,
            TrainMode::ImprovedAioHead => PromptStyle::Improved,
            TrainMode::AioHead => PromptStyle::Aio,
        }
    }
}

/// Fresh parameters for a run. `head_classes` is used only in baseline modes.
pub fn init_state(
    config: &TrainConfig,
    feature_dim: usize,
    graph_dim: usize,
    text_dim: usize,
    head_classes: usize,
    phrases: PhraseSource<'_>,
) -> Result<PromptState> {
    let p = &config.prompt;
    let style = config.style();
    let prompt_seed = seed::derive_seed(config.seed, "graph-prompt");
    let graph_prompt = match p.init {
        PromptInit::Kaiming => init_graph_prompt(p.n_g, feature_dim, prompt_seed, p.init_multiplier)?,
        PromptInit::Normal => init_graph_prompt_normal(p.n_g, feature_dim, p.init_std, prompt_seed)?,
    };
    let graph_prompt = graph_prompt.with_thresholds(p.delta_inner, p.delta_cross.unwrap_or(style.default_delta_cross()))?;
    let text_prompt = init_text_prompt(
        p.seed_phrase.as_deref(),
        p.n_t,
        text_dim,
        phrases,
        seed::derive_seed(config.seed, "text-prompt"),
    )?;
    let head = config
        .mode
        .is_baseline()
        .then(|| TaskHead::init(head_classes, graph_dim, seed::derive_seed(config.seed, "head")));
    let state = PromptState {
        graph_prompt,
        style,
        text_prompt,
        projector: Projector::init(text_dim, graph_dim, seed::derive_seed(config.seed, "projector")),
        tau: config.tau,
        head,
    };
    state.validate()?;
    Ok(state)
}

/// Metrics of the state at the start of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

/// One point of the zero-shot curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotPoint {
    pub epoch: usize,
    /// Train accuracy with only the seen labels as candidates.
    pub acc_train2: f64,
    /// Train accuracy with all labels as candidates.
    pub acc_train3: f64,
    /// Accuracy on the unseen class with all labels as candidates.
    pub acc_test_zero: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose state was returned, when selected on validation.
    pub best_epoch: Option<usize>,
    pub zero_shot: Vec<ZeroShotPoint>,
}

/// Classes present in the train split, ascending.
pub fn train_classes(bundle: &DatasetBundle) -> Vec<usize> {
    let set: BTreeSet<usize> = bundle.splits().train.iter().map(|&i| bundle.labels()[i]).collect();
    set.into_iter().collect()
}

fn accuracy(preds: &[usize], golds: &[usize]) -> f64 {
    if golds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(golds).filter(|(p, g)| p == g).count() as f64 / golds.len() as f64
}

fn batches(train: &[usize], batch_size: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<usize>> {
    if batch_size == 0 || batch_size >= train.len() {
        return vec![train.to_vec()];
    }
    let mut order = train.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Shared epoch loop. `objective` returns loss and gradients on fixed
/// structures; `predict` returns class ids for graphs.
#[allow(clippy::too_many_arguments)]
fn fit<O, P, E>(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    mut state: PromptState,
    trainable: Vec<bool>,
    class_of: &dyn Fn(usize) -> usize,
    objective: O,
    predict: P,
    mut on_epoch: E,
) -> Result<(PromptState, TrainHistory)>
where
    O: Fn(&[crate::prompt::PromptedGraph], &[usize], &PromptState) -> Result<(f64, Gradients)>,
    P: Fn(&[&Graph], &PromptState) -> Result<Vec<usize>>,
    E: FnMut(usize, &PromptState, &mut TrainHistory) -> Result<()>,
{
    config.validate()?;
    let splits = bundle.splits();
    if splits.train.is_empty() {
        return Err(Error::InsufficientSamples("empty train split".into()));
    }
    let graphs_of = |idx: &[usize]| idx.iter().map(|&i| &bundle.graphs()[i]).collect::<Vec<_>>();
    let golds_of = |idx: &[usize]| idx.iter().map(|&i| class_of(bundle.labels()[i])).collect::<Vec<_>>();
    let train_graphs = graphs_of(&splits.train);
    let train_golds = golds_of(&splits.train);
    let val_graphs = graphs_of(&splits.val);
    let val_golds = golds_of(&splits.val);

    let mut adam = Adam::new(config.adam, trainable);
    let mut rng = seed::rng_for(config.seed, "batches");
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, PromptState)> = None;

    for epoch in 0..config.epochs {
        let train_acc = accuracy(&predict(&train_graphs, &state)?, &train_golds);
        let val_acc = if val_graphs.is_empty() {
            None
        } else {
            Some(accuracy(&predict(&val_graphs, &state)?, &val_golds))
        };
        on_epoch(epoch, &state, &mut history)?;
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, state.clone()));
            }
        }

        let mut loss_sum = 0.0;
        for batch in batches(&splits.train, config.batch_size, &mut rng) {
            let graphs = graphs_of(&batch);
            let labels = golds_of(&batch);
            let prompted = prompt_batch(&graphs, &state)?;
            let (loss, grads) = objective(&prompted, &labels, &state)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut state, &grads);
        }
        let loss = loss_sum / splits.train.len() as f64;
        log::debug!("epoch {epoch}: loss {loss:.6} train {train_acc:.3} val {val_acc:?}");
        history.records.push(EpochRecord {
            epoch,
            loss,
            train_acc,
            val_acc,
        });
    }
    match best {
        Some((_, epoch, best_state)) => {
            history.best_epoch = Some(epoch);
            Ok((best_state, history))
        }
        None => Ok((state, history)),
    }
}

/// Train graph prompt, text prompt and projector with the contrastive loss.
///
/// Candidates for text centering are the label texts of the classes present
/// in the train split. Records for epoch `e` describe the state before that
/// epoch's updates (epoch 0 is the untrained state). The returned state is
/// the best on validation accuracy (ties go to the earlier epoch), or the
/// final state when the validation split is empty.
pub fn train_morpher(
    bundle: &DatasetBundle,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
    config: &TrainConfig,
) -> Result<(PromptState, TrainHistory)> {
    train_morpher_with(bundle, gnn, store, config, None, |_, _, _| Ok(()))
}

/// [`train_morpher`] with an optional initial state and a per-epoch hook
/// that sees each state before its epoch's update.
pub fn train_morpher_with<E>(
    bundle: &DatasetBundle,
    gnn: &FrozenGnn,
    store: &TextEmbeddingStore,
    config: &TrainConfig,
    initial: Option<PromptState>,
    on_epoch: E,
) -> Result<(PromptState, TrainHistory)>
where
    E: FnMut(usize, &PromptState, &mut TrainHistory) -> Result<()>,
{
    if config.mode != TrainMode::Morpher {
        return Err(Error::InvalidArgument(format!("train_morpher called in {:?} mode", config.mode)));
    }
    gnn.ensure_input_dim(bundle.feature_dim())?;
    let classes = train_classes(bundle);
    if classes.is_empty() {
        return Err(Error::InsufficientSamples("empty train split".into()));
    }
    let candidates: Vec<String> = classes.iter().map(|&c| bundle.label_texts()[c].clone()).collect();
    store.ensure_covers(&candidates)?;
    let state = match initial {
        Some(s) => s,
        None => init_state(
            config,
            bundle.feature_dim(),
            gnn.output_dim(),
            store.dim(),
            0,
            PhraseSource::Store(store),
        )?,
    };
    state.validate()?;
    if state.text_dim() != store.dim() {
        return Err(Error::Dimension(format!(
            "state text width {} but store width {}",
            state.text_dim(),
            store.dim()
        )));
    }
    let mut remap = vec![usize::MAX; bundle.num_classes()];
    for (i, &c) in classes.iter().enumerate() {
        remap[c] = i;
    }
    let class_of = move |c: usize| remap[c];
    let renormalize = config.renormalize_projection;
    fit(
        bundle,
        config,
        state,
        vec![true; 4],
        &class_of,
        |prompted, labels, state| {
            let (loss, g) = morpher_objective(prompted, labels, &candidates, state, gnn, store, renormalize, true)?;
            Ok((loss, g.expect("gradients requested")))
        },
        |graphs, state| predict_batch(graphs, state, gnn, store, &candidates),
        on_epoch,
    )
}

/// Single-modal baseline: prompted graph → GCN → readout → linear head,
/// trained with softmax cross-entropy. Only the graph prompt and the head
/// are updated.
pub fn train_baseline(
    bundle: &DatasetBundle,
    gnn: &FrozenGnn,
    config: &TrainConfig,
    text_dim: usize,
) -> Result<(PromptState, TrainHistory)> {
    if !config.mode.is_baseline() {
        return Err(Error::InvalidArgument("train_baseline needs a head mode".into()));
    }
    gnn.ensure_input_dim(bundle.feature_dim())?;
    let no_phrases = crate::text::PseudoEncoder::new(text_dim, 1, 0);
    let state = init_state(
        config,
        bundle.feature_dim(),
        gnn.output_dim(),
        text_dim,
        bundle.num_classes(),
        PhraseSource::Pseudo(&no_phrases),
    )?;
    fit(
        bundle,
        config,
        state,
        vec![true, false, false, false, true, true],
        &|c| c,
        |prompted, labels, state| {
            let (loss, g) = baseline_objective(prompted, labels, state, gnn, true)?;
            Ok((loss, g.expect("gradients requested")))
        },
        |graphs, state| predict_baseline_batch(graphs, state, gnn),
        |_, _, _| Ok(()),
    )
}
