//! Projector, contrastive objective, gradients, optimizer and training loops.

mod adam;
mod fit;
mod loss;
mod model;
mod state;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use fit::{
    init_state, train_baseline, train_classes, train_morpher, train_morpher_with, EpochRecord, PromptConfig,
    PromptInit, TrainConfig, TrainHistory, TrainMode, ZeroShotPoint,
};
pub use loss::{contrastive_loss, contrastive_loss_with_grad, cross_entropy_with_grad, ContrastiveGrad};
pub use model::{
    backward_all, baseline_objective, encode_prompted, graph_branch, graph_forward, head_logits, label_embeddings,
    morpher_objective, project, prompt_batch, GraphTape, Gradients, TextTape,
};
pub use state::{encode_state, load_state, save_state, Projector, PromptState, TaskHead};
