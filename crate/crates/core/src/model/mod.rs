//! Conditional VAE over per-path channel parameters.

mod batch;
mod check;
mod checkpoint;
mod config;
mod generate;
mod layers;
mod loss;
mod network;
mod optim;
mod params;
mod train;

pub use batch::{cond_batch, heightmap_patches, patchify, target_batch, CondBatch, LinkInput, TargetBatch};
pub use check::check_block_gradients;
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, save_checkpoint, trainer_from_bytes, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, TrainConfig};
pub use generate::{GenerateOptions, Generated, Generator, RawPrediction};
pub use layers::{sinusoidal_positions, Attention, Ctx, CrossLayer, EncoderLayer, LayerNorm, Linear, Mlp};
pub use loss::{
    cosine_loss, free_bits, gain_loss, kendall_total, kl_per_dim, masked_mse, masked_weights,
    presence_loss, scalar_loss, task, task_losses, LOGIT_CLAMP, N_TASKS, TASK_NAMES,
};
pub use network::{reparameterize, Conditioning, Cvae, Decoder, Encoder, Posterior, Prediction, Tower, LOGVAR_BOUND};
pub use optim::{clip_global_norm, kl_beta, learning_rate, AdamW};
pub use params::{Builder, ParamStore};
pub use train::{forward_loss, LossOutput, StepLog, TrainData, TrainState, Trainer};

use mpcgen_autodiff::AutodiffError;

/// Runs whose final presence uncertainty exceeds this are rejected.
pub const DIVERGENCE_SIGMA: f64 = 1e-3;

/// Keep iff `σ_presence = exp(s_presence) ≤ 1e-3`.
pub fn passes_divergence_filter(sigma_presence: f64) -> bool {
    sigma_presence <= DIVERGENCE_SIGMA
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
