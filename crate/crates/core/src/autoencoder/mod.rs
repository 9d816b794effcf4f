//! Dense autoencoder with a softmax latent head.

mod adam;
mod checkpoint;
mod loss;
mod network;
mod train;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{loss, loss_and_grads, LossBreakdown, LossGrads};
pub use network::{
    backward, decode, encode, forward, forward_one, Activation, Dense, ForwardPass, Gradients, LayerSpec,
    NetworkSpec, ParamStore,
};
pub use train::{evaluate_loss, train, train_from, TraceRow, TrainConfig};
