//! Markov neural operator: a spectral-convolution network that maps the flow
//! field of one frame interval to the next, together with its losses, exact
//! reverse-mode gradients, Adam training and checkpoint I/O.

mod adam;
mod checkpoint;
mod dense;
mod grad;
mod loss;
mod model;
mod spectral;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use grad::{gradient, mean_loss};
pub use loss::{loss, mse_loss, sobolev_loss, sobolev_weight, LossConfig, LossKind};
pub use model::{MnoModel, ModelConfig, ParamInfo, SpectralBlock};
pub use train::{lr_at, split_indices, train, train_on_split, EpochStats, History, Split, TrainConfig};
