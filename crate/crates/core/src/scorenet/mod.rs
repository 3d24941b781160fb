//! A small trainable score network with manual reverse-mode gradients.

mod checkpoint;
mod mlp;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use mlp::{Mlp, MlpCache};
pub use model::{MixedScoreModel, ModelScales, ScoreMode};
pub use train::{jacobian_frobenius, train, Adam, TrainConfig, TrainReport};
