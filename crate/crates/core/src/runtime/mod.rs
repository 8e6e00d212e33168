//! Training, evaluation, checkpointing, and configuration.

mod checkpoint;
mod config;
mod eval;
mod forward;
mod params;
mod train;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use eval::evaluate;
pub use forward::{batch_labels, forward_predict, window_probabilities};
pub use params::{bind_model, group_of, BoundModel, LrGroup, ModelParams};
pub use train::{split_loss, train, train_with_progress, EarlyStopping, TrainOutcome};
