//! Decoder-only transformer for mutation-trajectory token streams.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod optim;
pub mod predict;
pub mod train;
pub mod transformer;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader};
pub use config::{ConfigError, LrSchedule, ModelConfig, TrainConfig};
pub use gradcheck::{gradient_check, GradCheck};
pub use optim::Adam;
pub use predict::{rank_next_mutations, rank_without_location, ModelPredictor, RankedPrediction};
pub use train::{batch_indices, train, write_log_csv, LogRow, TrainError, TrainState};
pub use transformer::{Example, Model, ModelError, ParamLayout};
