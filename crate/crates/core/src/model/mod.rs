//! The white blood cell CNN, its training loop and checkpoint format.

mod arch;
mod checkpoint;
mod net;
mod train;

pub use arch::{Architecture, ConvBlock, LayerSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MAGIC, VERSION};
pub use net::{Prediction, WbcNet};
pub use train::{
    epochs_csv, evaluate, train, train_step, write_epochs_csv, BestCriterion, EpochRecord, Evaluation, TrainConfig,
    TrainOutcome,
};
