//! Losses, pair scheduling, Adam and the training loop.

mod adam;
mod loss;
mod pairs;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use loss::{cross_entropy, invariance_loss, objective, total_loss, Objective};
pub use pairs::{make_pairs, PairIndex};
pub use trainer::{
    argmax, epoch_csv_row, evaluate, image_batch, predict, train, train_with_observer, write_epoch_csv,
    ApproachFlags, EpochCsvWriter, EpochRecord, TrainConfig, TrainOutcome, EPOCH_CSV_HEADER,
};
