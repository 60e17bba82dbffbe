//! Temporal alignment objective and the training loop.

mod fisher;
mod losses;
mod objective;
mod train;

pub use fisher::{estimate_fisher, squared_gradient};
pub use losses::{
    cosine_similarity, ewc_penalty, final_loss, intra_inter_loss, partition, temporal_loss,
    AlignmentLosses, ClassPartition, FisherDiagonal,
};
pub use objective::{objective_on_tape, Anchor, LossWeights, ObjectiveNodes};
pub use train::{
    corpus_labels, epoch_batches, measure, plain_ntp_step, train, write_metrics_csv, EpochMetrics,
    TrainOutcome, TrainingConfig, TrainingMode,
};
