//! Permutation-invariant bag classifier: per-event embedding MLP, mean
//! pooling, and a binary, multi-class or parameterized head, trained with
//! hand-written gradients and Adam.

mod adam;
mod backprop;
mod model;
mod pnn;
mod train;

pub use adam::{adam_step, AdamState};
pub use backprop::{eval_loss, loss_and_grad, Example, Gradient, LossGrad};
pub use model::{
    pool, BagModel, DenseSlots, HeadKind, HeadOutput, Mode, ModelConfig, Normalizer, ParamLayout,
    RunningStats,
};
pub use pnn::{
    build_pnn_training_set, predict_pnn, PnnTrainingSet, PoolSummary, ZERO_NEGATIVE_MIX,
};
pub use train::{train, BagPool, BagPools, ExampleSource, TrainHistory, TrainSchedule};
