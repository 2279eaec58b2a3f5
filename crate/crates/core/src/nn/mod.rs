//! Residual networks, the optimizer and the training loop.

pub mod adam;
pub mod resnet;
pub mod train;

pub use adam::{adam_step, Adam, AdamConfig, AdamMoments};
pub use resnet::{ArchSpec, ResNet1d, StageSpec, Variant, DEFAULT_STEM_CHANNELS};
pub use train::{
    capacity_probe, split_indices, train, train_with_progress, CapacityReport, EpochRecord,
    ForceModel, Normalizer, Representation, TrainConfig, TrainHistory, TrainingSet,
};
