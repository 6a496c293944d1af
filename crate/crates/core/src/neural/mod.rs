//! Learned samplers: a small dense/convolutional network stack, the
//! generator and discriminator models, their training loops, learned
//! sampling for the planners and a binary checkpoint format.

pub mod checkpoint;
pub mod layers;
pub mod models;
pub mod optim;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, NetEntry, NetHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{dropout_mask, Forward, LayerSpec, Mode, Sequential};
pub use models::{voxel_input, Discriminator, Generator, LATENT_DIM, TRUNK_DROPOUT};
pub use optim::{Adagrad, ADAGRAD_EPS, DEFAULT_LR};
pub use sampling::{
    bidirectional_plan, compnetx_sample, kbatch_inputs, kbatch_sample, learned_fmt, nproj,
    LearnedSampler, LearnedStats, NeuralParams, Nproj,
};
pub use tensor::Tensor;
pub use train::{
    distance_set, generator_loss, scene_latents, train_discriminator, train_generator,
    DiscriminatorTrainer, DistanceExample, DistanceSet, Example, GeneratorTrainer, LossCurve,
    TrainConfig, TrainingSet, NEGATIVE_RADIUS,
};
