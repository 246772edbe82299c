//! Learned relative-pose estimator: layers, loss, model and training.

pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use model::{pool_image, ModelConfig, PoseLabel, PoseRegressor, QuantilePrediction};
pub use train::{
    split_dataset, train, train_with_validation, EpochMetrics, TrainConfig, TrainReport,
    TrainSample,
};
