//! 3D convolutional autoencoder: three stride-2 convolutions (analysis)
//! mirrored by three transposed convolutions (synthesis), trained with
//! Adam on either a focal loss (binary grids) or an adaptive MSE (TDF).

mod adam;
mod checkpoint;
pub mod conv;
mod loss;
mod model;
mod synthetic;
mod tensor;
mod train;

pub use adam::Adam;
pub use checkpoint::{load_params, load_params_for, read_params, save_params, write_params, MAGIC};
pub use loss::{
    adaptive_mse_loss, adaptive_weight, focal_loss_grad, AdaptiveMseConfig, FocalConfig,
};
pub use model::{
    analysis_forward, synthesis_forward, Activation, Architecture, Autoencoder, AutoencoderParams,
    Gradients, Layer, LayerKind, LayerSpec,
};
pub use synthetic::{blocks_to_tensors, synthetic_block, synthetic_dataset, ShapeKind};
pub use tensor::Tensor4;
pub use train::{dataset_loss, train, train_with, TrainConfig, TrainLoss, TrainOutcome};
