//! Patch graders: a 3D encoder-decoder with hand-written backpropagation,
//! Adam, augmentation and early stopping, and the ensemble that grades whole
//! volumes.

mod adam;
mod ensemble;
mod network;
pub mod tensor;
mod train;

pub use adam::AdamState;
pub use ensemble::{
    grade_volume, prepare_intensity, prepare_target, train_ensemble, transfer_source, GraderEnsemble, GradingSample,
    MemberRecord,
};
pub use network::{mse_loss, tensor_mse, GraderArch, GraderWeights, LayerDescriptor};
pub use tensor::Tensor;
pub use train::{
    mix_samples, stratified_split, train_grader, translate, validation_loss, GraderConfig, PatchSample,
    TrainedGrader, TrainingRecord,
};
