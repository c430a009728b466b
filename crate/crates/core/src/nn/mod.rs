//! Small CPU neural-network stack: NCHW tensors, layers with hand-written
//! gradients, cross-entropy, Adam and a training loop.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod real;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{Layer, LayerSpec, Mode, Padding};
pub use loss::{cross_entropy, one_hot, softmax_cross_entropy_grad};
pub use model::{build_model, Architecture, Model, ModelSpec, Sequential, View};
pub use real::Real;
pub use tensor::{concat, split, Tensor};
pub use train::{
    argmax, evaluate, predict, predict_proba, train, EpochRecord, History, TensorDataset,
    TrainConfig,
};
