//! Trainable text encoder and vision blocks aligned with a contrastive
//! objective against frozen patch features.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod tape;
pub mod tokenizer;
pub mod train;

pub use checkpoint::{decode_model, encode_model, read_model, write_model};
pub use loss::{contrastive_loss, LossOutput};
pub use model::{AlignmentModel, EncoderInfo, ModelConfig, NormMode, Pooling};
pub use tape::Mat;
pub use tokenizer::Tokenizer;
pub use train::{
    batch_loss, forward_backward, gradient_check, learning_rate, pool_boundary_grads, train, train_with,
    GradCheckReport, PoolBoundaryGrad, TrainConfig, TrainPair, TrainReport,
};
