//! The alignment autoencoder: four strided convolutions down to a latent
//! vector, four transposed convolutions back, trained first for
//! reconstruction and then jointly for reconstruction and cosine alignment
//! with GT representations.

mod config;
mod model;
mod params;
mod train;

pub use config::{AEConfig, AeSettings, MIN_AUTO_HIDDEN};
pub use model::{
    decode, encode, encode_tensor, sample_loss, sample_loss_and_grad, views, SampleLoss, ENCODER_MODEL_NAME,
};
pub use params::{
    checkpoint_bytes, checkpoint_digest, init_params, read_checkpoint, write_checkpoint, AEParams, LayerParams,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{cosine_lr, train_stage1, train_stage2, train_two_stage, EpochRecord, Stage, TrainReport};
