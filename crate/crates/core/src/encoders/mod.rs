//! LSTM, transformer and state-space sequence encoders with a shared
//! feature layer and regression head.

mod lstm;
mod model;
mod ssm;
mod train;
mod transformer;

pub use model::{EncoderKind, EncoderModel, EncoderSpec, ForwardNodes, Param};
pub use train::{train_encoder, TargetKind, TrainConfig, TrainReport};
pub use transformer::positional_encoding;
