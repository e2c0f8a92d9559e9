//! Residual modality encoders, self-attentive pooling and checkpoint I/O.

pub mod checkpoint;
pub mod layers;
pub mod resnet;
pub mod sap;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::ParamStore;
pub use resnet::{
    count_parameters, encode, head_parameters, AudioEncoderSpec, Encoder, EncoderSpec, ImageEncoderSpec,
};
pub use sap::{sap_pool, sap_pool_backward, SapLayer, SapOutput, SapParams};
