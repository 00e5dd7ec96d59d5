//! Neural kernels with exact backward passes and the transformer encoder.

mod attention;
mod batch;
mod checkpoint;
mod encoder;
mod init;
mod layer_norm;
mod linear;
mod params;
mod positions;

pub use attention::{mha_self_attention, AttentionCache, SelfAttention};
pub use batch::PaddedBatch;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{encoder_forward, Encoder, EncoderCache, EncoderConfig, Mode};
pub use init::{init_params, param_layout, HeadConfig, Init};
pub use layer_norm::{layer_norm, layer_norm_backward, LayerNormCache, LayerNormSlot, LAYER_NORM_EPS};
pub use linear::{linear_backward, linear_forward, LinearGrads, LinearSlot};
pub use params::{ParamSpec, ParamStore};
pub use positions::sinusoidal_positions;
