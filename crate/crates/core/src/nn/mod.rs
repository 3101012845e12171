//! Minimal differentiable compute core: dense f32 tensors, an eager tape
//! with reverse-mode gradients, Adam, and the attention blocks the
//! forecasting model is assembled from.

pub mod attention;
pub mod gradcheck;
pub mod graph;
pub mod store;
pub mod tensor;

pub use attention::{
    multi_head_attention, AttentionConfig, AttentionParams, EncoderLayerParams,
    FeedForwardParams, LayerNormParams, LinearParams,
};
pub use graph::{Graph, NodeId, LAYER_NORM_EPS};
pub use store::{AdamConfig, Init, ParameterStore};
pub use tensor::{NnError, TensorValue};
