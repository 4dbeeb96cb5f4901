//! Model configuration, weights, and the forward pass.

mod config;
mod forward;
mod gradcheck;
mod params;

pub use config::{
    Activation, EpeMode, ModelConfig, MpType, TaskKind, Variant, CLIQUE_VOCAB, DEGREE_CLAMP,
    EDGE_VOCAB, NODE_VOCAB,
};
pub use forward::{forward, forward_bound, DropoutRng, PreparedGraph};
pub use gradcheck::model_grad_check;
pub use params::{BoundParams, ModelParams, ParamTensor};
