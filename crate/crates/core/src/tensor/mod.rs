//! Dense tensors, reverse-mode differentiation, layers and optimisation.

mod gradcheck;
mod graph;
mod nn;
mod param;
#[allow(clippy::module_inception)]
mod tensor;


pub use gradcheck::grad_check;
pub use graph::{
    mish, sigmoid, softmax_in_place, softplus, AttentionLayout, CustomOp, Graph, Var,
    LAYER_NORM_EPS,
};
pub use nn::{
    sinusoidal_timestep, Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention,
    EMBEDDING_INIT_STD,
};
pub use param::{Adam, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
