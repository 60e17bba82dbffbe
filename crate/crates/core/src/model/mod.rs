//! Toy decoder-only language model with optional low-rank adapters.

mod checkpoint;
mod forward;
mod params;
pub mod tape;
mod tensor;

pub use checkpoint::{Container, ContainerHeader, FORMAT_VERSION, MAGIC};
pub use forward::{
    forward, forward_on_tape, gradients, inject, load_params, next_token_targets, ntp_loss,
    ntp_loss_on_tape, position_encoding, sentence_embedding, ForwardNodes,
};
pub use params::{attach_adapters, init, Layout, LayerLayout, ModelConfig, NamedTensor, ParameterSet, Projection};
pub use tensor::{dot, norm, EmbeddingMatrix, Matrix};
