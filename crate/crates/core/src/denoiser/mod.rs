//! Structure-aware denoising network with hand-written gradients.

mod network;
mod params;

pub use network::{
    backward, denoise, forward, fuse_graphs, fuse_states, rce_init, rce_layer, rel_attention, reldit_block,
    time_embedding, DenoiserOutput, EdgeStructure, ForwardCache,
};
pub use params::{Block, DenoiserConfig, DenoiserParams, RceLayer};
