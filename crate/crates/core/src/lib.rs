//! Triple set prediction for knowledge graphs with an absorbing-state
//! discrete diffusion model over relational adjacency tensors.

pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod kg;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
