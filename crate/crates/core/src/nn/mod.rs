//! Reverse-mode differentiation over 2-D latent tensors, the layer
//! kernels it records, parameters and the optimizer.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tape;

pub use kernels::{ConvSpec, ElnConfig, Latent, VarianceCentering};
pub use optim::{clip_global_norm, Adam};
pub use params::{Constraint, Grads, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
