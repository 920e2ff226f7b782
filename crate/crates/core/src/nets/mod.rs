//! Small neural-network toolkit: matrices, a reverse-mode tape, the sequence
//! encoder with actor/critic heads, optimizers and checkpoints.

mod checkpoint;
mod matrix;
mod model;
mod optim;
mod params;
pub(crate) mod tape;

pub use checkpoint::{Checkpoint, NamedParam, CHECKPOINT_VERSION};
pub use matrix::Matrix;
pub use model::{
    EncoderConfig, HeadOut, HeadOutput, HeadSpec, NetConfig, NetInput, Network, Rendition,
    PRIVATE_FEATURES,
};
pub use optim::{clip_grad_norm, Adam, Optimizer, Sgd};
pub use params::{fan_in_init, orthogonal_init, Gradients, ParamId, ParamSlice, ParameterStore};
pub use tape::{im2col, param_grad_error, Adjoints, Graph, Var};
