//! Dense tensors, reverse-mode gradients, MLPs and Adam.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_params, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheck};
pub use mlp::{mlp_forward, BoundMlp, Layer, MlpParams, MlpSpec};
pub use tape::{sigmoid, softplus, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
