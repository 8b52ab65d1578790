//! Offline reinforcement learning with a conditional diffusion policy trained
//! inside a GAN-regularized actor-critic loop.
//!
//! Module map:
//! - [`engine`]: tensors, reverse-mode gradients, MLPs, Adam, parameter files.
//! - [`diffusion`]: noise schedule, forward process, reverse-chain sampling and
//!   the noise-prediction loss.
//! - [`critic`]: twin Q-networks and their targets.
//! - [`adversarial`]: discriminator losses, down-weights and score terms.
//! - [`trainer`]: the full update step, training runs and evaluation.
//! - [`data`]: datasets, the DPG1 file format and toy environments.

pub mod adversarial;
pub mod critic;
pub mod data;
pub mod diffusion;
pub mod engine;
pub mod error;
pub mod trainer;

pub use data::{Batch, Dataset, DatasetMeta};
pub use diffusion::{NoiseSchedule, PolicyNet};
pub use engine::{MlpParams, Tensor};
pub use error::{Error, Result};
pub use trainer::{TrainConfig, TrainerState};
