//! Offline datasets, their binary format and the toy environments.

mod dataset;
pub mod env;
mod generate;

pub use dataset::{
    decode_dataset, encode_dataset, load_dataset, normalized_score, sample_batch, sample_indices,
    save_dataset, Batch, Dataset, DatasetMeta,
};
pub use env::{Bandit2d, Env, EnvName, PointMaze, Step};
pub use generate::{
    gen_bandit2d, gen_pointmaze, generate, reference_returns, rollout, ScriptedPolicy,
    REFERENCE_EPISODES,
};
