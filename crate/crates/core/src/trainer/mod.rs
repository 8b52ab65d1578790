//! The training loop: interleaved discriminator, critic and delayed policy
//! updates with Polyak-averaged targets.

mod config;
mod run;
mod state;

pub use config::{GanVariant, TrainConfig};
pub use run::{
    evaluate, evaluate_with, load_checkpoint, load_policy, read_eval_scores, save_checkpoint,
    train, Controller, EvalResult, Manifest, References, RunSummary, TrainOptions, CHECKPOINT_DIR,
    CONFIG_FILE, MANIFEST_FILE, METRICS_FILE, METRICS_HEADER, REFERENCES_FILE,
};
pub use state::{DownWeights, Phase, PolicyLossParts, StepMetrics, TrainerState};
