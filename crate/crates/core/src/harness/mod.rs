//! Experiment orchestration: configuration, checkpoints, training and
//! evaluation runs, trajectory export and reproducibility manifests.

mod checkpoint;
mod config;
mod export;
mod runs;

pub use checkpoint::{
    decode, encode, load_checkpoint, save_checkpoint, CheckpointKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{config_hash, load_config, resolve_output_dir, EvalConfig, ExperimentConfig, Method, PerturbConfig, PerturbJoint, OUTPUT_ROOT_ENV};
pub use export::{capsule_surface_points, export_trajectory, EpisodeLog, Frame, StepRecord};
pub use runs::{
    eval_env, eval_table, haptic_baseline, held_out_specs, load_policy, load_teacher_bank, perturb_curves, perturb_table, run_episode,
    summarize, summarize_eval, train_all, train_seed, write_curve_csv, write_eval_csv, write_eval_summary_csv, write_manifest, write_perturb_csv, write_summary_csv, Artifact,
    Controller, CurvePoint, EvalRow, EvalSummaryRow, HapticOutcome, PerturbRow, RunManifest, SummaryRow, TrainOutcome, TrainState,
};

use std::path::PathBuf;

use crate::baselines::BaselineError;
use crate::env::EnvError;
use crate::nets::NetError;
use crate::sac::SacError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint holds a {found:?}, expected a {expected:?}")]
    Kind { found: CheckpointKind, expected: CheckpointKind },
    #[error("distillation needs a teacher bank: {0}")]
    MissingTeacherBank(String),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
