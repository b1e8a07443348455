//! Training, evaluation, synthetic data and experiment runners.

mod config;
mod experiment;
mod metrics;
mod synth;
mod train;

pub use config::{ExperimentConfig, SynthConfig};
pub use experiment::{ablate, run_experiment, sweep, AblationReport, AblationRow, DataSource, SweepParam};
pub use metrics::{auc, rela_impr};
pub use synth::gen_synthetic;
pub use train::{evaluate, fit, init_model, prepare_dataset, train, DataShape, Dataset, EvalReport};
