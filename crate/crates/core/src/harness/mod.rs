//! Configuration, synthetic data, training, evaluation and the pipeline
//! entry point used by the command-line tool.

pub mod config;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use config::{BlobSource, ExperimentConfig};
pub use pipeline::{pipeline_run, FullFace};
pub use synth::{synth_generate, Sample, Split};
pub use train::{eval, evaluate, train, train_on, Evaluation, TrainSummary};
