//! Evaluation harness: ablation configurations, sensor variants, the
//! synthetic sequence generator, metrics and the experiment matrix.

pub mod ablation;
pub mod generator;
pub mod matrix;
pub mod metrics;
pub mod variant;

pub use ablation::{canonical, AblationConfig};
pub use generator::{default_baselines, generate, generate_all, read_sequence, write_sequence, SequenceFrame};
pub use matrix::{
    cell_config, cell_seed, run_cell, run_matrix, AggregateRow, CellKey, CellResult, MatrixReport, MatrixResult,
    MatrixSpec, NamedSequence,
};
pub use metrics::{
    binarize, classification_metrics, oscillation_count, percentile_latency, Binary, ClassificationMetrics,
    MetricOptions, OscillationMode, RunMetrics, RunSamples,
};
pub use variant::SensorVariant;
