//! Synthetic data, simulated annotation campaigns and the experiment matrix.

mod annotate;
mod data;
mod experiment;

pub use annotate::{discretize, synthesize_annotations, ImagePool, SynthesisSpec, SynthesizedAnnotations};
pub use data::{generate_dataset, Dataset, DatasetSpec};
pub use experiment::{
    build_report, comparison_table, fit_attribute_net, oracle_scores, run_experiment, run_id, ComparisonRow,
    ExperimentConfig, ExperimentReport, RunSummary, Spread, StatisticsBlock,
};
