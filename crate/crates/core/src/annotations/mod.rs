//! Crowd annotations: ingestion, quality control, aggregation and the
//! statistics run on the aggregated scores.

mod aggregate;
mod cfa;
mod efa;
mod qc;
mod records;
mod report;
mod stats;

pub use aggregate::{aggregate, Aggregation, ImageScore, IncompleteImage, DEFAULT_ANNOTATORS};
pub use cfa::{cfa_fit, implied_covariance, CfaFit, CfaOptions, CfaStructure, FactorSpec};
pub use efa::{align_loadings, efa, implied_correlation, varimax, EfaOptions, EfaResult};
pub use qc::{qc_filter, QcConfig, QcOutcome, QcRule, Rejection};
pub use records::{
    group_assignments, read_records, read_records_from, write_records, AnnotationRecord,
    Assignment,
};
pub use report::{statistics_report, ReportConfig, StatisticsReport};
pub use stats::{
    compare_groups, covariance_matrix, mann_whitney, pearson_matrix, welch_z_test, AttributeComparison,
    CorrelationMatrix, GroupStats, MannWhitney, ZTest,
};
