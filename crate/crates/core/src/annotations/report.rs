use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, IncompleteImage};
use super::cfa::{cfa_fit, CfaFit, CfaOptions, CfaStructure};
use super::efa::{efa, EfaOptions, EfaResult};
use super::qc::{qc_filter, QcConfig, Rejection};
use super::records::AnnotationRecord;
use super::stats::{compare_groups, covariance_matrix, pearson_matrix, AttributeComparison, CorrelationMatrix};
use crate::attributes::Attribute;
use crate::error::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportConfig {
    pub qc: QcConfig,
    pub annotators: usize,
    pub alpha: f64,
    pub efa_factors: usize,
    pub cfa_structure: CfaStructure,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            qc: QcConfig::default(),
            annotators: super::aggregate::DEFAULT_ANNOTATORS,
            alpha: 0.01,
            efa_factors: 2,
            cfa_structure: CfaStructure::reality_fakeness(),
        }
    }
}

/// Everything the annotation pipeline derives from a record set.
///
/// Factor analyses that cannot run on the data carry the reason instead.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub records: usize,
    pub accepted_records: usize,
    pub rejections: Vec<Rejection>,
    pub images: usize,
    pub incomplete: Vec<IncompleteImage>,
    pub comparisons: Vec<AttributeComparison>,
    pub correlation_all: CorrelationMatrix,
    pub correlation_real: Option<CorrelationMatrix>,
    pub correlation_fake: Option<CorrelationMatrix>,
    pub efa: std::result::Result<EfaResult, String>,
    pub cfa: std::result::Result<CfaFit, String>,
}

pub fn statistics_report(records: &[AnnotationRecord], config: &ReportConfig) -> Result<StatisticsReport> {
    let qc = qc_filter(records, &config.qc)?;
    let agg = aggregate(&qc.accepted, config.annotators)?;
    let comparisons = compare_groups(&agg.images)?;
    let rows = |real: Option<bool>| -> Vec<Vec<f64>> {
        agg.images
            .iter()
            .filter(|s| real.is_none_or(|r| s.is_real == r))
            .map(|s| s.scores.0.to_vec())
            .collect()
    };
    let all = rows(None);
    let correlation_all = pearson_matrix(&all, config.alpha)?;
    let correlation_real = pearson_matrix(&rows(Some(true)), config.alpha).ok();
    let correlation_fake = pearson_matrix(&rows(Some(false)), config.alpha).ok();
    let efa_result = correlation_all
        .dense()
        .and_then(|r| efa(&r, config.efa_factors, &EfaOptions::default()))
        .map_err(|e| e.to_string());
    let names: Vec<String> = Attribute::ALL.iter().map(|a| a.name().to_string()).collect();
    let cfa_result = covariance_matrix(&all)
        .and_then(|s| cfa_fit(&config.cfa_structure, &names, &s, all.len(), &CfaOptions::default()))
        .map_err(|e| e.to_string());
    Ok(StatisticsReport {
        records: records.len(),
        accepted_records: qc.accepted.len(),
        rejections: qc.rejections,
        images: agg.images.len(),
        incomplete: agg.incomplete,
        comparisons,
        correlation_all,
        correlation_real,
        correlation_fake,
        efa: efa_result,
        cfa: cfa_result,
    })
}

impl StatisticsReport {
    /// Markdown table of the group comparison plus the fit line.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| attribute | real mean (sd) | fake mean (sd) | z | p |\n|---|---|---|---|---|\n");
        for c in &self.comparisons {
            let z = c.z.map_or("n/a".to_string(), |z| format!("{z:.2}"));
            let p = c.p.map_or("n/a".to_string(), |p| if p < 0.01 { "<0.01".into() } else { format!("{p:.2}") });
            out.push_str(&format!(
                "| {} | {:.2} ({:.2}) | {:.2} ({:.2}) | {z} | {p} |\n",
                c.attribute, c.mean_real, c.sd_real, c.mean_fake, c.sd_fake
            ));
        }
        match &self.cfa {
            Ok(fit) => out.push_str(&format!("\nConfirmatory fit: {fit}\n")),
            Err(e) => out.push_str(&format!("\nConfirmatory fit unavailable: {e}\n")),
        }
        out
    }
}
