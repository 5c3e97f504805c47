use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::records::{group_assignments, AnnotationRecord};
use crate::attributes::Attribute;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcConfig {
    /// Workers below this approval rate are rejected; the threshold itself passes.
    pub min_approval_rate: f64,
    /// Largest allowed gap between a probe and the original rating.
    pub max_probe_difference: u8,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            min_approval_rate: 0.95,
            max_probe_difference: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum QcRule {
    LowApprovalRate {
        rate: f64,
    },
    InconsistentProbe {
        image_id: String,
        attribute: Attribute,
        original: u8,
        probe: u8,
    },
}

impl fmt::Display for QcRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QcRule::LowApprovalRate { rate } => write!(f, "approval rate {rate} below threshold"),
            QcRule::InconsistentProbe {
                image_id,
                attribute,
                original,
                probe,
            } => write!(
                f,
                "probe of {image_id}/{attribute} answered {probe}, original {original}"
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub assignment_id: String,
    pub worker_id: String,
    pub rule: QcRule,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct QcOutcome {
    /// Records of accepted assignments, probes included, in input order.
    pub accepted: Vec<AnnotationRecord>,
    pub rejections: Vec<Rejection>,
}

/// Rejects whole assignments that fail the approval-rate or probe-consistency rule.
///
/// Running the filter on its own output changes nothing.
pub fn qc_filter(records: &[AnnotationRecord], config: &QcConfig) -> Result<QcOutcome> {
    let mut rejected = HashMap::new();
    let mut rejections = Vec::new();
    for asg in group_assignments(records)? {
        if let Some(rule) = check_assignment(&asg.records, asg.approval_rate, config)? {
            rejected.insert(asg.assignment_id.to_string(), ());
            rejections.push(Rejection {
                assignment_id: asg.assignment_id.to_string(),
                worker_id: asg.worker_id.to_string(),
                rule,
            });
        }
    }
    let accepted = records
        .iter()
        .filter(|r| !rejected.contains_key(&r.assignment_id))
        .cloned()
        .collect();
    Ok(QcOutcome {
        accepted,
        rejections,
    })
}

fn check_assignment(
    records: &[&AnnotationRecord],
    approval_rate: f64,
    config: &QcConfig,
) -> Result<Option<QcRule>> {
    let mut originals: HashMap<(&str, Attribute), u8> = HashMap::new();
    for r in records.iter().filter(|r| !r.is_probe) {
        originals.insert((&r.image_id, r.attribute), r.choice);
    }
    // structural problems are reported even if a rule would reject the assignment
    let mut first_bad = None;
    for r in records.iter().filter(|r| r.is_probe) {
        let original = *originals.get(&(r.image_id.as_str(), r.attribute)).ok_or_else(|| {
            Error::Malformed(format!(
                "probe for {}/{} in assignment {} has no original rating",
                r.image_id, r.attribute, r.assignment_id
            ))
        })?;
        if first_bad.is_none() && original.abs_diff(r.choice) > config.max_probe_difference {
            first_bad = Some(QcRule::InconsistentProbe {
                image_id: r.image_id.clone(),
                attribute: r.attribute,
                original,
                probe: r.choice,
            });
        }
    }
    if approval_rate < config.min_approval_rate {
        return Ok(Some(QcRule::LowApprovalRate {
            rate: approval_rate,
        }));
    }
    Ok(first_bad)
}
