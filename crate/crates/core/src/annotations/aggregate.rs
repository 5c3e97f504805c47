use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::records::AnnotationRecord;
use crate::attributes::{Attribute, AttributeVector, ATTRIBUTE_COUNT};
use crate::error::{Error, Result};

pub const DEFAULT_ANNOTATORS: usize = 10;

/// Mean rating of every attribute of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub is_real: bool,
    pub scores: AttributeVector,
    pub annotators: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncompleteImage {
    pub image_id: String,
    /// Ratings received per attribute, in attribute order.
    pub counts: [usize; ATTRIBUTE_COUNT],
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Aggregation {
    pub images: Vec<ImageScore>,
    pub incomplete: Vec<IncompleteImage>,
}

#[derive(Default)]
struct Accumulator {
    is_real: Option<bool>,
    sums: [f64; ATTRIBUTE_COUNT],
    counts: [usize; ATTRIBUTE_COUNT],
    workers: BTreeSet<String>,
}

/// Averages non-probe ratings per image and attribute.
///
/// Images with fewer than `required` ratings of any attribute are listed as
/// incomplete and left out of `images`.
pub fn aggregate(records: &[AnnotationRecord], required: usize) -> Result<Aggregation> {
    if required == 0 {
        return Err(Error::config("annotators", "must be at least 1"));
    }
    let mut per_image: BTreeMap<&str, Accumulator> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_probe) {
        let acc = per_image.entry(&r.image_id).or_default();
        match acc.is_real {
            Some(flag) if flag != r.is_real => {
                return Err(Error::Malformed(format!(
                    "image {} is marked both real and generated",
                    r.image_id
                )))
            }
            _ => acc.is_real = Some(r.is_real),
        }
        let k = r.attribute.index();
        acc.sums[k] += f64::from(r.choice);
        acc.counts[k] += 1;
        acc.workers.insert(r.worker_id.clone());
    }
    let mut out = Aggregation::default();
    for (id, acc) in per_image {
        if acc.counts.iter().any(|&c| c < required) {
            out.incomplete.push(IncompleteImage {
                image_id: id.to_string(),
                counts: acc.counts,
            });
            continue;
        }
        let mut scores = [0.0; ATTRIBUTE_COUNT];
        for a in Attribute::ALL {
            let k = a.index();
            scores[k] = acc.sums[k] / acc.counts[k] as f64;
        }
        out.images.push(ImageScore {
            image_id: id.to_string(),
            is_real: acc.is_real.unwrap_or(false),
            scores: AttributeVector(scores),
            annotators: acc.workers.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratings(img: &str, workers: usize, choice: u8) -> Vec<AnnotationRecord> {
        let mut v = Vec::new();
        for w in 0..workers {
            for a in Attribute::ALL {
                v.push(AnnotationRecord {
                    worker_id: format!("w{w}"),
                    assignment_id: format!("a{w}"),
                    image_id: img.into(),
                    attribute: a,
                    choice,
                    is_probe: false,
                    approval_rate: 1.0,
                    is_real: false,
                });
            }
        }
        v
    }

    #[test]
    fn short_images_are_flagged() {
        let mut recs = ratings("full", 10, 4);
        recs.extend(ratings("short", 9, 2));
        let agg = aggregate(&recs, 10).unwrap();
        assert_eq!(agg.images.len(), 1);
        assert_eq!(agg.images[0].image_id, "full");
        assert_eq!(agg.images[0].annotators, 10);
        assert_eq!(agg.incomplete[0].counts, [9; 8]);
    }

    #[test]
    fn probes_do_not_count() {
        let mut recs = ratings("x", 10, 3);
        let mut probe = recs[0].clone();
        probe.is_probe = true;
        probe.choice = 5;
        recs.push(probe);
        let agg = aggregate(&recs, 10).unwrap();
        assert_eq!(agg.images[0].scores.0, [3.0; 8]);
    }
}
