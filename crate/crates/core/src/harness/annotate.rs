use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotations::AnnotationRecord;
use crate::attributes::{Attribute, AttributeOracle, AttributeVector};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Simulated crowd: who rates what, how noisily, and which rules they break.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisSpec {
    pub annotators_per_image: usize,
    pub images_per_assignment: usize,
    pub probes_per_assignment: usize,
    pub workers: usize,
    /// Standard deviation of the rating noise before rounding.
    pub noise_sd: f64,
    /// Fraction of workers whose approval rate falls below the threshold.
    pub low_approval_fraction: f64,
    /// Fraction of assignments with one probe answered far from the original.
    pub inconsistent_probe_fraction: f64,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        SynthesisSpec {
            annotators_per_image: 10,
            images_per_assignment: 20,
            probes_per_assignment: 5,
            workers: 40,
            noise_sd: 0.5,
            low_approval_fraction: 0.1,
            inconsistent_probe_fraction: 0.1,
        }
    }
}

impl SynthesisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.annotators_per_image == 0 || self.images_per_assignment == 0 {
            return Err(Error::config("annotators_per_image", "must be at least 1"));
        }
        if self.workers < self.annotators_per_image {
            return Err(Error::config(
                "workers",
                format!(
                    "{} workers cannot give every image {} distinct annotators",
                    self.workers, self.annotators_per_image
                ),
            ));
        }
        if self.probes_per_assignment > self.images_per_assignment {
            return Err(Error::config("probes_per_assignment", "cannot exceed images per assignment"));
        }
        for (field, v) in [
            ("low_approval_fraction", self.low_approval_fraction),
            ("inconsistent_probe_fraction", self.inconsistent_probe_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("noise_sd", "must be non-negative"));
        }
        Ok(())
    }
}

/// Images to be rated.
#[derive(Clone, Debug)]
pub struct ImagePool {
    pub ids: Vec<String>,
    pub samples: Tensor,
    pub is_real: Vec<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct SynthesizedAnnotations {
    pub records: Vec<AnnotationRecord>,
    /// Assignments built to violate a quality rule.
    pub tainted: BTreeSet<String>,
    /// Oracle scores rounded to the rating scale, per image.
    pub discretized: Vec<AttributeVector>,
}

/// Oracle scores rounded to whole ratings.
pub fn discretize(v: &AttributeVector) -> AttributeVector {
    AttributeVector(v.0.map(|x| x.round().clamp(1.0, 5.0)))
}

fn to_choice(x: f64) -> u8 {
    x.round().clamp(1.0, 5.0) as u8
}

/// Simulates the rating campaign for `pool`.
///
/// Every image gets `annotators_per_image` accepted ratings: each tainted
/// assignment is reposted to a fresh clean worker, as a requester would.
pub fn synthesize_annotations<R: Rng + ?Sized>(
    pool: &ImagePool,
    oracle: &AttributeOracle,
    spec: &SynthesisSpec,
    rng: &mut R,
) -> Result<SynthesizedAnnotations> {
    spec.validate()?;
    let n = pool.ids.len();
    if n == 0 || pool.samples.rows() != n || pool.is_real.len() != n {
        return Err(Error::contract("image pool ids, samples and flags must align"));
    }
    let truth: Vec<AttributeVector> = (0..n)
        .map(|i| oracle.eval(pool.samples.row(i)))
        .collect::<Result<_>>()?;
    let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config("noise_sd", e.to_string()))?;
    let mut draw = |rng: &mut R, x: f64| -> u8 {
        if spec.noise_sd == 0.0 {
            to_choice(x)
        } else {
            to_choice(x + noise.sample(rng))
        }
    };
    let approval: Vec<f64> = (0..spec.workers)
        .map(|_| {
            if rng.random::<f64>() < spec.low_approval_fraction {
                rng.random_range(0.80..0.949)
            } else {
                rng.random_range(0.95..=1.0)
            }
        })
        .collect();
    let group = spec.workers / spec.annotators_per_image;
    let mut out = SynthesizedAnnotations {
        discretized: truth.iter().map(discretize).collect(),
        ..Default::default()
    };
    let mut reposts = 0usize;
    for round in 0..spec.annotators_per_image {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for (c, chunk) in order.chunks(spec.images_per_assignment).enumerate() {
            let worker = round * group + c % group;
            let assignment = format!("a{round:02}_{c:04}");
            let bad_probe = rng.random::<f64>() < spec.inconsistent_probe_fraction;
            let low = approval[worker] < 0.95;
            emit(
                &mut out.records,
                &mut draw,
                rng,
                pool,
                &truth,
                chunk,
                &format!("w{worker:03}"),
                &assignment,
                approval[worker],
                spec.probes_per_assignment,
                bad_probe,
            );
            if bad_probe || low {
                out.tainted.insert(assignment.clone());
                let fresh = format!("r{reposts:04}");
                reposts += 1;
                emit(
                    &mut out.records,
                    &mut draw,
                    rng,
                    pool,
                    &truth,
                    chunk,
                    &fresh,
                    &format!("{assignment}_repost"),
                    1.0,
                    spec.probes_per_assignment,
                    false,
                );
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn emit<R: Rng + ?Sized>(
    records: &mut Vec<AnnotationRecord>,
    draw: &mut impl FnMut(&mut R, f64) -> u8,
    rng: &mut R,
    pool: &ImagePool,
    truth: &[AttributeVector],
    images: &[usize],
    worker: &str,
    assignment: &str,
    approval_rate: f64,
    probes: usize,
    bad_probe: bool,
) {
    let start = records.len();
    let record = |i: usize, a: Attribute, choice: u8, is_probe: bool| AnnotationRecord {
        worker_id: worker.to_string(),
        assignment_id: assignment.to_string(),
        image_id: pool.ids[i].clone(),
        attribute: a,
        choice,
        is_probe,
        approval_rate,
        is_real: pool.is_real[i],
    };
    for &i in images {
        for a in Attribute::ALL {
            let c = draw(rng, truth[i].get(a));
            records.push(record(i, a, c, false));
        }
    }
    let picked: Vec<usize> = images.choose_multiple(rng, probes.min(images.len())).copied().collect();
    for (k, &i) in picked.iter().enumerate() {
        for a in Attribute::ALL {
            let pos = images.iter().position(|&x| x == i).expect("probe from this assignment");
            let original = records[start + pos * Attribute::ALL.len() + a.index()].choice;
            let choice = if bad_probe && k == 0 && a == Attribute::Realism {
                if original <= 3 { original + 2 } else { original - 2 }
            } else {
                let again = draw(rng, truth[i].get(a));
                (again as i16).clamp(original as i16 - 1, original as i16 + 1) as u8
            };
            records.push(record(i, a, choice, true));
        }
    }
}
