use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// How many mixture components a batch of samples lands on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    /// Modes holding at least the minimum fraction of samples.
    pub covered: usize,
    /// Fraction of samples within the radius of each center.
    pub fractions: Vec<f64>,
    /// Fraction of samples within the radius of any center.
    pub high_quality: f64,
}

/// A sample counts for its nearest center when it lies within
/// `radius_sigmas·sigma`; a center is covered when it collects at least
/// `min_fraction` of all samples.
pub fn mode_coverage(
    samples: &Tensor,
    centers: &[Vec<f64>],
    sigma: f64,
    radius_sigmas: f64,
    min_fraction: f64,
) -> Result<ModeCoverage> {
    if centers.is_empty() || centers.iter().any(|c| c.len() != samples.cols()) {
        return Err(Error::contract("centers must be non-empty and match the sample width"));
    }
    let radius = radius_sigmas * sigma;
    let mut counts = vec![0usize; centers.len()];
    let n = samples.rows();
    for r in 0..n {
        let x = samples.row(r);
        let (best, dist) = centers
            .iter()
            .map(|c| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
        if dist <= radius {
            counts[best] += 1;
        }
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(ModeCoverage {
        covered: fractions.iter().filter(|&&f| f >= min_fraction).count(),
        high_quality: counts.iter().sum::<usize>() as f64 / n as f64,
        fractions,
    })
}

/// Bin index of every value, equal-frequency bins by rank.
fn rank_bins(v: &[f64], bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0; v.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / v.len();
    }
    out
}

/// Plug-in mutual information (nats) between two discretized variables.
pub fn binned_mutual_information(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![0.0; bins * bins];
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * bins + y] += 1.0 / n;
        pa[x] += 1.0 / n;
        pb[y] += 1.0 / n;
    }
    let mut mi = 0.0;
    for x in 0..bins {
        for y in 0..bins {
            let p = joint[x * bins + y];
            if p > 0.0 {
                mi += p * (p / (pa[x] * pb[y])).ln();
            }
        }
    }
    mi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    /// Summed pairwise binned mutual information.
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Permutation test of independence between the rows of `samples` and the
/// rows of `attrs`.
///
/// The statistic sums the binned mutual information over every pair of a
/// sample column and an attribute column; the null distribution comes from
/// shuffling the attribute rows.
pub fn independence_test<R: Rng + ?Sized>(
    samples: &Tensor,
    attrs: &Tensor,
    bins: usize,
    permutations: usize,
    rng: &mut R,
) -> Result<PermutationTest> {
    let n = samples.rows();
    if attrs.rows() != n || n < 2 * bins || bins < 2 || permutations == 0 {
        return Err(Error::contract(
            "independence test needs matching rows, at least two bins and twice as many rows as bins",
        ));
    }
    let column = |t: &Tensor, j: usize| -> Vec<f64> { (0..t.rows()).map(|r| t.at(r, j)).collect() };
    let xs: Vec<Vec<usize>> = (0..samples.cols()).map(|j| rank_bins(&column(samples, j), bins)).collect();
    let ys: Vec<Vec<usize>> = (0..attrs.cols()).map(|j| rank_bins(&column(attrs, j), bins)).collect();
    let stat = |perm: &[usize]| -> f64 {
        let mut total = 0.0;
        let mut permuted = vec![0; n];
        for y in &ys {
            for (k, &p) in perm.iter().enumerate() {
                permuted[k] = y[p];
            }
            for x in &xs {
                total += binned_mutual_information(x, &permuted, bins);
            }
        }
        total
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let observed = stat(&perm);
    let mut at_least = 0;
    for _ in 0..permutations {
        perm.shuffle(rng);
        if stat(&perm) >= observed {
            at_least += 1;
        }
    }
    Ok(PermutationTest {
        statistic: observed,
        p_value: (1 + at_least) as f64 / (1 + permutations) as f64,
        permutations,
    })
}
