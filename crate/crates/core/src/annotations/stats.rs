use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::aggregate::ImageScore;
use crate::attributes::Attribute;
use crate::error::{Error, Result};

/// Mean, sample standard deviation and size of one group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl GroupStats {
    /// Uses the `n - 1` denominator.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::contract(format!(
                "group statistics need at least 2 values, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        Ok(GroupStats {
            mean,
            sd: (ss / (n - 1.0)).sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    /// Two-sided, from the standard normal.
    pub p: f64,
}

/// Large-sample two-group test with unequal variances.
pub fn welch_z_test(a: &GroupStats, b: &GroupStats) -> Result<ZTest> {
    if a.count < 2 || b.count < 2 {
        return Err(Error::contract("each group needs at least 2 observations"));
    }
    let se2 = a.sd * a.sd / a.count as f64 + b.sd * b.sd / b.count as f64;
    if se2 <= 0.0 {
        return Err(Error::Domain {
            op: "welch_z_test",
            detail: "both groups have zero variance".into(),
        });
    }
    let z = (a.mean - b.mean) / se2.sqrt();
    let normal = Normal::standard();
    Ok(ZTest {
        z,
        p: 2.0 * normal.cdf(-z.abs()),
    })
}

/// One row of the real-versus-generated comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeComparison {
    pub attribute: Attribute,
    pub mean_real: f64,
    pub sd_real: f64,
    pub mean_fake: f64,
    pub sd_fake: f64,
    /// `None` when both groups are constant.
    pub z: Option<f64>,
    pub p: Option<f64>,
}

/// Compares real and generated images attribute by attribute.
pub fn compare_groups(images: &[ImageScore]) -> Result<Vec<AttributeComparison>> {
    let mut rows = Vec::with_capacity(Attribute::ALL.len());
    for a in Attribute::ALL {
        let pick = |real: bool| -> Vec<f64> {
            images
                .iter()
                .filter(|s| s.is_real == real)
                .map(|s| s.scores.get(a))
                .collect()
        };
        let real = GroupStats::from_values(&pick(true))?;
        let fake = GroupStats::from_values(&pick(false))?;
        let test = match welch_z_test(&real, &fake) {
            Ok(t) => Some(t),
            Err(Error::Domain { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(AttributeComparison {
            attribute: a,
            mean_real: real.mean,
            sd_real: real.sd,
            mean_fake: fake.mean,
            sd_fake: fake.sd,
            z: test.map(|t| t.z),
            p: test.map(|t| t.p),
        });
    }
    Ok(rows)
}

/// Pairwise Pearson correlations with significance masking.
///
/// Entries involving a constant column are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub alpha: f64,
    pub r: Vec<Vec<Option<f64>>>,
    pub p: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    /// Correlation if it is defined and significant at `alpha`.
    pub fn masked(&self, i: usize, j: usize) -> Option<f64> {
        match (self.r[i][j], self.p[i][j]) {
            (Some(r), Some(p)) if p <= self.alpha => Some(r),
            _ => None,
        }
    }

    /// Dense matrix, failing if any entry is undefined.
    pub fn dense(&self) -> Result<Vec<Vec<f64>>> {
        self.r
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .map(|v| {
                        v.ok_or_else(|| {
                            Error::contract(format!("correlation of column {i} is undefined"))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// Correlations between the columns of `rows` (observations by variables).
pub fn pearson_matrix(rows: &[Vec<f64>], alpha: f64) -> Result<CorrelationMatrix> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::contract(format!(
            "correlation needs at least 3 observations, got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", "must lie in (0, 1)"));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::contract("ragged observation rows"));
    }
    let means: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cross = vec![vec![0.0; p]; p];
    for r in rows {
        for i in 0..p {
            let di = r[i] - means[i];
            for j in i..p {
                cross[i][j] += di * (r[j] - means[j]);
            }
        }
    }
    let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).map_err(|e| Error::Domain {
        op: "pearson_matrix",
        detail: e.to_string(),
    })?;
    let mut rm = vec![vec![None; p]; p];
    let mut pm = vec![vec![None; p]; p];
    for i in 0..p {
        for j in i..p {
            let denom = (cross[i][i] * cross[j][j]).sqrt();
            if denom <= 0.0 || !denom.is_finite() {
                continue;
            }
            let r = (cross[i][j] / denom).clamp(-1.0, 1.0);
            let pv = if r.abs() >= 1.0 {
                0.0
            } else {
                let tstat = r * ((n as f64 - 2.0) / (1.0 - r * r)).sqrt();
                (2.0 * t.sf(tstat.abs())).min(1.0)
            };
            rm[i][j] = Some(r);
            rm[j][i] = Some(r);
            pm[i][j] = Some(pv);
            pm[j][i] = Some(pv);
        }
    }
    Ok(CorrelationMatrix {
        n,
        alpha,
        r: rm,
        p: pm,
    })
}

/// Unbiased covariance of the columns of `rows`.
pub fn covariance_matrix(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::contract("covariance needs at least 2 observations"));
    }
    let p = rows[0].len();
    let means: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut s = vec![vec![0.0; p]; p];
    for r in rows {
        for i in 0..p {
            for j in 0..p {
                s[i][j] += (r[i] - means[i]) * (r[j] - means[j]);
            }
        }
    }
    for row in &mut s {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    Ok(s)
}

/// One-sided Mann–Whitney U test that `x` tends to exceed `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of `x`: pairs with `x > y`, ties counting one half.
    pub u: f64,
    pub z: f64,
    pub p: f64,
}

/// Normal approximation with tie correction and no continuity correction.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    let (n1, n2) = (x.len(), y.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Domain { op: "mann_whitney", detail: "both samples must be non-empty".into() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "mann_whitney input".into() });
    }
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_x += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (a, b, nn) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum_x - a * (a + 1.0) / 2.0;
    let var = a * b / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if var <= 0.0 {
        return Err(Error::Domain { op: "mann_whitney", detail: "all values are tied".into() });
    }
    let z = (u - a * b / 2.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(MannWhitney { u, z, p: normal.sf(z) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_from_summary_statistics() {
        let real = GroupStats { mean: 4.13, sd: 0.49, count: 400 };
        let fake = GroupStats { mean: 3.17, sd: 0.55, count: 600 };
        let t = welch_z_test(&real, &fake).unwrap();
        let expected = 0.96 / (0.49f64.powi(2) / 400.0 + 0.55f64.powi(2) / 600.0).sqrt();
        assert!((t.z - expected).abs() < 1e-12);
        assert!(t.p < 1e-100);
    }

    #[test]
    fn constant_groups_rejected() {
        let g = GroupStats { mean: 1.0, sd: 0.0, count: 5 };
        assert!(matches!(welch_z_test(&g, &g), Err(Error::Domain { .. })));
    }

    #[test]
    fn constant_column_is_undefined() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0, (i * i) as f64]).collect();
        let c = pearson_matrix(&rows, 0.01).unwrap();
        assert!(c.r[0][1].is_none() && c.r[1][1].is_none());
        assert!((c.r[0][0].unwrap() - 1.0).abs() < 1e-12);
        assert!(c.r[0][2].unwrap() > 0.9);
        assert!(c.dense().is_err());
    }

    #[test]
    fn weak_correlation_masked() {
        // orthogonal columns: r = 0, p = 1
        let rows = vec![
            vec![1.0, 1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, -1.0],
        ];
        let c = pearson_matrix(&rows, 0.01).unwrap();
        assert!(c.r[0][1].unwrap().abs() < 1e-12);
        assert!(c.masked(0, 1).is_none());
    }

    #[test]
    fn mann_whitney_counts_pairs() {
        let x = [3.0, 4.0, 4.0, 5.0];
        let y = [1.0, 2.0, 4.0];
        let pairs: f64 = x
            .iter()
            .flat_map(|a| y.iter().map(move |b| if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 }))
            .sum();
        let t = mann_whitney(&x, &y).unwrap();
        assert!((t.u - pairs).abs() < 1e-12);
        assert!(t.z > 0.0 && t.p < 0.5);
        let r = mann_whitney(&y, &x).unwrap();
        assert!((r.z + t.z).abs() < 1e-12);
    }
}
