use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfaOptions {
    pub max_iter: usize,
    /// Stop once no communality moves by more than this.
    pub tol: f64,
    pub varimax: bool,
}

impl Default for EfaOptions {
    fn default() -> Self {
        EfaOptions {
            max_iter: 500,
            tol: 1e-6,
            varimax: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfaResult {
    /// Variables by factors.
    pub loadings: Vec<Vec<f64>>,
    pub communalities: Vec<f64>,
    pub uniquenesses: Vec<f64>,
    /// Sum of squared loadings per factor.
    pub explained: Vec<f64>,
    /// Each retained eigenvalue over the total positive eigenvalue mass of the
    /// final reduced matrix.
    pub common_variance_share: Vec<f64>,
    pub iterations: usize,
    /// Some communality reached 1 and was clamped.
    pub heywood: bool,
}

/// Principal-axis factoring of a correlation matrix, optionally varimax-rotated.
///
/// Factors are ordered by explained variance and signed so their loadings sum
/// to a non-negative value.
pub fn efa(correlation: &[Vec<f64>], factors: usize, opts: &EfaOptions) -> Result<EfaResult> {
    let p = correlation.len();
    if p == 0 || correlation.iter().any(|r| r.len() != p) {
        return Err(Error::contract("correlation matrix must be square and non-empty"));
    }
    if factors == 0 || factors > p {
        return Err(Error::config("factors", format!("must lie in 1..={p}")));
    }
    let r = DMatrix::from_fn(p, p, |i, j| correlation[i][j]);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "correlation matrix".into(),
        });
    }
    let mut h = initial_communalities(&r);
    let mut heywood = false;
    let mut loadings = DMatrix::zeros(p, factors);
    let mut share = vec![0.0; factors];
    for iter in 1..=opts.max_iter {
        let mut reduced = r.clone();
        for i in 0..p {
            reduced[(i, i)] = h[i];
        }
        let (vals, vecs) = sorted_eigen(reduced);
        let positive: f64 = vals.iter().filter(|v| **v > 0.0).sum();
        for f in 0..factors {
            let scale = vals[f].max(0.0).sqrt();
            for i in 0..p {
                loadings[(i, f)] = vecs[(i, f)] * scale;
            }
            share[f] = if positive > 0.0 { vals[f].max(0.0) / positive } else { 0.0 };
        }
        let mut delta: f64 = 0.0;
        for i in 0..p {
            let mut next: f64 = (0..factors).map(|f| loadings[(i, f)].powi(2)).sum();
            if next > 1.0 {
                next = 1.0;
                heywood = true;
            }
            delta = delta.max((next - h[i]).abs());
            h[i] = next;
        }
        if delta < opts.tol {
            if heywood {
                log::warn!("factor analysis hit a Heywood case; communalities clamped to 1");
            }
            if opts.varimax && factors > 1 {
                loadings = varimax(&loadings, 1e-10, 1000);
            }
            return Ok(finish(loadings, share, iter, heywood));
        }
    }
    Err(Error::NonConvergence {
        what: "principal-axis factoring",
        iterations: opts.max_iter,
        last_iterate: loadings.iter().copied().collect(),
    })
}

fn initial_communalities(r: &DMatrix<f64>) -> Vec<f64> {
    let p = r.nrows();
    if let Some(inv) = r.clone().try_inverse() {
        let smc: Vec<f64> = (0..p).map(|i| 1.0 - 1.0 / inv[(i, i)]).collect();
        if smc.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return smc;
        }
    }
    // singular matrix: largest absolute off-diagonal correlation
    (0..p)
        .map(|i| {
            (0..p)
                .filter(|&j| j != i)
                .map(|j| r[(i, j)].abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Kaiser-normalized varimax rotation.
///
/// Runs up to `max_iter` sweeps over factor pairs, stopping once every
/// rotation angle in a sweep is below `eps` radians.
pub fn varimax(loadings: &DMatrix<f64>, eps: f64, max_iter: usize) -> DMatrix<f64> {
    let (p, k) = loadings.shape();
    let norms: Vec<f64> = (0..p)
        .map(|i| loadings.row(i).norm())
        .map(|n| if n > 0.0 { n } else { 1.0 })
        .collect();
    let x = DMatrix::from_fn(p, k, |i, j| loadings[(i, j)] / norms[i]);
    // Kaiser's pairwise sweeps: each plane rotation takes the exact maximizing
    // angle, so the search cannot stall at a stationary point of the criterion
    let mut rotated = x;
    let n = p as f64;
    for _ in 0..max_iter {
        let mut largest: f64 = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                let (mut sa, mut sb, mut sc, mut sd) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..p {
                    let (xa, xb) = (rotated[(i, a)], rotated[(i, b)]);
                    let u = xa * xa - xb * xb;
                    let v = 2.0 * xa * xb;
                    sa += u;
                    sb += v;
                    sc += u * u - v * v;
                    sd += 2.0 * u * v;
                }
                let phi = 0.25 * (sd - 2.0 * sa * sb / n).atan2(sc - (sa * sa - sb * sb) / n);
                largest = largest.max(phi.abs());
                let (c, s) = (phi.cos(), phi.sin());
                for i in 0..p {
                    let (xa, xb) = (rotated[(i, a)], rotated[(i, b)]);
                    rotated[(i, a)] = xa * c + xb * s;
                    rotated[(i, b)] = -xa * s + xb * c;
                }
            }
        }
        if largest < eps {
            break;
        }
    }
    DMatrix::from_fn(p, k, |i, j| rotated[(i, j)] * norms[i])
}

fn finish(mut l: DMatrix<f64>, share: Vec<f64>, iterations: usize, heywood: bool) -> EfaResult {
    let (p, k) = l.shape();
    for j in 0..k {
        if l.column(j).sum() < 0.0 {
            l.column_mut(j).neg_mut();
        }
    }
    let explained: Vec<f64> = (0..k).map(|j| l.column(j).norm_squared()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| explained[b].total_cmp(&explained[a]));
    let loadings: Vec<Vec<f64>> = (0..p)
        .map(|i| order.iter().map(|&j| l[(i, j)]).collect())
        .collect();
    let communalities: Vec<f64> = loadings
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum())
        .collect();
    EfaResult {
        uniquenesses: communalities.iter().map(|h| 1.0 - h).collect(),
        communalities,
        explained: order.iter().map(|&j| explained[j]).collect(),
        common_variance_share: share,
        loadings,
        iterations,
        heywood,
    }
}

/// Reorders and re-signs the columns of `estimate` to best match `target`.
///
/// Returns the aligned loadings. Meant for comparing a recovered solution to
/// a known one, where factor order and sign are arbitrary.
pub fn align_loadings(estimate: &[Vec<f64>], target: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = target.first().map_or(0, |r| r.len());
    if estimate.len() != target.len() || estimate.iter().any(|r| r.len() != k) || k == 0 {
        return Err(Error::contract("loading matrices must share their shape"));
    }
    if k > 8 {
        return Err(Error::contract("alignment enumerates permutations; at most 8 factors"));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..k).collect();
    permutations(&mut perm, 0, &mut |perm| {
        let cost: f64 = (0..k)
            .map(|j| {
                let mut plus = 0.0;
                let mut minus = 0.0;
                for (e, t) in estimate.iter().zip(target) {
                    plus += (e[perm[j]] - t[j]).powi(2);
                    minus += (e[perm[j]] + t[j]).powi(2);
                }
                plus.min(minus)
            })
            .sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, perm.to_vec()));
        }
    });
    let (_, perm) = best.expect("at least one permutation");
    let signs: Vec<f64> = (0..k)
        .map(|j| {
            let dot: f64 = estimate.iter().zip(target).map(|(e, t)| e[perm[j]] * t[j]).sum();
            if dot < 0.0 { -1.0 } else { 1.0 }
        })
        .collect();
    Ok(estimate
        .iter()
        .map(|row| (0..k).map(|j| row[perm[j]] * signs[j]).collect())
        .collect())
}

fn permutations(v: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permutations(v, start + 1, visit);
        v.swap(start, i);
    }
}

/// Correlation matrix implied by loadings with unit-variance indicators.
pub fn implied_correlation(loadings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = loadings.len();
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        loadings[i].iter().zip(&loadings[j]).map(|(a, b)| a * b).sum()
                    }
                })
                .collect()
        })
        .collect()
}
