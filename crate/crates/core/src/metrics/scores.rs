use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-6;
/// Added to data-label probabilities that are zero where generated mass exists.
pub const MODE_SCORE_SMOOTHING: f64 = 1e-9;

fn validate_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::contract(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::contract(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn rows_of(p: &Tensor) -> Result<(usize, usize)> {
    match p.shape() {
        [n, k] => Ok((*n, *k)),
        s => Err(Error::contract(format!("label distributions must be (n, K), got {s:?}"))),
    }
}

/// KL(p ‖ q) with natural log and 0·log 0 = 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

fn marginal(p: &Tensor, n: usize, k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k];
    for row in p.data().chunks(k) {
        m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    m
}

fn check_rows(p: &Tensor) -> Result<(usize, usize)> {
    let (n, k) = rows_of(p)?;
    for (i, row) in p.data().chunks(k).enumerate() {
        validate_distribution(row, &format!("label distribution row {i}"))?;
    }
    Ok((n, k))
}

/// exp(mean_x KL(p(y|x) ‖ p̂(y))) where p̂ is the mean of the rows.
pub fn inception_score(p: &Tensor) -> Result<f64> {
    let (n, k) = check_rows(p)?;
    let pm = marginal(p, n, k);
    let mean_kl = p.data().chunks(k).map(|row| kl_divergence(row, &pm)).sum::<f64>() / n as f64;
    Ok(mean_kl.exp())
}

/// exp(mean_x KL(p(y|x) ‖ p*(y)) − KL(p̂(y) ‖ p*(y))).
///
/// Classes with p*(y) = 0 but generated mass are smoothed with
/// [`MODE_SCORE_SMOOTHING`] and the data distribution renormalized.
pub fn mode_score(p: &Tensor, data_labels: &[f64]) -> Result<f64> {
    let (n, k) = check_rows(p)?;
    if data_labels.len() != k {
        return Err(Error::contract(format!(
            "data label distribution has {} classes, generated rows have {k}",
            data_labels.len()
        )));
    }
    validate_distribution(data_labels, "data label distribution")?;
    let pm = marginal(p, n, k);
    let mut pstar = data_labels.to_vec();
    if pstar.iter().zip(&pm).any(|(&s, &g)| s == 0.0 && g > 0.0) {
        log::info!("mode_score: smoothing zero data-label probabilities with {MODE_SCORE_SMOOTHING:e}");
        pstar.iter_mut().for_each(|v| *v += MODE_SCORE_SMOOTHING);
        let s: f64 = pstar.iter().sum();
        pstar.iter_mut().for_each(|v| *v /= s);
    }
    let mean_kl = p.data().chunks(k).map(|row| kl_divergence(row, &pstar)).sum::<f64>() / n as f64;
    Ok((mean_kl - kl_divergence(&pm, &pstar)).exp())
}
