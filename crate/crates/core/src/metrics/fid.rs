use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::moments::GaussianMoments;
use crate::error::{Error, Result};

/// How the mean term enters the distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanTerm {
    /// ‖μr − μg‖², the Fréchet distance between Gaussians.
    #[default]
    Squared,
    /// ‖μr − μg‖ without the square.
    Unsquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub value: f64,
    pub mean_term: f64,
    pub trace_term: f64,
    /// Total magnitude of negative eigenvalues clamped to zero.
    pub clamped_mass: f64,
    pub warning: Option<String>,
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
/// Negative eigenvalues are clamped to zero; their total magnitude is
/// returned alongside.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut clamped = 0.0;
    let roots = eig.eigenvalues.map(|l| {
        if l < 0.0 {
            clamped += -l;
            0.0
        } else {
            l.sqrt()
        }
    });
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    (root, clamped)
}

fn trace_sqrt_psd(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut clamped = 0.0;
    let tr = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < 0.0 {
                clamped += -l;
                0.0
            } else {
                l.sqrt()
            }
        })
        .sum();
    (tr, clamped)
}

/// Fréchet distance between two Gaussian feature fits:
/// mean term + Tr(Cr + Cg − 2 (Cr Cg)^{1/2}).
///
/// Tr((Cr Cg)^{1/2}) is evaluated as Tr((Cr^{1/2} Cg Cr^{1/2})^{1/2}), which
/// has the same spectrum but is symmetric.
pub fn fid(real: &GaussianMoments, gen: &GaussianMoments, mean_term: MeanTerm) -> Result<FidResult> {
    if real.dim != gen.dim {
        return Err(Error::contract(format!(
            "fid: feature dimensions differ ({} vs {})",
            real.dim, gen.dim
        )));
    }
    real.validate()?;
    gen.validate()?;
    let sq: f64 = real
        .mean
        .iter()
        .zip(&gen.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mean_part = match mean_term {
        MeanTerm::Squared => sq,
        MeanTerm::Unsquared => sq.sqrt(),
    };
    let cr = real.cov_matrix();
    let cg = gen.cov_matrix();
    let (cr_half, clamp_a) = sqrtm_psd(&cr);
    let inner = &cr_half * &cg * &cr_half;
    let (tr_cross, clamp_b) = trace_sqrt_psd(&inner);
    let total_trace = cr.trace() + cg.trace();
    let trace_term = total_trace - 2.0 * tr_cross;
    let clamped_mass = clamp_a + clamp_b;
    if clamped_mass > 1e-10 {
        log::debug!("fid: clamped {clamped_mass:e} of negative eigenvalue mass");
    }
    let warning = (clamped_mass > 1e-6 * total_trace.abs().max(f64::MIN_POSITIVE)).then(|| {
        format!(
            "clamped negative eigenvalue mass {clamped_mass:e} exceeds 1e-6 of the covariance trace"
        )
    });
    let value = (mean_part + trace_term).max(0.0);
    Ok(FidResult {
        value,
        mean_term: mean_part,
        trace_term,
        clamped_mass,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(mean: f64, var: f64) -> GaussianMoments {
        GaussianMoments::new(vec![mean], vec![vec![var]], 100).unwrap()
    }

    #[test]
    fn unit_normals_one_apart() {
        let r = fid(&m1(0.0, 1.0), &m1(1.0, 1.0), MeanTerm::Squared).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unsquared_mean_term() {
        let r = fid(&m1(0.0, 1.0), &m1(3.0, 1.0), MeanTerm::Unsquared).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
        let r = fid(&m1(0.0, 1.0), &m1(3.0, 1.0), MeanTerm::Squared).unwrap();
        assert!((r.value - 9.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let b = GaussianMoments::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 3).unwrap();
        assert!(fid(&m1(0.0, 1.0), &b, MeanTerm::Squared).is_err());
    }

    #[test]
    fn indefinite_input_attaches_warning() {
        let bad = GaussianMoments::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, -0.5]], 3).unwrap();
        let ok = GaussianMoments::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 3).unwrap();
        let r = fid(&bad, &ok, MeanTerm::Squared).unwrap();
        assert!(r.warning.is_some());
        assert!(r.clamped_mass >= 0.5);
    }
}
