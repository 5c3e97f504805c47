use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// He normal initialization: `count` i.i.d. draws from N(0, 2/fan_in).
pub fn he_normal<R: Rng + ?Sized>(fan_in: usize, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    if fan_in == 0 {
        return Err(Error::contract("he_normal: fan_in must be at least 1"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive finite std");
    Ok((0..count).map(|_| normal.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_std(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    #[test]
    fn std_matches_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = he_normal(2, 100_000, &mut rng).unwrap();
        assert!((sample_std(&w) - 1.0).abs() < 0.02);
        let w = he_normal(8, 100_000, &mut rng).unwrap();
        assert!((sample_std(&w) - 0.5).abs() < 0.5 * 0.02);
    }

    #[test]
    fn seeded_draws_are_identical() {
        let a = he_normal(4, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = he_normal(4, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_fan_in_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(he_normal(0, 4, &mut rng).is_err());
    }
}
