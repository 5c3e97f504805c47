use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::vector::{Attribute, AttributeVector, ATTRIBUTE_COUNT, SCORE_MAX, SCORE_MIN};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Deterministic attribute scorer standing in for human raters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributeOracle {
    Plane(PlaneOracle),
    Image(ImageOracle),
}

impl AttributeOracle {
    pub fn input_width(&self) -> usize {
        match self {
            AttributeOracle::Plane(_) => 2,
            AttributeOracle::Image(o) => o.side * o.side,
        }
    }

    /// Scores one sample, clamping it into the domain first.
    ///
    /// The flag is true when the sample had to be clamped.
    pub fn eval_checked(&self, x: &[f64]) -> Result<(AttributeVector, bool)> {
        if x.len() != self.input_width() {
            return Err(Error::Shape {
                op: "oracle_eval",
                lhs: vec![x.len()],
                rhs: vec![self.input_width()],
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "oracle input".into(),
            });
        }
        Ok(match self {
            AttributeOracle::Plane(o) => o.eval(x),
            AttributeOracle::Image(o) => o.eval(x),
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<AttributeVector> {
        let (v, clamped) = self.eval_checked(x)?;
        if clamped {
            log::warn!("oracle input outside the data domain was clamped");
        }
        Ok(v)
    }

    /// Scores every row, returning a `(rows, 8)` tensor.
    pub fn eval_batch(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = Vec::with_capacity(x.rows() * ATTRIBUTE_COUNT);
        let mut clamped = 0usize;
        for r in 0..x.rows() {
            let (v, c) = self.eval_checked(x.row(r))?;
            clamped += usize::from(c);
            out.extend_from_slice(&v.0);
        }
        if clamped > 0 {
            log::warn!("{clamped} oracle inputs outside the data domain were clamped");
        }
        Tensor::new(vec![x.rows(), ATTRIBUTE_COUNT], out)
    }

    /// Largest Lipschitz constant over the eight attributes, Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            AttributeOracle::Plane(o) => o.lipschitz(),
            AttributeOracle::Image(o) => o.lipschitz(),
        }
    }
}

fn score(v: f64) -> f64 {
    v.clamp(SCORE_MIN, SCORE_MAX)
}

/// Oracle on the plane around a set of mode centers.
///
/// With `d` the distance to the nearest center and `(r, θ)` polar
/// coordinates:
///
/// * illuminance `1 + 4·min(r / radius_scale, 1)`
/// * realism `5 − 4·min(d / realism_scale, 1)`
/// * weirdness `1 + 4·(1 − exp(−d / bump_width))`
/// * texture `3 + 2·cos(period·θ)·min(r / core_radius, 1)`
/// * object `1 + 4·exp(−d² / 2w²)`, people the same for even-indexed centers
/// * color and scene affine in `x` and `y` across the domain
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneOracle {
    pub centers: Vec<[f64; 2]>,
    /// Coordinates are clamped to `[-extent, extent]`.
    pub extent: f64,
    pub radius_scale: f64,
    pub realism_scale: f64,
    pub period: u32,
    pub core_radius: f64,
    pub bump_width: f64,
}

impl PlaneOracle {
    pub fn new(centers: Vec<[f64; 2]>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::config("centers", "oracle needs at least one mode center"));
        }
        let reach = centers
            .iter()
            .map(|c| c[0].abs().max(c[1].abs()))
            .fold(0.0, f64::max);
        Ok(PlaneOracle {
            centers,
            extent: (reach * 1.5).max(1.0),
            radius_scale: (reach * 1.25).max(0.5),
            realism_scale: 1.0,
            period: 4,
            core_radius: 0.5,
            bump_width: 0.25,
        })
    }

    fn nearest(&self, p: [f64; 2], even_only: bool) -> f64 {
        self.centers
            .iter()
            .enumerate()
            .filter(|(i, _)| !even_only || i % 2 == 0)
            .map(|(_, c)| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    fn eval(&self, x: &[f64]) -> (AttributeVector, bool) {
        let e = self.extent;
        let p = [x[0].clamp(-e, e), x[1].clamp(-e, e)];
        let clamped = p[0] != x[0] || p[1] != x[1];
        let r = p[0].hypot(p[1]);
        let theta = p[1].atan2(p[0]);
        let d = self.nearest(p, false);
        let d_even = self.nearest(p, true);
        let w = self.bump_width;
        let mut v = AttributeVector([0.0; ATTRIBUTE_COUNT]);
        v.set(Attribute::Color, score(3.0 + 2.0 * p[0] / e));
        v.set(Attribute::Illuminance, score(1.0 + 4.0 * (r / self.radius_scale).min(1.0)));
        v.set(Attribute::Object, score(1.0 + 4.0 * (-d * d / (2.0 * w * w)).exp()));
        v.set(Attribute::People, score(1.0 + 4.0 * (-d_even * d_even / (2.0 * w * w)).exp()));
        v.set(Attribute::Scene, score(3.0 + 2.0 * p[1] / e));
        v.set(
            Attribute::Texture,
            score(3.0 + 2.0 * (self.period as f64 * theta).cos() * (r / self.core_radius).min(1.0)),
        );
        v.set(Attribute::Realism, score(5.0 - 4.0 * (d / self.realism_scale).min(1.0)));
        v.set(Attribute::Weirdness, score(1.0 + 4.0 * (1.0 - (-d / w).exp())));
        (v, clamped)
    }

    fn lipschitz(&self) -> f64 {
        let k = self.period as f64;
        let w = self.bump_width;
        [
            2.0 / self.extent,
            4.0 / self.radius_scale,
            4.0 / (w * std::f64::consts::E.sqrt()),
            2.0 * (1.0 + k * k).sqrt() / self.core_radius,
            4.0 / self.realism_scale,
            4.0 / w,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Oracle on square grayscale images with pixels in `[-1, 1]`.
///
/// Brightness, contrast, high-frequency energy, centre-versus-border
/// contrast, left-right symmetry and top-versus-bottom brightness map to
/// illuminance, color, texture, object, people and scene; realism and
/// weirdness follow the RMS distance to the nearest class prototype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageOracle {
    pub side: usize,
    pub prototypes: Vec<Vec<f64>>,
    pub realism_scale: f64,
    pub weirdness_width: f64,
}

impl ImageOracle {
    pub fn new(side: usize, prototypes: Vec<Vec<f64>>) -> Result<Self> {
        if side < 4 || prototypes.is_empty() || prototypes.iter().any(|p| p.len() != side * side) {
            return Err(Error::config("prototypes", "need at least one side×side prototype, side ≥ 4"));
        }
        Ok(ImageOracle {
            side,
            prototypes,
            realism_scale: 0.8,
            weirdness_width: 0.3,
        })
    }

    fn eval(&self, x: &[f64]) -> (AttributeVector, bool) {
        let px: Vec<f64> = x.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let clamped = px.iter().zip(x).any(|(a, b)| a != b);
        let s = self.side;
        let n = (s * s) as f64;
        let at = |r: usize, c: usize| px[r * s + c];
        let mean = px.iter().sum::<f64>() / n;
        let sd = (px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut hf = 0.0;
        for r in 0..s {
            for c in 0..s - 1 {
                hf += (at(r, c + 1) - at(r, c)).abs();
            }
        }
        hf /= (s * (s - 1)) as f64 * 2.0;
        let (mut centre, mut border, mut nc, mut nb) = (0.0, 0.0, 0.0, 0.0);
        let q = s / 4;
        for r in 0..s {
            for c in 0..s {
                if (q..s - q).contains(&r) && (q..s - q).contains(&c) {
                    centre += at(r, c);
                    nc += 1.0;
                } else {
                    border += at(r, c);
                    nb += 1.0;
                }
            }
        }
        let blob = if nc > 0.0 && nb > 0.0 { centre / nc - border / nb } else { 0.0 };
        let mut asym = 0.0;
        for r in 0..s {
            for c in 0..s {
                asym += (at(r, c) - at(r, s - 1 - c)).abs();
            }
        }
        asym /= n * 2.0;
        let half = s / 2;
        let top: f64 = px[..half * s].iter().sum::<f64>() / (half * s) as f64;
        let bottom: f64 = px[half * s..].iter().sum::<f64>() / ((s - half) * s) as f64;
        let d = self
            .prototypes
            .iter()
            .map(|p| (p.iter().zip(&px).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt())
            .fold(f64::INFINITY, f64::min);
        let mut v = AttributeVector([0.0; ATTRIBUTE_COUNT]);
        v.set(Attribute::Color, score(1.0 + 4.0 * sd));
        v.set(Attribute::Illuminance, score(3.0 + 2.0 * mean));
        v.set(Attribute::Object, score(3.0 + blob));
        v.set(Attribute::People, score(5.0 - 4.0 * asym));
        v.set(Attribute::Scene, score(3.0 + (top - bottom)));
        v.set(Attribute::Texture, score(1.0 + 4.0 * hf));
        v.set(Attribute::Realism, score(5.0 - 4.0 * (d / self.realism_scale).min(1.0)));
        v.set(
            Attribute::Weirdness,
            score(1.0 + 4.0 * (1.0 - (-d / self.weirdness_width).exp())),
        );
        (v, clamped)
    }

    fn lipschitz(&self) -> f64 {
        let s = self.side as f64;
        let n = s * s;
        let rn = n.sqrt();
        let q = (self.side / 4) as f64;
        let nc = (s - 2.0 * q).powi(2);
        let half = (self.side / 2) as f64 * s;
        [
            4.0 / rn,                                   // color: sd is 1/√n-Lipschitz
            2.0 / rn,                                   // illuminance: mean
            (1.0 / nc + 1.0 / (n - nc)).sqrt(),         // object
            4.0 / rn,                                   // people: each pixel in two mirror terms
            (1.0 / half + 1.0 / (n - half)).sqrt(),     // scene
            4.0 / (s - 1.0),                            // texture: each pixel in two differences
            4.0 / (self.realism_scale * rn),            // realism: RMS distance
            4.0 / (self.weirdness_width * rn),          // weirdness
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Centers of `k` modes evenly spaced on a circle.
pub fn ring_centers(k: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..k)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / k as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}
