use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ATTRIBUTE_COUNT: usize = 8;
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

/// The eight annotated image attributes, in their fixed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Color,
    Illuminance,
    Object,
    People,
    Scene,
    Texture,
    Realism,
    Weirdness,
}

impl Attribute {
    pub const ALL: [Attribute; ATTRIBUTE_COUNT] = [
        Attribute::Color,
        Attribute::Illuminance,
        Attribute::Object,
        Attribute::People,
        Attribute::Scene,
        Attribute::Texture,
        Attribute::Realism,
        Attribute::Weirdness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Illuminance => "illuminance",
            Attribute::Object => "object",
            Attribute::People => "people",
            Attribute::Scene => "scene",
            Attribute::Texture => "texture",
            Attribute::Realism => "realism",
            Attribute::Weirdness => "weirdness",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Attribute::Color => "colorfulness, pixel value distribution",
            Attribute::Illuminance => "light effect, shadows, brightness",
            Attribute::Object => "objects in the image excluding humans",
            Attribute::People => "humans in the image",
            Attribute::Scene => "outdoor rather than indoor scene",
            Attribute::Texture => "repeated pattern",
            Attribute::Realism => "overall naturalness, real or computer generated",
            Attribute::Weirdness => "any unnatural feature, such as strange objects",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::Malformed(format!("unknown attribute `{s}`")))
    }
}

/// One value per attribute, in [`Attribute::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector(pub [f64; ATTRIBUTE_COUNT]);

impl AttributeVector {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; ATTRIBUTE_COUNT] = v.try_into().map_err(|_| {
            Error::contract(format!("attribute vector needs {ATTRIBUTE_COUNT} values, got {}", v.len()))
        })?;
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "attribute vector".into(),
            });
        }
        Ok(AttributeVector(arr))
    }

    pub fn get(&self, a: Attribute) -> f64 {
        self.0[a.index()]
    }

    pub fn set(&mut self, a: Attribute, v: f64) {
        self.0[a.index()] = v;
    }

    /// Copy with every entry clamped to the 1–5 score range.
    pub fn clamped(&self) -> Self {
        AttributeVector(self.0.map(|v| v.clamp(SCORE_MIN, SCORE_MAX)))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}
