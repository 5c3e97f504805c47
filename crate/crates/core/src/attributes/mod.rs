//! The eight perceptual attributes, the deterministic oracles that score
//! desk-scale samples, and the network that learns to predict them.

mod net;
mod oracle;
mod vector;

pub use net::{
    read_predictions, rmse_from_predictions, write_predictions, AttributeNet, AttributePredictions,
    AttributeSchedule, RmseReport, StopReason,
};
pub use oracle::{ring_centers, AttributeOracle, ImageOracle, PlaneOracle};
pub use vector::{Attribute, AttributeVector, ATTRIBUTE_COUNT, SCORE_MAX, SCORE_MIN};
