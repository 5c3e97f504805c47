//! Network building blocks, initialization, optimizers and checkpoints.

mod checkpoint;
mod init;
mod layers;
mod optim;

pub use checkpoint::{Checkpoint, ModelRecord, NamedArray, CHECKPOINT_FORMAT_VERSION};
pub use init::he_normal;
pub use layers::{
    Activation, Binding, BlockSpec, Layer, LinearLayer, Mlp, MlpOutput, MlpSpec, ResidualBlock,
    LEAKY_SLOPE,
};
pub use optim::{LrSchedule, OptimizerKind, OptimizerState};
