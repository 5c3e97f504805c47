//! Adversarial objectives, the attribute-fused discriminator and the
//! training loop.

mod config;
mod diagnostics;
mod discriminator;
mod losses;
mod penalty;
mod trainer;

pub use config::TrainingConfig;
pub use diagnostics::{binned_mutual_information, independence_test, mode_coverage, ModeCoverage, PermutationTest};
pub use discriminator::{fuse, FusedDiscriminator, FusionLevel, FusionMode};
pub use losses::{
    dcgan_discriminator_loss, dcgan_generator_loss, ensure_finite, lsgan_discriminator_loss,
    lsgan_generator_loss, wgan_critic_loss, wgan_generator_loss, LossKind, PROB_CLAMP,
};
pub use penalty::{gradient_penalty, interpolate, penalty_from_probes, probe_points, DEFAULT_PENALTY_DIM_CAP};
pub use trainer::{train, CriticStats, Evaluator, RunStatus, StepStats, TraceRecord, TrainOutcome, Trainer};
