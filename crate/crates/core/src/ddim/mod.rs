//! Cascaded DDIM sampling with an x₀-predicting denoiser: a low-resolution
//! 3-D stage followed by overlapping axial slabs at full resolution.

pub mod cascade;
pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod slabs;

pub use cascade::{cascade_reface, CascadeConfig, CascadeOutput};
pub use denoiser::{Condition, ConditionEcho, Denoiser, FixedTarget, GaussianPosterior};
pub use sampler::{ddim_step, sample, sample_from};
pub use schedule::{make_schedule, DiffusionSchedule};
pub use slabs::{merge_slabs, stage2_slabs, SlabSpec};
