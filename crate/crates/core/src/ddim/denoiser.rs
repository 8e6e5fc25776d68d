use std::ops::Range;

use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// Conditioning images handed to a denoiser. In stage 2 `slab` gives the
/// axial range of the full volume that `x_t` covers.
#[derive(Debug, Clone, Default)]
pub struct Condition {
    pub images: Vec<Volume3D>,
    pub slab: Option<Range<usize>>,
}

impl Condition {
    pub fn new(images: Vec<Volume3D>) -> Self {
        Self { images, slab: None }
    }
}

/// Predicts the clean image x₀ from a noisy x_t. Implementations must return
/// x_t's geometry and be deterministic in their inputs.
pub trait Denoiser: Sync {
    fn predict_x0(&self, x_t: &Volume3D, t: usize, cond: &Condition) -> Result<Volume3D>;
}

fn conform(src: &Volume3D, x_t: &Volume3D, slab: Option<&Range<usize>>) -> Result<Volume3D> {
    let src = if src.dims() == x_t.dims() {
        src.clone()
    } else if let Some(r) = slab.filter(|r| r.end <= src.dims()[2]) {
        src.z_slab(r.start, r.end)
    } else {
        src.clone()
    };
    if src.dims() != x_t.dims() {
        return Err(Error::Geometry(format!("denoiser output {:?} does not fit x_t {:?}", src.dims(), x_t.dims())));
    }
    x_t.with_data(src.data)
}

/// Always predicts a fixed image (a point-mass data distribution). Given a
/// full-size target and a slab condition it returns the matching slab.
#[derive(Debug, Clone)]
pub struct FixedTarget {
    pub target: Volume3D,
}

impl FixedTarget {
    pub fn new(target: Volume3D) -> Self {
        Self { target }
    }
}

impl Denoiser for FixedTarget {
    fn predict_x0(&self, x_t: &Volume3D, _t: usize, cond: &Condition) -> Result<Volume3D> {
        conform(&self.target, x_t, cond.slab.as_ref())
    }
}

/// Returns conditioning image `index` unchanged.
#[derive(Debug, Clone, Copy)]
pub struct ConditionEcho {
    pub index: usize,
}

impl Denoiser for ConditionEcho {
    fn predict_x0(&self, x_t: &Volume3D, _t: usize, cond: &Condition) -> Result<Volume3D> {
        let img = cond
            .images
            .get(self.index)
            .ok_or_else(|| Error::Argument(format!("condition has no image {}", self.index)))?;
        conform(img, x_t, cond.slab.as_ref())
    }
}

/// Exact posterior mean E[x₀ | x_t] for voxelwise independent x₀ ~ N(μ, s²).
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mu: f64,
    pub sd: f64,
    pub schedule: DiffusionSchedule,
}

impl GaussianPosterior {
    pub fn posterior_mean(&self, x: f64, t: usize) -> f64 {
        let a = self.schedule.alpha_bar(t);
        let s2 = self.sd * self.sd;
        let gain = a.sqrt() * s2 / (a * s2 + 1.0 - a);
        self.mu + gain * (x - a.sqrt() * self.mu)
    }
}

impl Denoiser for GaussianPosterior {
    fn predict_x0(&self, x_t: &Volume3D, t: usize, _cond: &Condition) -> Result<Volume3D> {
        x_t.with_data(x_t.data.iter().map(|&x| self.posterior_mean(x, t)).collect())
    }
}
