use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{Condition, Denoiser};
use super::sampler::sample;
use super::schedule::{make_schedule, DiffusionSchedule};
use super::slabs::{merge_slabs, stage2_slabs, SlabSpec};
use crate::error::{Error, Result};
use crate::parallel;
use crate::volume::{downsample, upsample_trilinear, BinaryMask, Volume3D};

/// Sampler settings; serialised into every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
    pub eta: f64,
    pub slab: SlabSpec,
    pub downsample: [usize; 3],
    pub seed: u64,
    /// Generated voxels are kept only inside the removed region.
    pub composite_observed: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            steps: 50,
            eta: 0.0,
            slab: SlabSpec::default(),
            downsample: [2, 2, 2],
            seed: 0,
            composite_observed: true,
        }
    }
}

impl CascadeConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.t_max, self.beta_start, self.beta_end)
    }
}

/// Intermediate and final products of one cascade run.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub low_res: Volume3D,
    pub upsampled: Volume3D,
    pub merged: Volume3D,
    pub refaced: Volume3D,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Two-stage refacing: a low-resolution sample conditioned on the
/// downsampled defaced image, then slab-wise full-resolution samples
/// conditioned on (defaced slab, upsampled stage-1 slab), merged and
/// composited so observed voxels outside `removed` are kept.
///
/// Stage 1 draws from RNG stream 0 and slab i from stream i + 1.
pub fn cascade_reface(
    defaced: &Volume3D,
    removed: &BinaryMask,
    stage1: &dyn Denoiser,
    stage2: &dyn Denoiser,
    config: &CascadeConfig,
) -> Result<CascadeOutput> {
    defaced.geometry.ensure_matches(&removed.geometry, "removed mask")?;
    let schedule = config.schedule()?;
    let seq = schedule.uniform_subsequence(config.steps)?;
    let dims = defaced.dims();

    let cond_low = downsample(defaced, config.downsample)?;
    let low_geom = cond_low.geometry.clone();
    let mut rng = stream(config.seed, 0);
    let low_res = sample(stage1, &Condition::new(vec![cond_low]), &schedule, &seq, config.eta, &mut rng, &low_geom)?;

    let up = upsample_trilinear(&low_res, config.downsample)?.crop([0; 3], dims)?;
    let upsampled = defaced.with_data(up.data)?;

    let ranges = stage2_slabs(dims[2], config.slab)?;
    let slabs: Vec<Result<Volume3D>> = parallel::map_range(ranges.len(), |i| {
        let r = &ranges[i];
        let cond = Condition {
            images: vec![defaced.z_slab(r.start, r.end), upsampled.z_slab(r.start, r.end)],
            slab: Some(r.clone()),
        };
        let geom = defaced.geometry.z_slab(r.start, r.end);
        let mut rng = stream(config.seed, i as u64 + 1);
        sample(stage2, &cond, &schedule, &seq, config.eta, &mut rng, &geom)
    });
    let slabs = slabs.into_iter().collect::<Result<Vec<_>>>()?;
    let merged = merge_slabs(&slabs, &ranges, &defaced.geometry)?;
    let merged = defaced.with_data(merged.data)?;

    let refaced = if config.composite_observed { merged.select(removed, defaced)? } else { merged.clone() };
    if refaced.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("cascade produced non-finite voxels".into()));
    }
    Ok(CascadeOutput { low_res, upsampled, merged, refaced })
}
