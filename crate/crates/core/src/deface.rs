//! Defacing and skull-stripping surrogates, and facial-voxel preprocessing
//! for regression inputs.
//!
//! The shear follows the Quickshear idea with one global plane: the brain
//! mask is projected onto the sagittal (y, z) plane, its convex hull is
//! taken, and the hull edge facing most directly anterior-inferior defines
//! a supporting line. Shifted outward by a buffer, that line is the cut.
//! Reports tag this variant as [`QUICKSHEAR_VERSION`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::head_mask;
use crate::volume::{BinaryMask, Volume3D};

pub const QUICKSHEAR_VERSION: &str = "quickshear-v1";
pub const DEFAULT_BUFFER_MM: f64 = 10.0;

/// Cutting plane in the sagittal (y, z) plane, in mm relative to voxel
/// (0,0,0) along the grid axes. Voxels with `normal · p > offset` are removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShearPlane {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl ShearPlane {
    #[inline]
    pub fn side(&self, y_mm: f64, z_mm: f64) -> f64 {
        self.normal[0] * y_mm + self.normal[1] * z_mm
    }

    pub fn removes(&self, y_mm: f64, z_mm: f64) -> bool {
        self.side(y_mm, z_mm) > self.offset
    }
}

#[derive(Debug, Clone)]
pub struct Defaced {
    pub volume: Volume3D,
    /// Zeroed voxels that belonged to the head.
    pub removed: BinaryMask,
    pub plane: ShearPlane,
}

fn cross2(o: [i64; 2], a: [i64; 2], b: [i64; 2]) -> i64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain) of integer points.
fn convex_hull(mut pts: Vec<[i64; 2]>) -> Vec<[i64; 2]> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[i64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross2(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[i64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross2(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Chooses the shear plane supporting the projected brain mask.
pub fn shear_plane(brain: &BinaryMask, buffer_mm: f64) -> Result<ShearPlane> {
    if !(buffer_mm >= 0.0 && buffer_mm.is_finite()) {
        return Err(Error::Argument(format!("buffer_mm must be >= 0, got {buffer_mm}")));
    }
    let g = &brain.geometry;
    let [_, ny, nz] = g.dims;
    let mut projected = vec![false; ny * nz];
    for (i, _) in brain.data.iter().enumerate().filter(|(_, &b)| b) {
        let [_, y, z] = g.coords(i);
        projected[y + ny * z] = true;
    }
    let points: Vec<[i64; 2]> =
        projected.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| [(i % ny) as i64, (i / ny) as i64]).collect();
    if points.is_empty() {
        return Err(Error::Argument("brain mask is empty".into()));
    }
    let hull = convex_hull(points.clone());
    let [sy, sz] = [g.spacing[1], g.spacing[2]];
    let target = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];

    // outward normal of each CCW hull edge, in mm
    let mut normal = target;
    let mut best = f64::NEG_INFINITY;
    if hull.len() >= 2 {
        for k in 0..hull.len() {
            let a = hull[k];
            let b = hull[(k + 1) % hull.len()];
            let d = [(b[0] - a[0]) as f64 * sy, (b[1] - a[1]) as f64 * sz];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len == 0.0 {
                continue;
            }
            let n = [d[1] / len, -d[0] / len];
            let score = n[0] * target[0] + n[1] * target[1];
            if score > best {
                best = score;
                normal = n;
            }
        }
    }
    let plane = ShearPlane { normal, offset: 0.0 };
    // support value over every projected point, evaluated exactly as voxels are
    let support =
        points.iter().map(|p| plane.side(p[0] as f64 * sy, p[1] as f64 * sz)).fold(f64::NEG_INFINITY, f64::max);
    Ok(ShearPlane { normal, offset: support + buffer_mm })
}

/// Zeroes everything anterior-inferior of the shear plane.
pub fn quickshear(vol: &Volume3D, brain: &BinaryMask, buffer_mm: f64) -> Result<Defaced> {
    vol.geometry.ensure_matches(&brain.geometry, "quickshear brain mask")?;
    let plane = shear_plane(brain, buffer_mm)?;
    let head = head_mask(vol)?;
    apply_shear(vol, &head, plane)
}

/// Applies a given plane; `head` decides which zeroed voxels count as removed.
pub fn apply_shear(vol: &Volume3D, head: &BinaryMask, plane: ShearPlane) -> Result<Defaced> {
    vol.geometry.ensure_matches(&head.geometry, "shear head mask")?;
    let g = &vol.geometry;
    let [sy, sz] = [g.spacing[1], g.spacing[2]];
    let mut data = vol.data.clone();
    let mut removed = vec![false; data.len()];
    for (i, v) in data.iter_mut().enumerate() {
        let [_, y, z] = g.coords(i);
        if plane.removes(y as f64 * sy, z as f64 * sz) {
            *v = 0.0;
            removed[i] = head.data[i];
        }
    }
    Ok(Defaced { volume: vol.with_data(data)?, removed: BinaryMask::new(g.clone(), removed)?, plane })
}

/// Zeroes every voxel outside the brain mask.
pub fn skull_strip(vol: &Volume3D, brain: &BinaryMask) -> Result<Volume3D> {
    vol.geometry.ensure_matches(&brain.geometry, "skull strip")?;
    let data = vol.data.iter().zip(&brain.data).map(|(&v, &b)| if b { v } else { 0.0 }).collect();
    vol.with_data(data)
}

/// How the anterior third is located.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnteriorCrop {
    /// Anterior third of the head mask's y-extent; dims unchanged, voxels
    /// outside the head are excluded from normalisation.
    HeadBox,
    /// Anterior third of the volume's y-extent for images already in a
    /// common registered frame; the output is cropped to that slab.
    Frame,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub volume: Volume3D,
    pub retained: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Keeps the anterior third, masks out the brain and z-scores the remaining
/// nonzero voxels.
pub fn regression_preproc(vol: &Volume3D, brain: &BinaryMask, crop: AnteriorCrop) -> Result<Preprocessed> {
    vol.geometry.ensure_matches(&brain.geometry, "regression preprocessing")?;
    let g = &vol.geometry;
    let ny = g.dims[1];
    let (keep, box_lo, box_hi): (Vec<bool>, [usize; 3], [usize; 3]) = match crop {
        AnteriorCrop::HeadBox => {
            let head = head_mask(vol)?;
            let (lo, hi) = head.bounding_box().ok_or_else(|| Error::Degenerate("empty head mask".into()))?;
            let extent = (hi[1] - lo[1] + 1) as f64;
            let y_from = (hi[1] + 1) as f64 - extent / 3.0;
            let keep = head.data.iter().enumerate().map(|(i, &h)| h && g.coords(i)[1] as f64 >= y_from).collect();
            (keep, [0, 0, 0], g.dims)
        }
        AnteriorCrop::Frame => {
            let y_from = ny - ny / 3;
            let keep = (0..g.len()).map(|i| g.coords(i)[1] >= y_from).collect();
            (keep, [0, y_from, 0], g.dims)
        }
    };
    let retained_mask: Vec<bool> =
        keep.iter().zip(&brain.data).zip(&vol.data).map(|((&k, &b), &v)| k && !b && v != 0.0).collect();
    let values: Vec<f64> = vol.data.iter().zip(&retained_mask).filter(|(_, &r)| r).map(|(&v, _)| v).collect();
    if values.len() < 2 {
        return Err(Error::Degenerate(format!("{} voxels retained, need at least 2", values.len())));
    }
    let n = values.len() as f64;
    let mean = crate::parallel::compensated_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let sd = (crate::parallel::compensated_sum(&sq) / n).sqrt();
    if sd == 0.0 {
        return Err(Error::Degenerate("retained voxels have zero variance".into()));
    }
    let data = vol.data.iter().zip(&retained_mask).map(|(&v, &r)| if r { (v - mean) / sd } else { 0.0 }).collect();
    let full = vol.with_data(data)?;
    let volume = if box_lo == [0, 0, 0] && box_hi == g.dims { full } else { full.crop(box_lo, box_hi)? };
    Ok(Preprocessed { volume, retained: values.len(), mean, sd })
}
