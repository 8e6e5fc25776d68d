//! Masked PSNR / SSIM and the changed-area intersection mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::head_mask;
use crate::parallel;
use crate::volume::{BinaryMask, Volume3D};

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const PEAK_CONVENTION: &str = "peak = max(reference) over the whole volume";

/// Voxelwise AND of one or more masks on the same grid.
pub fn intersection_mask(masks: &[&BinaryMask]) -> Result<BinaryMask> {
    let (first, rest) = masks.split_first().ok_or_else(|| Error::Argument("intersection of zero masks".into()))?;
    rest.iter().try_fold((*first).clone(), |acc, m| acc.and(m))
}

fn check_inputs(reference: &Volume3D, test: &Volume3D, mask: &BinaryMask) -> Result<()> {
    reference.geometry.ensure_matches(&test.geometry, "quality test image")?;
    reference.geometry.ensure_matches(&mask.geometry, "quality mask")?;
    if mask.is_empty() {
        return Err(Error::Argument("quality metric over an empty mask".into()));
    }
    Ok(())
}

/// Mean squared error over masked voxels.
pub fn masked_mse(reference: &Volume3D, test: &Volume3D, mask: &BinaryMask) -> Result<f64> {
    check_inputs(reference, test, mask)?;
    let sq: Vec<f64> = reference
        .data
        .iter()
        .zip(&test.data)
        .zip(&mask.data)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a - b) * (a - b))
        .collect();
    Ok(parallel::compensated_sum(&sq) / sq.len() as f64)
}

/// `10 log10(peak² / MSE)`; `+inf` when the masked MSE is zero.
pub fn psnr(reference: &Volume3D, test: &Volume3D, mask: &BinaryMask) -> Result<f64> {
    let mse = masked_mse(reference, test, mask)?;
    let peak = reference.min_max().1;
    Ok(psnr_from_mse(peak, mse))
}

pub fn psnr_from_mse(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_kernel() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect()
}

/// Separable zero-padded Gaussian filter along one axis.
fn filter_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as isize;
    let plane = dims[0] * dims[1];
    let mut out = vec![0.0; data.len()];
    parallel::for_each_chunk_mut(&mut out, plane, |z, chunk| {
        for (local, o) in chunk.iter_mut().enumerate() {
            let idx = z * plane + local;
            let coord = [local % dims[0], local / dims[0], z][axis] as isize;
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let c = coord + k as isize - r;
                if c >= 0 && c < n {
                    let j = (idx as isize + (c - coord) * stride as isize) as usize;
                    acc += w * data[j];
                }
            }
            *o = acc;
        }
    });
    out
}

fn gaussian_blur(data: &[f64], dims: [usize; 3], kernel: &[f64]) -> Vec<f64> {
    let a = filter_axis(data, dims, 0, kernel);
    let b = filter_axis(&a, dims, 1, kernel);
    filter_axis(&b, dims, 2, kernel)
}

/// Per-voxel SSIM with a truncated 3-D Gaussian window; windows that overhang
/// the grid are renormalised over their in-grid weights.
pub fn ssim_map(reference: &Volume3D, test: &Volume3D) -> Result<Vec<f64>> {
    reference.geometry.ensure_matches(&test.geometry, "ssim test image")?;
    let (lo, hi) = reference.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Degenerate("reference has zero dynamic range".into()));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let dims = reference.geometry.dims;
    let k = gaussian_kernel();
    let x = &reference.data;
    let y = &test.data;
    let ones = vec![1.0; x.len()];
    let norm = gaussian_blur(&ones, dims, &k);
    let bx = gaussian_blur(x, dims, &k);
    let by = gaussian_blur(y, dims, &k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let bxx = gaussian_blur(&xx, dims, &k);
    let byy = gaussian_blur(&yy, dims, &k);
    let bxy = gaussian_blur(&xy, dims, &k);
    Ok(parallel::map_range(x.len(), |i| {
        let w = norm[i];
        let mx = bx[i] / w;
        let my = by[i] / w;
        let vx = bxx[i] / w - mx * mx;
        let vy = byy[i] / w - my * my;
        let cxy = bxy[i] / w - mx * my;
        ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    }))
}

/// Mean SSIM over voxels whose window centre lies in `mask`.
pub fn ssim(reference: &Volume3D, test: &Volume3D, mask: &BinaryMask) -> Result<f64> {
    check_inputs(reference, test, mask)?;
    Ok(masked_mean(&ssim_map(reference, test)?, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionQuality {
    #[serde(with = "crate::json_float")]
    pub psnr: f64,
    pub ssim: f64,
    pub voxels: usize,
}

/// Whole-head and changed-area quality of one refaced image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub head: RegionQuality,
    pub face: RegionQuality,
    /// Names of the masks intersected to form the face region.
    pub face_masks: Vec<String>,
    pub peak_convention: String,
}

fn masked_mean(map: &[f64], mask: &BinaryMask) -> f64 {
    let vals: Vec<f64> = map.iter().zip(&mask.data).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    parallel::compensated_sum(&vals) / vals.len() as f64
}

fn region(reference: &Volume3D, test: &Volume3D, map: &[f64], mask: &BinaryMask) -> Result<RegionQuality> {
    Ok(RegionQuality { psnr: psnr(reference, test, mask)?, ssim: masked_mean(map, mask), voxels: mask.count() })
}

/// Compares `refaced` with `original` over the head mask of the original and
/// over the intersection of the supplied change masks (named pairs).
pub fn quality_report(
    original: &Volume3D,
    defaced: &Volume3D,
    refaced: &Volume3D,
    change_masks: &[(&str, &BinaryMask)],
) -> Result<QualityReport> {
    original.geometry.ensure_matches(&defaced.geometry, "defaced image")?;
    original.geometry.ensure_matches(&refaced.geometry, "refaced image")?;
    let head = head_mask(original)?;
    let masks: Vec<&BinaryMask> = change_masks.iter().map(|(_, m)| *m).collect();
    let face_mask = intersection_mask(&masks)?;
    face_mask.geometry.ensure_matches(&original.geometry, "change mask")?;
    if head.is_empty() || face_mask.is_empty() {
        return Err(Error::Argument("quality region mask is empty".into()));
    }
    let map = ssim_map(original, refaced)?;
    Ok(QualityReport {
        head: region(original, refaced, &map, &head)?,
        face: region(original, refaced, &map, &face_mask)?,
        face_masks: change_masks.iter().map(|(n, _)| n.to_string()).collect(),
        peak_convention: PEAK_CONVENTION.to_string(),
    })
}
