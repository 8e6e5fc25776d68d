//! Head-mask extraction and face region-of-interest cropping.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::parallel;
use crate::volume::{BinaryMask, Geometry, Volume3D};

pub const DEFAULT_BINS: usize = 256;
/// Inferior axial slices removed from the head mask before surface extraction.
pub const FACE_INFERIOR_SLICES: usize = 10;
/// Version tag written into reports for the head-mask recipe below.
pub const HEAD_MASK_VERSION: &str = "head-mask v1";

/// Otsu threshold over a `bins`-bin histogram spanning `[min, max]`.
///
/// Candidate thresholds are the interior bin edges; the edge maximising the
/// between-class variance wins, ties going to the lower edge. Foreground is
/// `value > threshold`. Class means use the actual voxel values of each bin.
pub fn otsu_threshold(vol: &Volume3D, bins: usize) -> Result<f64> {
    otsu_values(&vol.data, bins)
}

pub fn otsu_values(values: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Argument(format!("otsu needs at least 2 bins, got {bins}")));
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo < hi) {
        return Err(Error::Degenerate("otsu threshold of a constant volume".into()));
    }
    let edges = histogram_edges(lo, hi, bins);
    let mut counts = vec![0u64; bins];
    let mut sums = vec![0.0f64; bins];
    for &v in values {
        // bin k holds edges[k-1] < v <= edges[k]
        let k = edges.partition_point(|&e| e < v);
        counts[k] += 1;
        sums[k] += v;
    }
    let total = values.len() as f64;
    let total_sum: f64 = sums.iter().sum();
    let mut c0 = 0u64;
    let mut s0 = 0.0f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 1..bins {
        c0 += counts[k - 1];
        s0 += sums[k - 1];
        let c1 = values.len() as u64 - c0;
        if c0 == 0 || c1 == 0 {
            continue;
        }
        let w0 = c0 as f64 / total;
        let w1 = c1 as f64 / total;
        let m0 = s0 / c0 as f64;
        let m1 = (total_sum - s0) / c1 as f64;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best.0 {
            best = (var, k);
        }
    }
    Ok(edges[best.1 - 1])
}

/// Interior histogram edges `e_1 .. e_{bins-1}`.
pub fn histogram_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (1..bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

pub fn threshold_mask(vol: &Volume3D, threshold: f64) -> BinaryMask {
    BinaryMask { geometry: vol.geometry.clone(), data: vol.data.iter().map(|&v| v > threshold).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Morphology {
    Dilate,
    Erode,
    Close,
    Open,
    FillHoles,
    LargestComponent,
}

/// Offsets of the digital ball `dx² + dy² + dz² <= r²`.
pub fn ball_offsets(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Applies one morphological operator. Voxels outside the grid count as
/// background for both dilation and erosion.
pub fn morphology(mask: &BinaryMask, op: Morphology, radius: usize) -> Result<BinaryMask> {
    let needs_radius = matches!(op, Morphology::Dilate | Morphology::Erode | Morphology::Close | Morphology::Open);
    if needs_radius && radius < 1 {
        return Err(Error::Argument("structuring element radius must be >= 1".into()));
    }
    Ok(match op {
        Morphology::Dilate => dilate(mask, radius),
        Morphology::Erode => erode(mask, radius),
        Morphology::Close => erode(&dilate(mask, radius), radius),
        Morphology::Open => dilate(&erode(mask, radius), radius),
        Morphology::FillHoles => fill_holes(mask),
        Morphology::LargestComponent => largest_component(mask),
    })
}

fn sweep(mask: &BinaryMask, radius: usize, dilating: bool) -> BinaryMask {
    let g = &mask.geometry;
    let [nx, ny, nz] = g.dims.map(|d| d as isize);
    let offsets = ball_offsets(radius);
    let plane = (nx * ny) as usize;
    let mut data = vec![false; mask.data.len()];
    parallel::for_each_chunk_mut(&mut data, plane, |z, out| {
        let z = z as isize;
        for y in 0..ny {
            for x in 0..nx {
                let hit = |o: &[isize; 3]| {
                    let (xx, yy, zz) = (x + o[0], y + o[1], z + o[2]);
                    xx >= 0
                        && yy >= 0
                        && zz >= 0
                        && xx < nx
                        && yy < ny
                        && zz < nz
                        && mask.data[g.index(xx as usize, yy as usize, zz as usize)]
                };
                out[(x + nx * y) as usize] = if dilating { offsets.iter().any(hit) } else { offsets.iter().all(hit) };
            }
        }
    });
    BinaryMask { geometry: g.clone(), data }
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    sweep(mask, radius, true)
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    sweep(mask, radius, false)
}

const FACE_NEIGHBORS: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn neighbors26() -> Vec<[isize; 3]> {
    let mut v = Vec::with_capacity(26);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    v.push([dx, dy, dz]);
                }
            }
        }
    }
    v
}

fn step(g: &Geometry, idx: usize, o: &[isize; 3]) -> Option<usize> {
    let c = g.coords(idx);
    let mut n = [0usize; 3];
    for a in 0..3 {
        let v = c[a] as isize + o[a];
        if v < 0 || v >= g.dims[a] as isize {
            return None;
        }
        n[a] = v as usize;
    }
    Some(g.index(n[0], n[1], n[2]))
}

/// Fills background regions (6-connected) that do not reach the grid border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let g = &mask.geometry;
    let [nx, ny, nz] = g.dims;
    let mut outside = vec![false; mask.data.len()];
    let mut queue = VecDeque::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let border = x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1;
                let i = g.index(x, y, z);
                if border && !mask.data[i] && !outside[i] {
                    outside[i] = true;
                    queue.push_back(i);
                }
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        for o in &FACE_NEIGHBORS {
            if let Some(j) = step(g, i, o) {
                if !mask.data[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    BinaryMask { geometry: g.clone(), data: outside.iter().map(|&o| !o).collect() }
}

/// Labels 26-connected foreground components. Labels start at 1 and follow
/// the linear index of each component's first voxel; returns (labels, sizes).
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let g = &mask.geometry;
    let nbrs = neighbors26();
    let mut labels = vec![0u32; mask.data.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for o in &nbrs {
                if let Some(j) = step(g, i, o) {
                    if mask.data[j] && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the largest 26-connected component; ties go to the component with
/// the lowest minimum linear index.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (labels, sizes) = label_components(mask);
    let Some(best) = sizes.iter().enumerate().fold(None::<(usize, usize)>, |acc, (i, &s)| match acc {
        Some((_, bs)) if bs >= s => acc,
        _ => Some((i, s)),
    }) else {
        return mask.clone();
    };
    let keep = best.0 as u32 + 1;
    BinaryMask { geometry: mask.geometry.clone(), data: labels.iter().map(|&l| l == keep).collect() }
}

/// Otsu foreground, then close(2), fill holes, keep the largest component.
pub fn head_mask(vol: &Volume3D) -> Result<BinaryMask> {
    let t = otsu_threshold(vol, DEFAULT_BINS)?;
    let fg = threshold_mask(vol, t);
    let closed = erode(&dilate(&fg, 2), 2);
    Ok(largest_component(&fill_holes(&closed)))
}

/// Fixed crop planes derived from a head mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceCrop {
    /// First axial slice kept.
    pub z_keep_from: usize,
    /// Voxels with `y < y_mid` are posterior and dropped.
    pub y_mid: f64,
}

impl FaceCrop {
    pub fn from_mask(mask: &BinaryMask) -> Result<FaceCrop> {
        let (lo, hi) = mask.bounding_box().ok_or_else(|| Error::Degenerate("face crop of an empty mask".into()))?;
        if hi[2] - lo[2] + 1 < FACE_INFERIOR_SLICES + 1 {
            return Err(Error::Degenerate(format!(
                "mask spans {} axial slices, need at least {}",
                hi[2] - lo[2] + 1,
                FACE_INFERIOR_SLICES + 1
            )));
        }
        Ok(FaceCrop { z_keep_from: lo[2] + FACE_INFERIOR_SLICES, y_mid: (lo[1] + hi[1]) as f64 / 2.0 })
    }

    pub fn apply(&self, mask: &BinaryMask) -> BinaryMask {
        let g = &mask.geometry;
        let data = mask
            .data
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let [_, y, z] = g.coords(i);
                b && z >= self.z_keep_from && y as f64 >= self.y_mid
            })
            .collect();
        BinaryMask { geometry: g.clone(), data }
    }
}

/// Drops the lowest 10 mask slices and the posterior half of the mask's
/// y-extent, leaving the face.
pub fn face_roi(mask: &BinaryMask) -> Result<BinaryMask> {
    Ok(FaceCrop::from_mask(mask)?.apply(mask))
}
