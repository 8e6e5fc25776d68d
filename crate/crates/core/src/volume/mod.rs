//! Scalar voxel grids, boolean masks and their shared geometry.
//!
//! Voxel data is stored x-fastest: linear index `x + nx * (y + ny * z)`.
//! After loading, axes follow RAS: +x right, +y anterior, +z superior.

mod affine;
pub mod nifti;
mod resample;

pub use affine::Affine;
pub use resample::{downsample, upsample_trilinear};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid shape plus the voxel-index to world-millimetre mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: Affine,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Argument(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Argument(format!("spacing must be positive, got {spacing:?}")));
        }
        if affine.inverse().is_none() {
            return Err(Error::Argument("affine is not invertible".into()));
        }
        Ok(Self { dims, spacing, affine })
    }

    /// Axis-aligned geometry whose voxel (0,0,0) sits at `origin`.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, Affine::scaling_translation(spacing, origin))
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// World position (mm) of a possibly fractional voxel index.
    pub fn world(&self, ijk: [f64; 3]) -> [f64; 3] {
        self.affine.apply(ijk)
    }

    /// Same shape and mapping, compared exactly.
    pub fn matches(&self, other: &Geometry) -> bool {
        self == other
    }

    pub(crate) fn ensure_matches(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what}: dims {:?} / {:?}, spacing {:?} / {:?}",
                self.dims, other.dims, self.spacing, other.spacing
            )))
        }
    }

    /// Sub-grid of axial slices `z0..z1`, with the affine shifted accordingly.
    pub fn z_slab(&self, z0: usize, z1: usize) -> Geometry {
        let shift = Affine::scaling_translation([1.0; 3], [0.0, 0.0, z0 as f64]);
        Geometry {
            dims: [self.dims[0], self.dims[1], z1 - z0],
            spacing: self.spacing,
            affine: self.affine.compose(&shift),
        }
    }
}

/// Axis permutation and flips applied when a file was brought into RAS.
///
/// New axis `r` was read from source axis `perm[r]`, reversed when `flip[r]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reorientation {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

impl Default for Reorientation {
    fn default() -> Self {
        Self { perm: [0, 1, 2], flip: [false; 3] }
    }
}

impl Reorientation {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

/// A scalar image. Immutable by convention once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub geometry: Geometry,
    pub data: Vec<f64>,
    pub intensity_units: String,
    pub orientation: Reorientation,
}

impl Volume3D {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::Argument(format!("data length {} does not match dims {:?}", data.len(), geometry.dims)));
        }
        Ok(Self { geometry, data, intensity_units: String::new(), orientation: Reorientation::default() })
    }

    pub fn filled(geometry: Geometry, value: f64) -> Self {
        let n = geometry.len();
        Self { geometry, data: vec![value; n], intensity_units: String::new(), orientation: Reorientation::default() }
    }

    pub fn from_fn(geometry: Geometry, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { geometry, data, intensity_units: String::new(), orientation: Reorientation::default() }
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.intensity_units = units.into();
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// Same geometry, new voxel values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut v = Volume3D::new(self.geometry.clone(), data)?;
        v.intensity_units = self.intensity_units.clone();
        v.orientation = self.orientation;
        Ok(v)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Copy of axial slices `z0..z1`.
    pub fn z_slab(&self, z0: usize, z1: usize) -> Volume3D {
        let plane = self.geometry.dims[0] * self.geometry.dims[1];
        Volume3D {
            geometry: self.geometry.z_slab(z0, z1),
            data: self.data[z0 * plane..z1 * plane].to_vec(),
            intensity_units: self.intensity_units.clone(),
            orientation: self.orientation,
        }
    }

    /// Keeps the sub-box `lo..hi` (exclusive) per axis.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Volume3D> {
        for a in 0..3 {
            if lo[a] >= hi[a] || hi[a] > self.geometry.dims[a] {
                return Err(Error::Argument(format!("bad crop box {lo:?}..{hi:?}")));
            }
        }
        let dims = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let shift = Affine::scaling_translation([1.0; 3], [lo[0] as f64, lo[1] as f64, lo[2] as f64]);
        let geometry = Geometry { dims, spacing: self.geometry.spacing, affine: self.geometry.affine.compose(&shift) };
        let mut data = Vec::with_capacity(geometry.len());
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                let start = self.geometry.index(lo[0], y, z);
                data.extend_from_slice(&self.data[start..start + dims[0]]);
            }
        }
        Ok(Volume3D { geometry, data, intensity_units: self.intensity_units.clone(), orientation: self.orientation })
    }

    /// Voxelwise `mask ? self : other`.
    pub fn select(&self, mask: &BinaryMask, other: &Volume3D) -> Result<Volume3D> {
        self.geometry.ensure_matches(&mask.geometry, "select mask")?;
        self.geometry.ensure_matches(&other.geometry, "select operand")?;
        let data =
            self.data.iter().zip(&other.data).zip(&mask.data).map(|((&a, &b), &m)| if m { a } else { b }).collect();
        self.with_data(data)
    }
}

/// A boolean voxel set on a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub geometry: Geometry,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<bool>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::Argument(format!("mask length {} does not match dims {:?}", data.len(), geometry.dims)));
        }
        Ok(Self { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        let n = geometry.len();
        Self { geometry, data: vec![false; n] }
    }

    pub fn full(geometry: Geometry) -> Self {
        let n = geometry.len();
        Self { geometry, data: vec![true; n] }
    }

    pub fn from_fn(geometry: Geometry, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { geometry, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geometry.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    /// Inclusive per-axis bounds of the foreground, or `None` when empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let c = self.geometry.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.geometry.ensure_matches(&other.geometry, "mask and")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Ok(BinaryMask { geometry: self.geometry.clone(), data })
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.geometry.ensure_matches(&other.geometry, "mask and-not")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect();
        Ok(BinaryMask { geometry: self.geometry.clone(), data })
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Mask as a 0/1 volume.
    pub fn to_volume(&self) -> Volume3D {
        Volume3D {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            intensity_units: String::new(),
            orientation: Reorientation::default(),
        }
    }

    /// Nonzero voxels of a volume, e.g. a mask loaded from a uint8 file.
    pub fn from_volume(vol: &Volume3D) -> BinaryMask {
        BinaryMask { geometry: vol.geometry.clone(), data: vol.data.iter().map(|&v| v != 0.0).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(d: [usize; 3]) -> Geometry {
        Geometry::axis_aligned(d, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn index_and_coords_are_inverse() {
        let g = geom([3, 4, 5]);
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Geometry::axis_aligned([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Geometry::axis_aligned([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Volume3D::new(geom([2, 2, 2]), vec![0.0; 7]).is_err());
    }

    #[test]
    fn crop_shifts_affine() {
        let g = Geometry::axis_aligned([4, 4, 4], [2.0; 3], [10.0, 0.0, 0.0]).unwrap();
        let v = Volume3D::from_fn(g, |x, y, z| (x + 10 * y + 100 * z) as f64);
        let c = v.crop([1, 2, 3], [3, 4, 4]).unwrap();
        assert_eq!(c.dims(), [2, 2, 1]);
        assert_eq!(c.at(0, 0, 0), 321.0);
        assert_eq!(c.geometry.world([0.0; 3]), [12.0, 4.0, 6.0]);
    }

    #[test]
    fn bounding_box_of_empty_is_none() {
        let m = BinaryMask::empty(geom([3, 3, 3]));
        assert!(m.bounding_box().is_none());
        let mut d = vec![false; 27];
        d[g_idx(1, 2, 0)] = true;
        let m = BinaryMask::new(geom([3, 3, 3]), d).unwrap();
        assert_eq!(m.bounding_box(), Some(([1, 2, 0], [1, 2, 0])));
    }

    fn g_idx(x: usize, y: usize, z: usize) -> usize {
        x + 3 * (y + 3 * z)
    }
}
