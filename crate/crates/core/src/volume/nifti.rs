//! NIfTI-1 single-file reader/writer (`.nii`, `.nii.gz`), little-endian only.
//!
//! Header layout: 348 bytes, 4-byte extension flag, payload at `vox_offset`
//! (352 on write). gzip input is detected from the `1f 8b` prefix.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Affine, Geometry, Reorientation, Volume3D};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// Payload element types this reader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::Uint8),
            4 => Some(Datatype::Int16),
            16 => Some(Datatype::Float32),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub datatype: Datatype,
    pub gzip: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self { datatype: Datatype::Float32, gzip: false }
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn text_at(b: &[u8], off: usize, len: usize) -> String {
    let raw = &b[off..off + len];
    let end = raw.iter().position(|&c| c == 0).unwrap_or(len);
    String::from_utf8_lossy(&raw[..end]).into_owned()
}

/// Decodes a NIfTI-1 byte stream (optionally gzip-compressed) into a RAS volume.
pub fn read_nifti(bytes: &[u8]) -> Result<Volume3D> {
    let owned;
    let b: &[u8] = if is_gzip(bytes) {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes).read_to_end(&mut out).map_err(|e| Error::Corruption(format!("gzip stream: {e}")))?;
        owned = out;
        &owned
    } else {
        bytes
    };

    if b.len() < HEADER_SIZE {
        return Err(Error::Format(format!("{} bytes is shorter than a NIfTI-1 header", b.len())));
    }
    let sizeof_hdr = i32_at(b, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            Error::Unsupported("big-endian NIfTI".into())
        } else if sizeof_hdr == 540 || sizeof_hdr.swap_bytes() == 540 {
            Error::Unsupported("NIfTI-2".into())
        } else {
            Error::Format(format!("sizeof_hdr = {sizeof_hdr}"))
        });
    }
    let magic = &b[344..348];
    if magic == MAGIC_PAIR {
        return Err(Error::Unsupported("separate .hdr/.img pair".into()));
    }
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }

    let ndim = i16_at(b, 40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for k in 1..=ndim as usize {
        let d = i16_at(b, 40 + 2 * k);
        if d < 1 {
            return Err(Error::Format(format!("dim[{k}] = {d}")));
        }
        if k <= 3 {
            dims[k - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::Unsupported(format!("{ndim}-D image with dim[{k}] = {d}")));
        }
    }

    let code = i16_at(b, 70);
    let datatype = Datatype::from_code(code).ok_or_else(|| Error::Unsupported(format!("datatype code {code}")))?;
    let bitpix = i16_at(b, 72);
    if bitpix as usize != datatype.bytes() * 8 {
        return Err(Error::Format(format!("bitpix {bitpix} inconsistent with datatype {code}")));
    }

    let mut spacing = [0.0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = (f32_at(b, 80 + 4 * a) as f64).abs();
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::Format(format!("pixdim[{}] = {}", a + 1, s)));
        }
    }
    let qfac = if f32_at(b, 76) < 0.0 { -1.0 } else { 1.0 };

    let vox_offset = f32_at(b, 108);
    if !(vox_offset >= VOX_OFFSET as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset} below 352")));
    }
    let vox_offset = vox_offset as usize;
    let slope = f32_at(b, 112) as f64;
    let inter = f32_at(b, 116) as f64;

    let qform_code = i16_at(b, 252);
    let sform_code = i16_at(b, 254);
    let affine = if sform_code > 0 {
        let mut m = Affine::identity().0;
        for (r, row) in m.iter_mut().take(3).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(b, 280 + 16 * r + 4 * c) as f64;
            }
        }
        Affine(m)
    } else if qform_code > 0 {
        let q = [f32_at(b, 256), f32_at(b, 260), f32_at(b, 264)].map(f64::from);
        let off = [f32_at(b, 268), f32_at(b, 272), f32_at(b, 276)].map(f64::from);
        quaternion_affine(q, off, spacing, qfac)
    } else {
        Affine::scaling_translation(spacing, [0.0; 3])
    };

    let n = dims[0] * dims[1] * dims[2];
    let need = vox_offset + n * datatype.bytes();
    if b.len() < need {
        return Err(Error::Corruption(format!("payload truncated: need {need} bytes, have {}", b.len())));
    }
    let payload = &b[vox_offset..need];
    let mut data: Vec<f64> = match datatype {
        Datatype::Uint8 => payload.iter().map(|&v| v as f64).collect(),
        Datatype::Int16 => payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        Datatype::Float32 => {
            payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
        }
    };
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let geometry = Geometry::new(dims, spacing, affine).map_err(|e| Error::Format(format!("header geometry: {e}")))?;
    let vol = Volume3D { geometry, data, intensity_units: text_at(b, 228, 24), orientation: Reorientation::default() };
    Ok(reorient_to_ras(vol))
}

fn quaternion_affine(q: [f64; 3], off: [f64; 3], spacing: [f64; 3], qfac: f64) -> Affine {
    let [qb, qc, qd] = q;
    let qa = (1.0 - (qb * qb + qc * qc + qd * qd)).max(0.0).sqrt();
    let r = [
        [qa * qa + qb * qb - qc * qc - qd * qd, 2.0 * (qb * qc - qa * qd), 2.0 * (qb * qd + qa * qc)],
        [2.0 * (qb * qc + qa * qd), qa * qa + qc * qc - qb * qb - qd * qd, 2.0 * (qc * qd - qa * qb)],
        [2.0 * (qb * qd - qa * qc), 2.0 * (qc * qd + qa * qb), qa * qa + qd * qd - qc * qc - qb * qb],
    ];
    let scale = [spacing[0], spacing[1], spacing[2] * qfac];
    let mut m = Affine::identity().0;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * scale[j];
        }
        m[i][3] = off[i];
    }
    Affine(m)
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Permutes/flips voxel axes so that voxel axis r points along +world axis r.
pub fn reorient_to_ras(vol: Volume3D) -> Volume3D {
    let m = vol.geometry.affine.0;
    // perm[r] = source axis feeding world axis r
    let perm = *PERMUTATIONS
        .iter()
        .max_by(|a, b| {
            let score = |p: &[usize; 3]| (0..3).map(|r| m[r][p[r]].abs()).sum::<f64>();
            score(a).partial_cmp(&score(b)).unwrap()
        })
        .unwrap();
    let flip = [0, 1, 2].map(|r| m[r][perm[r]] < 0.0);
    let orient = Reorientation { perm, flip };
    if orient.is_identity() {
        return vol;
    }

    let old = &vol.geometry;
    let dims = perm.map(|i| old.dims[i]);
    let spacing = perm.map(|i| old.spacing[i]);
    // new index -> old index
    let mut to_old = [[0.0; 4]; 4];
    to_old[3][3] = 1.0;
    for r in 0..3 {
        let i = perm[r];
        if flip[r] {
            to_old[i][r] = -1.0;
            to_old[i][3] = (old.dims[i] - 1) as f64;
        } else {
            to_old[i][r] = 1.0;
        }
    }
    let affine = old.affine.compose(&Affine(to_old));
    let geometry = Geometry { dims, spacing, affine };
    let mut data = Vec::with_capacity(vol.data.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let n = [x, y, z];
                let mut o = [0usize; 3];
                for r in 0..3 {
                    let i = perm[r];
                    o[i] = if flip[r] { old.dims[i] - 1 - n[r] } else { n[r] };
                }
                data.push(vol.data[old.index(o[0], o[1], o[2])]);
            }
        }
    }
    Volume3D { geometry, data, intensity_units: vol.intensity_units, orientation: orient }
}

/// Encodes as uncompressed float32 NIfTI-1.
pub fn write_nifti(vol: &Volume3D) -> Result<Vec<u8>> {
    write_nifti_with(vol, WriteOptions::default())
}

pub fn write_nifti_with(vol: &Volume3D, opts: WriteOptions) -> Result<Vec<u8>> {
    let dims = vol.geometry.dims;
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Range(format!("dims {dims:?} exceed NIfTI-1 int16 limits")));
    }
    let mut h = vec![0u8; VOX_OFFSET];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    put_i16(&mut h, 40, 3);
    for (k, &d) in dims.iter().enumerate() {
        put_i16(&mut h, 42 + 2 * k, d as i16);
    }
    for k in 4..8 {
        put_i16(&mut h, 40 + 2 * k, 1);
    }
    put_i16(&mut h, 70, opts.datatype.code());
    put_i16(&mut h, 72, (opts.datatype.bytes() * 8) as i16);
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    put_f32(&mut h, 76, 1.0);
    for (a, &s) in vol.geometry.spacing.iter().enumerate() {
        put_f32(&mut h, 80 + 4 * a, s as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // mm
    let descrip = b"refaudit";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    let units = vol.intensity_units.as_bytes();
    let n_units = units.len().min(23);
    h[228..228 + n_units].copy_from_slice(&units[..n_units]);
    put_i16(&mut h, 254, 2); // sform_code: aligned anatomical
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut h, 280 + 16 * r + 4 * c, vol.geometry.affine.0[r][c] as f32);
        }
    }
    h[344..348].copy_from_slice(MAGIC);

    let mut out = h;
    out.reserve(vol.data.len() * opts.datatype.bytes());
    match opts.datatype {
        Datatype::Float32 => {
            for &v in &vol.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Datatype::Int16 => {
            for &v in &vol.data {
                if v.fract() != 0.0 || v < i16::MIN as f64 || v > i16::MAX as f64 {
                    return Err(Error::Range(format!("{v} not representable as int16")));
                }
                out.extend_from_slice(&(v as i16).to_le_bytes());
            }
        }
        Datatype::Uint8 => {
            for &v in &vol.data {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::Range(format!("{v} not representable as uint8")));
                }
                out.push(v as u8);
            }
        }
    }

    if opts.gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&out).map_err(|e| Error::io("<gzip buffer>", e))?;
        out = enc.finish().map_err(|e| Error::io("<gzip buffer>", e))?;
    }
    Ok(out)
}

pub fn load(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti(&bytes)
}

/// Writes float32, gzip-compressed when the path ends in `.gz`.
pub fn save(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let gzip = path.extension().is_some_and(|e| e == "gz");
    let bytes = write_nifti_with(vol, WriteOptions { datatype: Datatype::Float32, gzip })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a mask as a uint8 NIfTI.
pub fn save_mask(mask: &super::BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let gzip = path.extension().is_some_and(|e| e == "gz");
    let bytes = write_nifti_with(&mask.to_volume(), WriteOptions { datatype: Datatype::Uint8, gzip })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume3D {
        let g = Geometry::axis_aligned(dims, [1.0, 1.5, 2.0], [-3.0, 4.0, 5.0]).unwrap();
        Volume3D::from_fn(g, |x, y, z| (x + 2 * y + 3 * z) as f64)
    }

    /// Hand-assembled header, written field by field without the encoder.
    fn handmade_int16(slope: f32, inter: f32, raw: &[i16]) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim: [i16; 8] = [3, 2, 2, 2, 1, 1, 1, 1];
        for (k, d) in dim.iter().enumerate() {
            b[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&4i16.to_le_bytes());
        b[72..74].copy_from_slice(&16i16.to_le_bytes());
        let pixdim: [f32; 8] = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for (k, p) in pixdim.iter().enumerate() {
            b[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
        }
        b[108..112].copy_from_slice(&352.0f32.to_le_bytes());
        b[112..116].copy_from_slice(&slope.to_le_bytes());
        b[116..120].copy_from_slice(&inter.to_le_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        for v in raw {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn applies_slope_and_intercept() {
        let raw: Vec<i16> = (0..8).collect();
        let v = read_nifti(&handmade_int16(2.0, 1.0, &raw)).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.data, vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0]);
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let raw: Vec<i16> = (0..8).collect();
        let v = read_nifti(&handmade_int16(0.0, 5.0, &raw)).unwrap();
        assert_eq!(v.data, (0..8).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn constant_cube_has_expected_size_and_header() {
        let g = Geometry::axis_aligned([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let bytes = write_nifti(&Volume3D::filled(g, 0.0)).unwrap();
        assert_eq!(bytes.len(), 352 + 4 * 64);
        assert_eq!(&bytes[344..348], b"n+1\0");
        assert_eq!(i16_at(&bytes, 40), 3);
        assert_eq!([i16_at(&bytes, 42), i16_at(&bytes, 44), i16_at(&bytes, 46)], [4, 4, 4]);
        assert_eq!(f32_at(&bytes, 108), 352.0);
    }

    #[test]
    fn round_trip_and_gzip_transparency() {
        let v = ramp([5, 3, 4]).with_units("arbitrary");
        let plain = write_nifti(&v).unwrap();
        let gz = write_nifti_with(&v, WriteOptions { datatype: Datatype::Float32, gzip: true }).unwrap();
        assert!(is_gzip(&gz));
        let a = read_nifti(&plain).unwrap();
        let b = read_nifti(&gz).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data, v.data);
        assert_eq!(a.geometry, v.geometry);
        assert_eq!(a.intensity_units, "arbitrary");
    }

    #[test]
    fn error_kinds() {
        let v = ramp([2, 2, 2]);
        let mut bad_magic = write_nifti(&v).unwrap();
        bad_magic[344] = b'x';
        assert!(matches!(read_nifti(&bad_magic), Err(Error::Format(_))));

        let mut pair = write_nifti(&v).unwrap();
        pair[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(read_nifti(&pair), Err(Error::Unsupported(_))));

        let mut dtype = write_nifti(&v).unwrap();
        dtype[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(read_nifti(&dtype), Err(Error::Unsupported(_))));

        let full = write_nifti(&v).unwrap();
        assert!(matches!(read_nifti(&full[..full.len() - 1]), Err(Error::Corruption(_))));
        assert!(matches!(read_nifti(&full[..100]), Err(Error::Format(_))));

        let mut be = full.clone();
        be[0..4].copy_from_slice(&348i32.to_be_bytes());
        assert!(matches!(read_nifti(&be), Err(Error::Unsupported(_))));
    }

    #[test]
    fn integer_types_reject_unrepresentable_values() {
        let g = Geometry::axis_aligned([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3D::new(g, vec![0.5, 1.0]).unwrap();
        let opts = WriteOptions { datatype: Datatype::Int16, gzip: false };
        assert!(matches!(write_nifti_with(&v, opts), Err(Error::Range(_))));
        let g = Geometry::axis_aligned([40000, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        assert!(matches!(write_nifti(&Volume3D::filled(g, 0.0)), Err(Error::Range(_))));
    }

    #[test]
    fn flipped_axes_are_brought_to_ras() {
        // LPS-style affine: x and y reversed.
        let mut a = Affine::scaling_translation([-1.0, -2.0, 3.0], [10.0, 20.0, 0.0]);
        a.0[0][3] = 10.0;
        let g = Geometry::new([3, 2, 2], [1.0, 2.0, 3.0], a).unwrap();
        let v = Volume3D::from_fn(g, |x, y, z| (x + 10 * y + 100 * z) as f64);
        let r = read_nifti(&write_nifti(&v).unwrap()).unwrap();
        assert_eq!(r.orientation.flip, [true, true, false]);
        assert_eq!(r.orientation.perm, [0, 1, 2]);
        // world positions of corresponding voxels agree
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..3 {
                    let val = r.at(x, y, z);
                    let (ox, oy) = (2 - x, 1 - y);
                    assert_eq!(val, v.at(ox, oy, z));
                    let w_new = r.geometry.world([x as f64, y as f64, z as f64]);
                    let w_old = v.geometry.world([ox as f64, oy as f64, z as f64]);
                    for k in 0..3 {
                        assert!((w_new[k] - w_old[k]).abs() < 1e-9);
                    }
                }
            }
        }
        let m = r.geometry.affine.0;
        assert!(m[0][0] > 0.0 && m[1][1] > 0.0 && m[2][2] > 0.0);
    }

    #[test]
    fn qform_used_when_no_sform() {
        let v = ramp([2, 2, 2]);
        let mut b = write_nifti(&v).unwrap();
        b[254..256].copy_from_slice(&0i16.to_le_bytes());
        b[252..254].copy_from_slice(&1i16.to_le_bytes());
        // identity quaternion, offset (1, 2, 3)
        b[268..272].copy_from_slice(&1.0f32.to_le_bytes());
        b[272..276].copy_from_slice(&2.0f32.to_le_bytes());
        b[276..280].copy_from_slice(&3.0f32.to_le_bytes());
        let r = read_nifti(&b).unwrap();
        assert_eq!(r.geometry.world([1.0, 1.0, 1.0]), [2.0, 3.5, 5.0]);
    }
}
