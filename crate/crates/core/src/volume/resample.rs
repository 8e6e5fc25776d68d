use super::{Affine, Geometry, Volume3D};
use crate::error::{Error, Result};
use crate::parallel;

fn check_factor(factor: [usize; 3]) -> Result<()> {
    if factor.iter().any(|&f| f < 1) {
        return Err(Error::Argument(format!("resampling factor must be >= 1, got {factor:?}")));
    }
    Ok(())
}

/// Block-mean pooling. Non-divisible extents are padded by edge replication,
/// so the output has `ceil(n / f)` voxels per axis. Block centres keep their
/// original world positions.
pub fn downsample(vol: &Volume3D, factor: [usize; 3]) -> Result<Volume3D> {
    check_factor(factor)?;
    if factor == [1, 1, 1] {
        return Ok(vol.clone());
    }
    let src = &vol.geometry;
    let dims = [0, 1, 2].map(|a| src.dims[a].div_ceil(factor[a]));
    let [fx, fy, fz] = factor;
    let norm = 1.0 / (fx * fy * fz) as f64;
    let plane = dims[0] * dims[1];
    let mut data = vec![0.0; dims[0] * dims[1] * dims[2]];
    parallel::for_each_chunk_mut(&mut data, plane, |z, out| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut sum = 0.0;
                for dz in 0..fz {
                    let sz = (z * fz + dz).min(src.dims[2] - 1);
                    for dy in 0..fy {
                        let sy = (y * fy + dy).min(src.dims[1] - 1);
                        for dx in 0..fx {
                            let sx = (x * fx + dx).min(src.dims[0] - 1);
                            sum += vol.data[src.index(sx, sy, sz)];
                        }
                    }
                }
                out[x + dims[0] * y] = sum * norm;
            }
        }
    });
    // new index i -> source index f*i + (f-1)/2
    let map = Affine::scaling_translation(factor.map(|f| f as f64), factor.map(|f| (f as f64 - 1.0) / 2.0));
    let geometry = Geometry {
        dims,
        spacing: [0, 1, 2].map(|a| src.spacing[a] * factor[a] as f64),
        affine: src.affine.compose(&map),
    };
    Ok(Volume3D { geometry, data, intensity_units: vol.intensity_units.clone(), orientation: vol.orientation })
}

/// Trilinear upsampling to `n * f` voxels per axis. Target voxel centres are
/// located in source index space at `(i + 0.5) / f - 0.5` and clamped to the
/// source grid.
pub fn upsample_trilinear(vol: &Volume3D, factor: [usize; 3]) -> Result<Volume3D> {
    check_factor(factor)?;
    if factor == [1, 1, 1] {
        return Ok(vol.clone());
    }
    let src = &vol.geometry;
    let dims = [0, 1, 2].map(|a| src.dims[a] * factor[a]);

    // Per-axis (lower index, upper index, weight of upper).
    let taps: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| {
            let n = src.dims[a];
            let f = factor[a] as f64;
            (0..dims[a])
                .map(|i| {
                    let s = ((i as f64 + 0.5) / f - 0.5).clamp(0.0, (n - 1) as f64);
                    let lo = (s.floor() as usize).min(n - 1);
                    let hi = (lo + 1).min(n - 1);
                    (lo, hi, s - lo as f64)
                })
                .collect()
        })
        .collect();

    let plane = dims[0] * dims[1];
    let mut data = vec![0.0; plane * dims[2]];
    parallel::for_each_chunk_mut(&mut data, plane, |z, out| {
        let (z0, z1, wz) = taps[2][z];
        for y in 0..dims[1] {
            let (y0, y1, wy) = taps[1][y];
            for x in 0..dims[0] {
                let (x0, x1, wx) = taps[0][x];
                let v = |xx, yy, zz| vol.data[src.index(xx, yy, zz)];
                let c00 = v(x0, y0, z0) + wx * (v(x1, y0, z0) - v(x0, y0, z0));
                let c10 = v(x0, y1, z0) + wx * (v(x1, y1, z0) - v(x0, y1, z0));
                let c01 = v(x0, y0, z1) + wx * (v(x1, y0, z1) - v(x0, y0, z1));
                let c11 = v(x0, y1, z1) + wx * (v(x1, y1, z1) - v(x0, y1, z1));
                let c0 = c00 + wy * (c10 - c00);
                let c1 = c01 + wy * (c11 - c01);
                out[x + dims[0] * y] = c0 + wz * (c1 - c0);
            }
        }
    });
    let map = Affine::scaling_translation(factor.map(|f| 1.0 / f as f64), factor.map(|f| (1.0 / f as f64 - 1.0) / 2.0));
    let geometry = Geometry {
        dims,
        spacing: [0, 1, 2].map(|a| src.spacing[a] / factor[a] as f64),
        affine: src.affine.compose(&map),
    };
    Ok(Volume3D { geometry, data, intensity_units: vol.intensity_units.clone(), orientation: vol.orientation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(d: [usize; 3]) -> Geometry {
        Geometry::axis_aligned(d, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn block_means_of_x_ramp() {
        let v = Volume3D::from_fn(geom([4, 4, 4]), |x, _, _| x as f64);
        let d = downsample(&v, [2, 2, 2]).unwrap();
        assert_eq!(d.dims(), [2, 2, 2]);
        for z in 0..2 {
            for y in 0..2 {
                assert_eq!(d.at(0, y, z), 0.5);
                assert_eq!(d.at(1, y, z), 2.5);
            }
        }
        assert_eq!(d.geometry.spacing, [2.0; 3]);
    }

    #[test]
    fn block_centre_world_position_preserved() {
        let g = Geometry::axis_aligned([6, 5, 7], [0.8, 1.1, 2.0], [-12.3, 4.5, 88.0]).unwrap();
        let v = Volume3D::filled(g.clone(), 3.0);
        let d = downsample(&v, [2, 3, 2]).unwrap();
        let centre = g.world([0.5, 1.0, 0.5]);
        let got = d.geometry.world([0.0; 3]);
        for a in 0..3 {
            assert!((centre[a] - got[a]).abs() < 1e-9);
        }
        // non-divisible dims are padded by replication
        assert_eq!(d.dims(), [3, 2, 4]);
        assert!(d.data.iter().all(|&x| x == 3.0));
    }

    #[test]
    fn edge_padding_replicates() {
        let v = Volume3D::from_fn(geom([3, 1, 1]), |x, _, _| x as f64);
        let d = downsample(&v, [2, 1, 1]).unwrap();
        assert_eq!(d.data, vec![0.5, 2.0]);
    }

    #[test]
    fn identity_factors() {
        let v = Volume3D::from_fn(geom([3, 2, 2]), |x, y, z| (x * y + z) as f64);
        assert_eq!(downsample(&v, [1, 1, 1]).unwrap(), v);
        assert_eq!(upsample_trilinear(&v, [1, 1, 1]).unwrap(), v);
        assert!(downsample(&v, [0, 1, 1]).is_err());
        assert!(upsample_trilinear(&v, [1, 0, 1]).is_err());
    }

    /// Direct per-point evaluation of linear interpolation with clamping.
    fn lerp_oracle(vals: &[f64], s: f64) -> f64 {
        let s = s.clamp(0.0, (vals.len() - 1) as f64);
        let i = s.floor() as usize;
        if i + 1 >= vals.len() {
            return vals[vals.len() - 1];
        }
        let t = s - i as f64;
        (1.0 - t) * vals[i] + t * vals[i + 1]
    }

    #[test]
    fn two_voxel_ramp_upsampled() {
        let v = Volume3D::from_fn(geom([2, 1, 1]), |x, _, _| x as f64);
        let u = upsample_trilinear(&v, [2, 1, 1]).unwrap();
        assert_eq!(u.dims(), [4, 1, 1]);
        for i in 0..4 {
            let s = (i as f64 + 0.5) / 2.0 - 0.5;
            assert!((u.data[i] - lerp_oracle(&[0.0, 1.0], s)).abs() < 1e-15);
        }
        assert_eq!(u.data, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn linear_field_reproduced_in_interior() {
        let f = |x: f64, y: f64, z: f64| 0.3 * x - 1.2 * y + 2.5 * z + 7.0;
        let v = Volume3D::from_fn(geom([5, 6, 4]), |x, y, z| f(x as f64, y as f64, z as f64));
        let fac = [2, 3, 2];
        let u = upsample_trilinear(&v, fac).unwrap();
        for z in 0..u.dims()[2] {
            for y in 0..u.dims()[1] {
                for x in 0..u.dims()[0] {
                    let s = [x, y, z].map(|i| i as f64);
                    let src = [0, 1, 2].map(|a| (s[a] + 0.5) / fac[a] as f64 - 0.5);
                    let interior = (0..3).all(|a| src[a] >= 0.0 && src[a] <= (v.dims()[a] - 1) as f64);
                    if interior {
                        assert!((u.at(x, y, z) - f(src[0], src[1], src[2])).abs() < 1e-9);
                    }
                }
            }
        }
        // world positions follow the same mapping
        let w = u.geometry.world([0.0; 3]);
        assert!((w[0] - (-0.25)).abs() < 1e-12);
    }

    #[test]
    fn constant_survives_down_then_up() {
        let v = Volume3D::filled(geom([7, 5, 6]), -4.25);
        let d = downsample(&v, [2, 2, 2]).unwrap();
        let u = upsample_trilinear(&d, [2, 2, 2]).unwrap();
        assert!(u.data.iter().all(|&x| x == -4.25));
    }
}
