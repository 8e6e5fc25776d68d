use std::collections::HashMap;

use super::tables::{CORNERS, EDGES, TRI_TABLE};
use super::TriMesh;
use crate::error::{Error, Result};
use crate::volume::BinaryMask;

/// Extracts the 0.5 iso-surface of a binary mask.
///
/// The mask is treated as zero outside the grid, so the surface is always
/// closed. With 0/1 samples every vertex sits at an edge midpoint. Vertices
/// are shared between neighbouring cells and mapped to world mm through the
/// mask's affine; triangles wind counter-clockwise seen from outside.
pub fn marching_cubes(mask: &BinaryMask) -> Result<TriMesh> {
    if mask.is_empty() {
        return Err(Error::Degenerate("marching cubes on an empty mask".into()));
    }
    if mask.is_full() {
        return Err(Error::Degenerate("marching cubes on a full mask".into()));
    }
    let g = &mask.geometry;
    let [nx, ny, nz] = g.dims.map(|d| d as isize);
    let sample = |x: isize, y: isize, z: isize| -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && x < nx
            && y < ny
            && z < nz
            && mask.data[g.index(x as usize, y as usize, z as usize)]
    };
    // padded grid point -> linear key
    let (px, py) = (nx + 2, ny + 2);
    let key = |p: [isize; 3], axis: usize| -> u64 {
        let lin = (p[0] + 1) + px * ((p[1] + 1) + py * (p[2] + 1));
        lin as u64 * 3 + axis as u64
    };
    let flip = g.affine.linear_det() < 0.0;

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut lookup: HashMap<u64, usize> = HashMap::new();

    for z in -1..nz {
        for y in -1..ny {
            for x in -1..nx {
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    if !sample(x + off[0] as isize, y + off[1] as isize, z + off[2] as isize) {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut edge_vertex = [usize::MAX; 12];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let mut idx = [0usize; 3];
                    for (k, &e) in tri.iter().enumerate() {
                        let e = e as usize;
                        if edge_vertex[e] == usize::MAX {
                            let [a, b] = EDGES[e];
                            let pa = CORNERS[a].map(|v| v as isize);
                            let pb = CORNERS[b].map(|v| v as isize);
                            let axis = (0..3).find(|&ax| pa[ax] != pb[ax]).unwrap();
                            let lo = [0, 1, 2].map(|ax| [x, y, z][ax] + pa[ax].min(pb[ax]));
                            let id = *lookup.entry(key(lo, axis)).or_insert_with(|| {
                                let mut p = lo.map(|v| v as f64);
                                p[axis] += 0.5;
                                vertices.push(g.world(p));
                                vertices.len() - 1
                            });
                            edge_vertex[e] = id;
                        }
                        idx[k] = edge_vertex[e];
                    }
                    // a reflecting affine reverses the table's outward winding
                    let t = if flip { [idx[0], idx[2], idx[1]] } else { idx };
                    if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                        triangles.push(t);
                    }
                }
            }
        }
    }
    Ok(TriMesh { vertices, triangles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Affine, Geometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(d: [usize; 3]) -> Geometry {
        Geometry::axis_aligned(d, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn single_voxel_is_octahedron() {
        let m = BinaryMask::from_fn(geom([3, 3, 3]), |x, y, z| (x, y, z) == (1, 1, 1));
        let mesh = marching_cubes(&m).unwrap();
        assert_eq!(mesh.vertices.len(), 6);
        assert_eq!(mesh.triangles.len(), 8);
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.is_closed_manifold());
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn voxel_at_border_still_closed() {
        let m = BinaryMask::from_fn(geom([2, 2, 2]), |x, y, z| (x, y, z) == (0, 0, 0));
        let mesh = marching_cubes(&m).unwrap();
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.is_closed_manifold());
    }

    #[test]
    fn empty_and_full_rejected() {
        assert!(marching_cubes(&BinaryMask::empty(geom([2, 2, 2]))).is_err());
        assert!(marching_cubes(&BinaryMask::full(geom([2, 2, 2]))).is_err());
    }

    #[test]
    fn two_voxels_give_two_components() {
        let m = BinaryMask::from_fn(geom([6, 3, 3]), |x, y, z| y == 1 && z == 1 && (x == 1 || x == 4));
        let mesh = marching_cubes(&m).unwrap();
        assert_eq!(mesh.connected_components(), 2);
    }

    #[test]
    fn random_masks_give_closed_oriented_surfaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let g = geom([7, 6, 5]);
            let bits = (0..g.len()).map(|_| rng.random_bool(0.4)).collect();
            let m = BinaryMask::new(g, bits).unwrap();
            if m.is_empty() {
                continue;
            }
            let mesh = marching_cubes(&m).unwrap();
            assert!(mesh.is_closed_manifold());
            // enclosed volume is positive with outward winding
            assert!(mesh.signed_volume() > 0.0);
            assert!(mesh.triangles.iter().all(|t| t.iter().all(|&i| i < mesh.vertices.len())));
        }
    }

    #[test]
    fn world_mapping_and_reflection_keep_outward_winding() {
        let a = Affine::scaling_translation([-2.0, 1.0, 3.0], [5.0, 0.0, 0.0]);
        let g = Geometry::new([3, 3, 3], [2.0, 1.0, 3.0], a).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, z| (x, y, z) == (1, 1, 1));
        let mesh = marching_cubes(&m).unwrap();
        assert!(mesh.signed_volume() > 0.0);
        let xs: Vec<f64> = mesh.vertices.iter().map(|v| v[0]).collect();
        assert!(xs.contains(&4.0) && xs.contains(&2.0));
    }
}
