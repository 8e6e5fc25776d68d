//! Face surfaces and mean absolute surface distance (MASD).

mod kdtree;
mod marching_cubes;
mod tables;

pub use kdtree::{kd_nearest, KdTree};
pub use marching_cubes::marching_cubes;

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{face_roi, head_mask};
use crate::parallel;
use crate::volume::Volume3D;

/// Triangle surface in world millimetres.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                0.5 * norm(cross(sub(b, a), sub(c, a)))
            })
            .sum()
    }

    /// Divergence-theorem volume; positive for outward-wound closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                let x = cross(b, c);
                (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]) / 6.0
            })
            .sum()
    }

    fn edge_uses(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// V − E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_uses().len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        self.edge_uses().values().all(|&n| n == 2)
    }

    /// Number of vertex-connected pieces among referenced vertices.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for t in &self.triangles {
            let r0 = find(&mut parent, t[0]);
            for &v in &t[1..] {
                let r = find(&mut parent, v);
                parent[r] = r0;
            }
        }
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v] = true;
            }
        }
        let mut roots: Vec<usize> =
            (0..self.vertices.len()).filter(|&v| used[v]).map(|v| find(&mut parent, v)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    /// Applies `p -> R p + t` to every vertex.
    pub fn transformed(&self, rotation: [[f64; 3]; 3], translation: [f64; 3]) -> TriMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|p| {
                let mut out = translation;
                for (r, o) in out.iter_mut().enumerate() {
                    *o += rotation[r][0] * p[0] + rotation[r][1] * p[1] + rotation[r][2] * p[2];
                }
                out
            })
            .collect();
        TriMesh { vertices, triangles: self.triangles.clone() }
    }

    /// ASCII PLY export for inspection.
    pub fn write_ply(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "ply\nformat ascii 1.0")?;
        writeln!(out, "element vertex {}", self.vertices.len())?;
        writeln!(out, "property double x\nproperty double y\nproperty double z")?;
        writeln!(out, "element face {}", self.triangles.len())?;
        writeln!(out, "property list uchar int vertex_indices\nend_header")?;
        for v in &self.vertices {
            writeln!(out, "{} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Which way nearest-vertex distances are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MasdMode {
    /// Mean of the two directed means.
    #[default]
    Symmetric,
    /// Mean over vertices of the first surface only.
    Directed,
}

/// Nearest-vertex distance from each point to the tree's point set.
pub fn nearest_distances(points: &[[f64; 3]], tree: &KdTree) -> Vec<f64> {
    parallel::map_slice(points, |&p| tree.nearest(p).1)
}

fn mean(values: &[f64]) -> f64 {
    parallel::compensated_sum(values) / values.len() as f64
}

/// Mean over vertices of `from` of the distance to the nearest vertex of `to`.
pub fn masd_directed(from: &TriMesh, to: &TriMesh) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::Argument("MASD of an empty mesh".into()));
    }
    let tree = KdTree::build(&to.vertices)?;
    Ok(mean(&nearest_distances(&from.vertices, &tree)))
}

/// Symmetric vertex-to-vertex MASD in mm.
pub fn masd(a: &TriMesh, b: &TriMesh) -> Result<f64> {
    masd_with(a, b, MasdMode::Symmetric)
}

pub fn masd_with(a: &TriMesh, b: &TriMesh, mode: MasdMode) -> Result<f64> {
    match mode {
        MasdMode::Directed => masd_directed(a, b),
        MasdMode::Symmetric => Ok(0.5 * (masd_directed(a, b)? + masd_directed(b, a)?)),
    }
}

/// Head mask, face crop and marching cubes of one image.
pub fn face_surface(vol: &Volume3D) -> Result<TriMesh> {
    marching_cubes(&face_roi(&head_mask(vol)?)?)
}

/// MASD between the face surfaces of two co-registered images.
/// With [`MasdMode::Directed`] distances run from `candidate` to `original`.
pub fn face_distance_report(original: &Volume3D, candidate: &Volume3D, mode: MasdMode) -> Result<f64> {
    original.geometry.ensure_matches(&candidate.geometry, "face distance")?;
    let a = face_surface(original)?;
    let b = face_surface(candidate)?;
    masd_with(&b, &a, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_mesh(n: usize, z: f64) -> TriMesh {
        let mut vertices = Vec::new();
        for i in 0..n {
            for j in 0..n {
                vertices.push([i as f64 * 1.5, j as f64 * 1.5, z]);
            }
        }
        let mut triangles = Vec::new();
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let a = i * n + j;
                triangles.push([a, a + n, a + 1]);
                triangles.push([a + 1, a + n, a + n + 1]);
            }
        }
        TriMesh { vertices, triangles }
    }

    fn random_mesh(rng: &mut ChaCha8Rng, n: usize) -> TriMesh {
        let vertices: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random::<f64>() * 50.0, rng.random::<f64>() * 50.0, rng.random::<f64>() * 50.0])
            .collect();
        let triangles = (0..n / 3).map(|k| [3 * k, 3 * k + 1, 3 * k + 2]).collect();
        TriMesh { vertices, triangles }
    }

    fn brute_directed(a: &TriMesh, b: &TriMesh) -> f64 {
        let mut total = 0.0;
        for p in &a.vertices {
            let mut best = f64::INFINITY;
            for q in &b.vertices {
                best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
            }
            total += best;
        }
        total / a.vertices.len() as f64
    }

    #[test]
    fn identical_meshes_have_zero_distance() {
        let m = grid_mesh(10, 0.0);
        assert_eq!(masd(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn offset_planes() {
        for d in [0.5, 1.0, 2.0, 5.0] {
            let got = masd(&grid_mesh(12, 0.0), &grid_mesh(12, d)).unwrap();
            assert!((got - d).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_quadratic_scan_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_mesh(&mut rng, 201);
        let b = random_mesh(&mut rng, 198);
        let expect = 0.5 * (brute_directed(&a, &b) + brute_directed(&b, &a));
        assert!((masd(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert_eq!(masd(&a, &b).unwrap(), masd(&b, &a).unwrap());
        assert!((masd_with(&a, &b, MasdMode::Directed).unwrap() - brute_directed(&a, &b)).abs() < 1e-9);
        assert!(masd(&a, &TriMesh::default()).is_err());
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_mesh(&mut rng, 150);
        let b = random_mesh(&mut rng, 150);
        let (s, c) = (0.7f64.sin(), 0.7f64.cos());
        let rot = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let t = [10.0, -3.0, 7.5];
        let before = masd(&a, &b).unwrap();
        let after = masd(&a.transformed(rot, t), &b.transformed(rot, t)).unwrap();
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn ply_header_counts() {
        let m = grid_mesh(3, 0.0);
        let mut buf = Vec::new();
        m.write_ply(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("element vertex 9"));
        assert!(s.contains("element face 8"));
    }
}
