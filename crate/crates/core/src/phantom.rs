//! Deterministic synthetic head phantoms with analytic ground truth.
//!
//! A phantom is the union of a head ellipsoid, a box-shaped nose, an
//! ellipsoidal brow bump and a cylindrical neck, with a skull shell and an
//! ellipsoidal brain inside. World frame is RAS in millimetres with the grid
//! centre at the origin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::volume::{BinaryMask, Geometry, Volume3D};

pub const BACKGROUND: f64 = 0.0;
pub const SOFT_TISSUE: f64 = 80.0;
pub const SKULL: f64 = 40.0;
pub const BRAIN: f64 = 100.0;

/// Head centre relative to the grid centre (mm); leaves room for the nose
/// anteriorly and the neck inferiorly.
const HEAD_OFFSET: [f64; 3] = [0.0, -20.0, 20.0];
/// Lattice pitch of the smooth noise field (mm).
const NOISE_PITCH: f64 = 16.0;
/// Grid voxels kept free around the head.
const MARGIN_VOXELS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub grid: [usize; 3],
    pub spacing_mm: f64,
    /// Head ellipsoid semi-axes (x, y, z), 60–100 mm.
    pub head_radii: [f64; 3],
    /// Anterior protrusion of the nose beyond the head surface, 10–40 mm.
    pub nose_length: f64,
    /// 6–30 mm.
    pub nose_width: f64,
    /// 10–40 mm.
    pub nose_height: f64,
    /// 0–12 mm.
    pub brow_depth: f64,
    /// Soft tissue between head surface and skull, 2–12 mm.
    pub scalp_thickness: f64,
    /// 2–12 mm.
    pub skull_thickness: f64,
    /// Peak amplitude of the smooth soft-tissue noise, 0–20.
    pub noise_amplitude: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            grid: [128, 128, 128],
            spacing_mm: 2.0,
            head_radii: [72.0, 86.0, 80.0],
            nose_length: 24.0,
            nose_width: 16.0,
            nose_height: 24.0,
            brow_depth: 6.0,
            scalp_thickness: 6.0,
            skull_thickness: 6.0,
            noise_amplitude: 4.0,
        }
    }
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::Argument(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        for (a, &r) in self.head_radii.iter().enumerate() {
            check_range(&format!("head_radii[{a}]"), r, 60.0, 100.0)?;
        }
        check_range("nose_length", self.nose_length, 10.0, 40.0)?;
        check_range("nose_width", self.nose_width, 6.0, 30.0)?;
        check_range("nose_height", self.nose_height, 10.0, 40.0)?;
        check_range("brow_depth", self.brow_depth, 0.0, 12.0)?;
        check_range("scalp_thickness", self.scalp_thickness, 2.0, 12.0)?;
        check_range("skull_thickness", self.skull_thickness, 2.0, 12.0)?;
        check_range("noise_amplitude", self.noise_amplitude, 0.0, 20.0)?;
        if !(self.spacing_mm > 0.0 && self.spacing_mm <= 4.0) {
            return Err(Error::Argument(format!("spacing_mm = {} outside (0, 4]", self.spacing_mm)));
        }
        if self.grid.iter().any(|&n| n < 16) {
            return Err(Error::Argument(format!("grid {:?} smaller than 16 voxels", self.grid)));
        }
        let shape = PhantomShape::new(*self);
        let half = self.grid.map(|n| (n as f64 - 1.0) / 2.0 * self.spacing_mm);
        let (lo, hi) = shape.head_extent();
        let margin = MARGIN_VOXELS * self.spacing_mm;
        for a in 0..3 {
            // the neck is allowed to run to the inferior margin
            let lo_ok = a == 2 || lo[a] >= -half[a] + margin;
            if !lo_ok || hi[a] > half[a] - margin {
                return Err(Error::Argument(format!(
                    "head does not fit the {:?} grid at {} mm along axis {a}",
                    self.grid, self.spacing_mm
                )));
            }
        }
        Ok(())
    }
}

/// Analytic description of a phantom in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomShape {
    pub params: PhantomParams,
    pub head_center: [f64; 3],
    /// Nose box bounds (inclusive) in world mm.
    pub nose_min: [f64; 3],
    pub nose_max: [f64; 3],
    pub brow_center: [f64; 3],
    pub brow_radii: [f64; 3],
    pub neck_radius: f64,
    /// Neck axis (x, y) and top z; it runs down to `neck_bottom_z`.
    pub neck_axis: [f64; 2],
    pub neck_top_z: f64,
    pub neck_bottom_z: f64,
    pub brain_center: [f64; 3],
    pub brain_radii: [f64; 3],
}

fn ellipsoid_level(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum()
}

impl PhantomShape {
    pub fn new(params: PhantomParams) -> Self {
        let [rx, ry, rz] = params.head_radii;
        let c = HEAD_OFFSET;
        let nose_zc = c[2] - 0.15 * rz;
        let surface_y = |dz: f64| ry * (1.0 - (dz / rz).powi(2)).max(0.0).sqrt();
        let nose_tip = c[1] + surface_y(nose_zc - c[2]) + params.nose_length;
        let brow_z = c[2] + 0.3 * rz;
        let brow_center = [c[0], c[1] + surface_y(brow_z - c[2]), brow_z];
        let half = [params.grid[0], params.grid[1], params.grid[2]].map(|n| (n as f64 - 1.0) / 2.0 * params.spacing_mm);
        let inset = params.scalp_thickness + params.skull_thickness + 6.0;
        Self {
            params,
            head_center: c,
            nose_min: [c[0] - params.nose_width / 2.0, c[1], nose_zc - params.nose_height / 2.0],
            nose_max: [c[0] + params.nose_width / 2.0, nose_tip, nose_zc + params.nose_height / 2.0],
            brow_center,
            brow_radii: [0.45 * rx, params.brow_depth.max(1e-9), 9.0],
            neck_radius: 0.55 * rx,
            neck_axis: [c[0], c[1] - 0.1 * ry],
            neck_top_z: c[2] - 0.4 * rz,
            neck_bottom_z: -half[2] + MARGIN_VOXELS * params.spacing_mm,
            brain_center: [c[0], c[1] - 3.0, c[2] + 3.0],
            brain_radii: [rx - inset, ry - inset, rz - inset],
        }
    }

    pub fn in_head_ellipsoid(&self, p: [f64; 3]) -> bool {
        ellipsoid_level(p, self.head_center, self.params.head_radii) <= 1.0
    }

    pub fn in_nose(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.nose_min[a] && p[a] <= self.nose_max[a])
    }

    pub fn in_brow(&self, p: [f64; 3]) -> bool {
        self.params.brow_depth > 0.0 && ellipsoid_level(p, self.brow_center, self.brow_radii) <= 1.0
    }

    pub fn in_neck(&self, p: [f64; 3]) -> bool {
        let dx = p[0] - self.neck_axis[0];
        let dy = p[1] - self.neck_axis[1];
        p[2] <= self.neck_top_z && p[2] >= self.neck_bottom_z && dx * dx + dy * dy <= self.neck_radius.powi(2)
    }

    /// Membership in the whole head (everything that is not background).
    pub fn in_head(&self, p: [f64; 3]) -> bool {
        self.in_head_ellipsoid(p) || self.in_nose(p) || self.in_brow(p) || self.in_neck(p)
    }

    pub fn in_skull(&self, p: [f64; 3]) -> bool {
        let r = self.params.head_radii;
        let outer = r.map(|v| v - self.params.scalp_thickness);
        let inner = outer.map(|v| v - self.params.skull_thickness);
        ellipsoid_level(p, self.head_center, outer) <= 1.0 && ellipsoid_level(p, self.head_center, inner) > 1.0
    }

    pub fn in_brain(&self, p: [f64; 3]) -> bool {
        ellipsoid_level(p, self.brain_center, self.brain_radii) <= 1.0
    }

    /// Axis-aligned world bounds of the head union.
    pub fn head_extent(&self) -> ([f64; 3], [f64; 3]) {
        let c = self.head_center;
        let r = self.params.head_radii;
        let mut lo = [c[0] - r[0], c[1] - r[1], c[2] - r[2]];
        let mut hi = [c[0] + r[0], c[1] + r[1], c[2] + r[2]];
        for a in 0..3 {
            lo[a] = lo[a].min(self.nose_min[a]);
            hi[a] = hi[a].max(self.nose_max[a]);
            lo[a] = lo[a].min(self.brow_center[a] - self.brow_radii[a]);
            hi[a] = hi[a].max(self.brow_center[a] + self.brow_radii[a]);
        }
        lo[2] = lo[2].min(self.neck_bottom_z);
        (lo, hi)
    }

    pub fn grid_geometry(&self) -> Geometry {
        let p = &self.params;
        let origin = p.grid.map(|n| -(n as f64 - 1.0) / 2.0 * p.spacing_mm);
        Geometry::axis_aligned(p.grid, [p.spacing_mm; 3], origin).expect("validated phantom grid")
    }

    /// Rasterises a predicate at voxel centres.
    pub fn rasterize(&self, f: impl Fn(&Self, [f64; 3]) -> bool + Sync) -> BinaryMask {
        let g = self.grid_geometry();
        let data = parallel::map_range(g.len(), |i| {
            let c = g.coords(i);
            f(self, g.world(c.map(|v| v as f64)))
        });
        BinaryMask { geometry: g, data }
    }
}

/// Parameters plus provenance, serialised next to exported volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub seed: u64,
    pub shape: PhantomShape,
    pub tissue_values: TissueValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueValues {
    pub background: f64,
    pub soft_tissue: f64,
    pub skull: f64,
    pub brain: f64,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume3D,
    pub brain: BinaryMask,
    pub record: GeometryRecord,
}

impl Phantom {
    pub fn shape(&self) -> &PhantomShape {
        &self.record.shape
    }
}

/// Band-limited noise: uniform lattice values trilinearly interpolated.
struct SmoothNoise {
    dims: [usize; 3],
    origin: [f64; 3],
    values: Vec<f64>,
}

impl SmoothNoise {
    fn new(seed: u64, lo: [f64; 3], hi: [f64; 3]) -> Self {
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / NOISE_PITCH).ceil() as usize + 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let values = (0..dims[0] * dims[1] * dims[2]).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self { dims, origin: lo, values }
    }

    fn sample(&self, p: [f64; 3]) -> f64 {
        let mut i0 = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let s = ((p[a] - self.origin[a]) / NOISE_PITCH).clamp(0.0, (self.dims[a] - 2) as f64);
            i0[a] = (s.floor() as usize).min(self.dims[a] - 2);
            t[a] = s - i0[a] as f64;
        }
        let at = |dx: usize, dy: usize, dz: usize| {
            self.values[(i0[0] + dx) + self.dims[0] * ((i0[1] + dy) + self.dims[1] * (i0[2] + dz))]
        };
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                        * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                        * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                    acc += w * at(dx, dy, dz);
                }
            }
        }
        acc
    }
}

pub fn generate_phantom(seed: u64, params: PhantomParams) -> Result<Phantom> {
    params.validate()?;
    let shape = PhantomShape::new(params);
    let g = shape.grid_geometry();
    let (lo, hi) = (g.world([0.0; 3]), g.world(params.grid.map(|n| (n - 1) as f64)));
    let noise = SmoothNoise::new(seed, lo, hi);
    let labels: Vec<(f64, bool)> = parallel::map_range(g.len(), |i| {
        let p = g.world(g.coords(i).map(|v| v as f64));
        if shape.in_brain(p) {
            (BRAIN, true)
        } else if shape.in_skull(p) {
            (SKULL, false)
        } else if shape.in_head(p) {
            (SOFT_TISSUE + params.noise_amplitude * noise.sample(p), false)
        } else {
            (BACKGROUND, false)
        }
    });
    let (data, brain): (Vec<f64>, Vec<bool>) = labels.into_iter().unzip();
    Ok(Phantom {
        volume: Volume3D::new(g.clone(), data)?.with_units("arbitrary"),
        brain: BinaryMask::new(g, brain)?,
        record: GeometryRecord {
            seed,
            shape,
            tissue_values: TissueValues {
                background: BACKGROUND,
                soft_tissue: SOFT_TISSUE,
                skull: SKULL,
                brain: BRAIN,
            },
        },
    })
}

/// Per-subject jitter: `base ± half_width`, uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortJitter {
    pub head_radius_half_width: f64,
    pub nose_length: (f64, f64),
    pub nose_width: (f64, f64),
    pub brow_depth: (f64, f64),
}

pub const COHORT_JITTER: CohortJitter = CohortJitter {
    head_radius_half_width: 6.0,
    nose_length: (16.0, 32.0),
    nose_width: (12.0, 20.0),
    brow_depth: (3.0, 9.0),
};

/// Seed of cohort member `index`, independent of the other members.
pub fn member_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

pub fn jittered_params(member_seed: u64, base: &PhantomParams) -> PhantomParams {
    let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
    let j = COHORT_JITTER;
    let mut p = *base;
    for r in &mut p.head_radii {
        *r += rng.random_range(-j.head_radius_half_width..=j.head_radius_half_width);
    }
    p.nose_length = rng.random_range(j.nose_length.0..=j.nose_length.1);
    p.nose_width = rng.random_range(j.nose_width.0..=j.nose_width.1);
    p.brow_depth = rng.random_range(j.brow_depth.0..=j.brow_depth.1);
    p
}

/// `n` jittered phantoms around `base`, generated in parallel.
pub fn generate_cohort_with(n: usize, seed: u64, base: &PhantomParams) -> Result<Vec<Phantom>> {
    if n < 1 {
        return Err(Error::Argument("cohort size must be >= 1".into()));
    }
    parallel::map_range(n, |i| {
        let s = member_seed(seed, i);
        generate_phantom(s, jittered_params(s, base))
    })
    .into_iter()
    .collect()
}

pub fn generate_cohort(n: usize, seed: u64) -> Result<Vec<Phantom>> {
    generate_cohort_with(n, seed, &PhantomParams::default())
}
