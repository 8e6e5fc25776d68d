use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Geometry, Volume3D};

/// Axial slab layout for the slab-wise stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub slab_size: usize,
    pub overlap: usize,
}

impl Default for SlabSpec {
    fn default() -> Self {
        Self { slab_size: 8, overlap: 4 }
    }
}

impl SlabSpec {
    pub fn new(slab_size: usize, overlap: usize) -> Result<Self> {
        let s = Self { slab_size, overlap };
        s.validate()?;
        Ok(s)
    }

    /// `0 < overlap` and `2·overlap ≤ slab_size`, which keeps any slice in at
    /// most two slabs.
    pub fn validate(&self) -> Result<()> {
        if self.overlap == 0 || 2 * self.overlap > self.slab_size {
            return Err(Error::Argument(format!(
                "slab overlap must satisfy 0 < overlap <= slab_size/2 (size {}, overlap {})",
                self.slab_size, self.overlap
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> usize {
        self.slab_size - self.overlap
    }
}

/// Slab z-ranges: starts at multiples of `size − overlap`; a final slab is
/// clamped to end at `nz`, replacing regular slabs it would triple-cover.
pub fn stage2_slabs(nz: usize, layout: SlabSpec) -> Result<Vec<Range<usize>>> {
    layout.validate()?;
    let size = layout.slab_size;
    if nz < size {
        return Err(Error::Argument(format!("nz = {nz} is smaller than the slab size {size}")));
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * layout.step()).take_while(|s| s + size <= nz).collect();
    let last = *starts.last().unwrap();
    if last + size < nz {
        let clamped = nz - size;
        while starts.len() >= 2 && clamped < starts[starts.len() - 2] + size {
            starts.pop();
        }
        starts.push(clamped);
    }
    Ok(starts.into_iter().map(|s| s..s + size).collect())
}

/// Blends slabs into one volume. A slice held by one slab is copied; in a
/// k-slice overlap the m-th shared slice (m = 1..k) is `a + m/(k+1)·(b − a)`,
/// with `a` from the earlier slab and `b` from the later one.
pub fn merge_slabs(slabs: &[Volume3D], ranges: &[Range<usize>], geometry: &Geometry) -> Result<Volume3D> {
    if slabs.len() != ranges.len() || slabs.is_empty() {
        return Err(Error::Argument("slab and range counts differ or are zero".into()));
    }
    let [nx, ny, nz] = geometry.dims;
    let mut order: Vec<usize> = (0..ranges.len()).collect();
    order.sort_by_key(|&i| (ranges[i].start, ranges[i].end));
    for &i in &order {
        let r = &ranges[i];
        if r.end > nz || r.start >= r.end {
            return Err(Error::Argument(format!("slab range {r:?} outside 0..{nz}")));
        }
        if slabs[i].dims() != [nx, ny, r.len()] {
            return Err(Error::Argument(format!(
                "slab {i} has dims {:?}, expected {:?}",
                slabs[i].dims(),
                [nx, ny, r.len()]
            )));
        }
    }
    let mut cover: Vec<Vec<usize>> = vec![Vec::new(); nz];
    for &i in &order {
        for z in ranges[i].clone() {
            cover[z].push(i);
        }
    }
    if let Some(z) = cover.iter().position(|c| c.is_empty() || c.len() > 2) {
        return Err(Error::Argument(format!("slice {z} is covered by {} slabs (need 1 or 2)", cover[z].len())));
    }
    let plane = nx * ny;
    let mut data = vec![0.0; geometry.len()];
    crate::parallel::for_each_chunk_mut(&mut data, plane, |z, out| {
        let slice = |i: usize| {
            let lz = z - ranges[i].start;
            &slabs[i].data[lz * plane..(lz + 1) * plane]
        };
        match cover[z][..] {
            [i] => out.copy_from_slice(slice(i)),
            [a, b] => {
                let k = ranges[a].end - ranges[b].start;
                let m = z - ranges[b].start + 1;
                let w = m as f64 / (k + 1) as f64;
                for ((o, &va), &vb) in out.iter_mut().zip(slice(a)).zip(slice(b)) {
                    *o = va + w * (vb - va);
                }
            }
            _ => unreachable!(),
        }
    });
    Ok(Volume3D {
        geometry: geometry.clone(),
        data,
        intensity_units: slabs[order[0]].intensity_units.clone(),
        orientation: slabs[order[0]].orientation,
    })
}
