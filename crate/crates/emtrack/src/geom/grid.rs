use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeomError, PointCloud};

/// Placement and resolution of an axis-aligned voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// World position of the grid's minimum corner (meters).
    pub origin: [f64; 3],
    /// Edge lengths of one voxel (meters).
    pub voxel_size: [f64; 3],
    /// Voxel counts along x, y, z.
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GeomError> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(GeomError::InvalidGrid(format!("zero dims {:?}", self.dims)));
        }
        if self.voxel_size.iter().any(|&s| s <= 0.0) {
            return Err(GeomError::InvalidGrid(format!(
                "non-positive voxel size {:?}",
                self.voxel_size
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn linear(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    #[inline]
    pub fn unlinear(&self, idx: usize) -> (usize, usize, usize) {
        let ix = idx % self.dims[0];
        let rest = idx / self.dims[0];
        (ix, rest % self.dims[1], rest / self.dims[1])
    }

    /// Voxel containing `p`, or None if outside the grid.
    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<(usize, usize, usize)> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - self.origin[a]) / self.voxel_size[a];
            if f < 0.0 || f >= self.dims[a] as f64 {
                return None;
            }
            out[a] = f as usize;
        }
        Some((out[0], out[1], out[2]))
    }

    /// World position of a voxel's center.
    pub fn center_of(&self, ix: usize, iy: usize, iz: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (ix as f64 + 0.5) * self.voxel_size[0],
            self.origin[1] + (iy as f64 + 0.5) * self.voxel_size[1],
            self.origin[2] + (iz as f64 + 0.5) * self.voxel_size[2],
        )
    }

    pub fn min_voxel_edge(&self) -> f64 {
        self.voxel_size.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// A dense multi-channel scalar field over a [`GridSpec`].
///
/// Values are stored channel-interleaved per voxel is avoided; layout is
/// channel-planar: channel c occupies `[c*N, (c+1)*N)` with x fastest.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        Self {
            spec,
            channels,
            values: vec![0.0; spec.voxel_count() * channels],
        }
    }

    pub fn filled(spec: GridSpec, channels: usize, value: f32) -> Self {
        Self {
            spec,
            channels,
            values: vec![value; spec.voxel_count() * channels],
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.values[self.spec.linear(ix, iy, iz)]
    }

    #[inline]
    pub fn get_ch(&self, c: usize, ix: usize, iy: usize, iz: usize) -> f32 {
        self.values[c * self.spec.voxel_count() + self.spec.linear(ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, v: f32) {
        let i = self.spec.linear(ix, iy, iz);
        self.values[i] = v;
    }

    #[inline]
    pub fn set_ch(&mut self, c: usize, ix: usize, iy: usize, iz: usize, v: f32) {
        let i = c * self.spec.voxel_count() + self.spec.linear(ix, iy, iz);
        self.values[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spec.voxel_count();
        &self.values[c * n..(c + 1) * n]
    }

    /// Trilinear interpolation of channel 0 at a world position, clamped to
    /// the grid boundary. Exact at voxel centers.
    pub fn trilinear_sample(&self, p: &Vector3<f64>) -> f64 {
        self.trilinear_sample_ch(0, p)
    }

    pub fn trilinear_sample_ch(&self, c: usize, p: &Vector3<f64>) -> f64 {
        let spec = &self.spec;
        let mut f = [0.0f64; 3];
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        for a in 0..3 {
            // Continuous coordinate in units of voxels, 0 at first center.
            let x = (p[a] - spec.origin[a]) / spec.voxel_size[a] - 0.5;
            let max = (spec.dims[a] - 1) as f64;
            let x = x.clamp(0.0, max);
            let lo = x.floor();
            i0[a] = lo as usize;
            i1[a] = (lo as usize + 1).min(spec.dims[a] - 1);
            f[a] = x - lo;
        }
        let mut acc = 0.0;
        for (dz, wz) in [(i0[2], 1.0 - f[2]), (i1[2], f[2])] {
            for (dy, wy) in [(i0[1], 1.0 - f[1]), (i1[1], f[1])] {
                for (dx, wx) in [(i0[0], 1.0 - f[0]), (i1[0], f[0])] {
                    acc += wz * wy * wx * self.get_ch(c, dx, dy, dz) as f64;
                }
            }
        }
        acc
    }
}

/// Binary occupancy of a point cloud: a voxel is 1 iff at least one point
/// falls inside it. Points outside the grid are ignored.
pub fn voxelize(pc: &PointCloud, spec: GridSpec) -> VoxelGrid {
    let mut grid = VoxelGrid::zeros(spec, 1);
    for p in &pc.points {
        if let Some((ix, iy, iz)) = spec.voxel_of(p) {
            grid.set(ix, iy, iz, 1.0);
        }
    }
    grid
}

/// Per-voxel visibility from a camera at the frame origin.
///
/// A voxel is visible (1) if no occupied voxel lies strictly between the
/// camera and it along the ray through its center; it is occluded (0) once
/// the ray has passed through a surface. Rays with no return stay visible.
/// Traversal is exact grid walking (DDA), so no voxel is skipped.
pub fn raycast_visibility(pc: &PointCloud, spec: GridSpec) -> VoxelGrid {
    let occupancy = voxelize(pc, spec);
    let mut vis = VoxelGrid::filled(spec, 1, 1.0);
    for iz in 0..spec.dims[2] {
        for iy in 0..spec.dims[1] {
            for ix in 0..spec.dims[0] {
                if ray_blocked(&occupancy, spec, (ix, iy, iz)) {
                    vis.set(ix, iy, iz, 0.0);
                }
            }
        }
    }
    vis
}

/// Walks the segment camera-origin → voxel center through the grid and
/// reports whether an occupied voxel other than the target is crossed first.
fn ray_blocked(occupancy: &VoxelGrid, spec: GridSpec, target: (usize, usize, usize)) -> bool {
    let end = spec.center_of(target.0, target.1, target.2);
    // Parametric entry of the segment [0,1]·end into the grid volume.
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for a in 0..3 {
        let d = end[a];
        let lo = spec.origin[a];
        let hi = spec.origin[a] + spec.dims[a] as f64 * spec.voxel_size[a];
        if d.abs() < 1e-300 {
            if 0.0 < lo || 0.0 > hi {
                return false;
            }
            continue;
        }
        let (ta, tb) = ((lo / d).min(hi / d), (lo / d).max(hi / d));
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 >= t1 {
        return false;
    }

    // Initial cell just inside the entry point.
    let probe = end * (t0 + 1e-12);
    let mut cell = [0i64; 3];
    for a in 0..3 {
        let f = ((probe[a] - spec.origin[a]) / spec.voxel_size[a]).floor() as i64;
        cell[a] = f.clamp(0, spec.dims[a] as i64 - 1);
    }
    let tgt = [target.0 as i64, target.1 as i64, target.2 as i64];

    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let d = end[a];
        if d > 1e-300 {
            step[a] = 1;
            let next = spec.origin[a] + (cell[a] + 1) as f64 * spec.voxel_size[a];
            t_max[a] = next / d;
            t_delta[a] = spec.voxel_size[a] / d;
        } else if d < -1e-300 {
            step[a] = -1;
            let next = spec.origin[a] + cell[a] as f64 * spec.voxel_size[a];
            t_max[a] = next / d;
            t_delta[a] = -spec.voxel_size[a] / d;
        }
    }

    let max_steps = spec.dims.iter().sum::<usize>() * 3 + 8;
    for _ in 0..max_steps {
        if cell == tgt {
            return false;
        }
        if occupancy.get(cell[0] as usize, cell[1] as usize, cell[2] as usize) > 0.5 {
            return true;
        }
        // Advance across the nearest cell boundary. Ties mean the segment
        // crosses an edge or corner exactly: advance all tied axes at once,
        // skipping the zero-measure cells a single-axis step would graze.
        let tmin = t_max[0].min(t_max[1]).min(t_max[2]);
        if tmin > 1.0 {
            return false; // segment ends before leaving this cell
        }
        for a in 0..3 {
            if t_max[a] <= tmin + 1e-15 {
                cell[a] += step[a];
                if cell[a] < 0 || cell[a] >= spec.dims[a] as i64 {
                    return false;
                }
                t_max[a] += t_delta[a];
            }
        }
    }
    false
}
