use std::collections::VecDeque;

use crate::geom::{Box3D, VoxelGrid};

/// A 26-connected blob of voxels above threshold, with the 3D points that
/// fall inside it (attached by the caller) and its axis-aligned voxel bounds.
#[derive(Debug, Clone)]
pub struct Region {
    pub voxels: Vec<(usize, usize, usize)>,
    pub points: Vec<nalgebra::Vector3<f64>>,
    /// Axis-aligned bounds of the member voxels, as a yaw-0 box.
    pub bounds: Box3D,
}

impl Region {
    pub fn contains_voxel(&self, v: (usize, usize, usize)) -> bool {
        self.voxels.contains(&v)
    }
}

/// 26-connected components of `grid > threshold`; components smaller than
/// `min_voxels` are dropped.
pub fn connected_components(grid: &VoxelGrid, threshold: f32, min_voxels: usize) -> Vec<Region> {
    let spec = grid.spec;
    let n = spec.voxel_count();
    let mut seen = vec![false; n];
    let mut regions = Vec::new();
    for start in 0..n {
        if seen[start] || grid.values[start] <= threshold {
            continue;
        }
        let mut voxels = Vec::new();
        let mut queue = VecDeque::new();
        queue.push_back(start);
        seen[start] = true;
        while let Some(idx) = queue.pop_front() {
            let (ix, iy, iz) = spec.unlinear(idx);
            voxels.push((ix, iy, iz));
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let (nx, ny, nz) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                        if nx < 0
                            || ny < 0
                            || nz < 0
                            || nx >= spec.dims[0] as i64
                            || ny >= spec.dims[1] as i64
                            || nz >= spec.dims[2] as i64
                        {
                            continue;
                        }
                        let ni = spec.linear(nx as usize, ny as usize, nz as usize);
                        if !seen[ni] && grid.values[ni] > threshold {
                            seen[ni] = true;
                            queue.push_back(ni);
                        }
                    }
                }
            }
        }
        if voxels.len() < min_voxels {
            continue;
        }
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for &(x, y, z) in &voxels {
            for (a, v) in [(0, x), (1, y), (2, z)] {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let min_c = spec.center_of(lo[0], lo[1], lo[2]);
        let max_c = spec.center_of(hi[0], hi[1], hi[2]);
        let bounds = Box3D::new(
            [
                (min_c.x + max_c.x) / 2.0,
                (min_c.y + max_c.y) / 2.0,
                (min_c.z + max_c.z) / 2.0,
            ],
            [
                max_c.x - min_c.x + spec.voxel_size[0],
                max_c.y - min_c.y + spec.voxel_size[1],
                max_c.z - min_c.z + spec.voxel_size[2],
            ],
            0.0,
            1.0,
        );
        regions.push(Region {
            voxels,
            points: Vec::new(),
            bounds,
        });
    }
    regions
}
