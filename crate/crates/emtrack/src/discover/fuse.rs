use serde::{Deserialize, Serialize};

use super::{center_surround, connected_components, Region, SaliencyConfig};
use crate::ego::MotionField;
use crate::geom::{fit_box, Box3D, PointCloud, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Motion,
    Seg2d,
    Det3d,
}

/// Completes a surface-fit box along the viewing direction: points only
/// cover the faces the camera sees, so the extent most aligned with the
/// view ray comes out thin. When it is much thinner than the cross extent,
/// grow it away from the camera, keeping the near face in place.
pub fn complete_box_toward_view(b: &Box3D) -> Box3D {
    let center = b.center_v();
    let dist = center.norm();
    if dist < 1e-6 {
        return *b;
    }
    let view = center / dist;
    let (s, c) = b.yaw.sin_cos();
    // Box-frame horizontal axes in world coordinates.
    let axis_l = nalgebra::Vector3::new(c, 0.0, -s);
    let axis_w = nalgebra::Vector3::new(s, 0.0, c);
    let (thin_idx, axis, align) = if view.dot(&axis_l).abs() >= view.dot(&axis_w).abs() {
        (0usize, axis_l, view.dot(&axis_l))
    } else {
        (2usize, axis_w, view.dot(&axis_w))
    };
    let other = if thin_idx == 0 { b.size[2] } else { b.size[0] };
    let target = 0.85 * other;
    if b.size[thin_idx] >= 0.7 * other {
        return *b;
    }
    let grow = target - b.size[thin_idx];
    let mut out = *b;
    out.size[thin_idx] = target;
    let shift = axis * (grow / 2.0) * align.signum();
    out.center = [
        b.center[0] + shift.x,
        b.center[1] + shift.y,
        b.center[2] + shift.z,
    ];
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Motion-to-heat decay rate (1/meters).
    pub lambda: f64,
    /// Sum-of-cues proposal threshold; values above 2 demand that no single
    /// module can trigger a proposal alone.
    pub ensemble_threshold: f64,
    /// Appearance agreement bar: voxels where both the 2D and 3D modules are
    /// at least this confident propose even without motion support, which is
    /// how stationary instances of the moving type get labeled.
    pub appearance_bar: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            ensemble_threshold: 2.0,
            appearance_bar: 0.65,
        }
    }
}

/// An object proposal cut from a cue grid.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub box3d: Box3D,
    pub cues: Vec<Cue>,
    pub confidence: f64,
    pub region: Region,
}

fn plausible_box(b: &Box3D, min_extent: f64) -> bool {
    let mut s = b.size;
    s.sort_by(f64::total_cmp);
    s[1] >= min_extent
}

/// Round-1 handcrafted path: threshold the motion magnitude grid, take
/// connected components, gate each region on center-surround saliency, and
/// fit a box to the moving points inside it.
pub fn motion_proposals(
    field: &MotionField,
    mag: &VoxelGrid,
    saliency: &SaliencyConfig,
    lambda: f64,
) -> Vec<Proposal> {
    let spec = mag.spec;
    let regions = connected_components(mag, saliency.motion_threshold as f32, saliency.min_region_voxels);
    let mut out = Vec::new();
    for mut region in regions {
        let Ok(score) = center_surround(&region, field, spec, saliency) else {
            continue;
        };
        if score < saliency.chi2_threshold {
            continue;
        }
        // Member points: the moving anchors inside the region's voxels.
        let voxel_set: std::collections::HashSet<_> = region.voxels.iter().cloned().collect();
        region.points = field
            .anchors
            .iter()
            .zip(&field.deltas)
            .filter(|(a, d)| {
                d.norm() > saliency.motion_threshold
                    && spec.voxel_of(a).is_some_and(|v| voxel_set.contains(&v))
            })
            .map(|(a, _)| *a)
            .collect();
        if region.points.len() < saliency.min_region_points {
            continue;
        }
        let Ok(fitted) = fit_box(&PointCloud::new(region.points.clone())) else {
            continue;
        };
        let mut box3d = complete_box_toward_view(&fitted);
        if !plausible_box(&box3d, saliency.min_box_extent) {
            continue;
        }
        let confidence = mean_over_region(&region, mag, |m| 1.0 - (-lambda * m as f64).exp());
        box3d.confidence = confidence;
        out.push(Proposal {
            box3d,
            cues: vec![Cue::Motion],
            confidence,
            region,
        });
    }
    out
}

fn mean_over_region(region: &Region, grid: &VoxelGrid, f: impl Fn(f32) -> f64) -> f64 {
    let sum: f64 = region
        .voxels
        .iter()
        .map(|&(x, y, z)| f(grid.get(x, y, z)))
        .sum();
    sum / region.voxels.len().max(1) as f64
}

/// Max of the 3x3x3 neighborhood per voxel: one voxel of alignment slack.
fn dilate(grid: &VoxelGrid) -> VoxelGrid {
    let spec = grid.spec;
    let mut out = VoxelGrid::zeros(spec, 1);
    for iz in 0..spec.dims[2] {
        for iy in 0..spec.dims[1] {
            for ix in 0..spec.dims[0] {
                let mut m = 0.0f32;
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (x, y, z) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                            if x >= 0
                                && y >= 0
                                && z >= 0
                                && (x as usize) < spec.dims[0]
                                && (y as usize) < spec.dims[1]
                                && (z as usize) < spec.dims[2]
                            {
                                m = m.max(grid.get(x as usize, y as usize, z as usize));
                            }
                        }
                    }
                }
                out.set(ix, iy, iz, m);
            }
        }
    }
    out
}

/// Ensemble fusion for rounds after the first.
///
/// The motion field becomes a heat `1 − exp(−λ‖Δx‖)` so that larger motion
/// votes harder for objectness, and the three cue grids are summed. Each
/// cue is max-dilated by one voxel first: the 2D cue lives on surface
/// voxels while the 3D heat peaks at object centers, and the coarse grid
/// would otherwise keep agreeing modules from ever overlapping. Voxels
/// above the ensemble threshold — or where both appearance modules agree
/// strongly — feed connected components and box fitting. Member points come
/// from the frame's point cloud so stationary objects keep their geometry.
pub fn fuse_ensemble(
    mag: &VoxelGrid,
    seg_unproj: &VoxelGrid,
    det_heat: &VoxelGrid,
    cloud: &PointCloud,
    cfg: &FusionConfig,
    saliency: &SaliencyConfig,
) -> (VoxelGrid, Vec<Proposal>) {
    let min_region_voxels = saliency.min_region_voxels;
    let spec = mag.spec;
    assert_eq!(seg_unproj.spec, spec);
    assert_eq!(det_heat.spec, spec);
    let n = spec.voxel_count();

    let mag_d = dilate(mag);
    let seg_d = dilate(seg_unproj);
    let det_d = dilate(det_heat);

    let mut fused = VoxelGrid::zeros(spec, 1);
    let mut mask = VoxelGrid::zeros(spec, 1);
    for i in 0..n {
        let m = 1.0 - (-cfg.lambda * mag_d.values[i] as f64).exp();
        let s = seg_d.values[i] as f64;
        let o = det_d.values[i] as f64;
        let sum = m + s + o;
        fused.values[i] = sum as f32;
        let appearance = s >= cfg.appearance_bar && o >= cfg.appearance_bar;
        if sum > cfg.ensemble_threshold || appearance {
            mask.values[i] = 1.0;
        }
    }

    let regions = connected_components(&mask, 0.5, min_region_voxels);
    let mut proposals = Vec::new();
    for mut region in regions {
        let voxel_set: std::collections::HashSet<_> = region.voxels.iter().cloned().collect();
        region.points = cloud
            .points
            .iter()
            .filter(|p| spec.voxel_of(p).is_some_and(|v| voxel_set.contains(&v)))
            .cloned()
            .collect();
        if region.points.len() < saliency.min_region_points {
            continue;
        }
        let Ok(fitted) = fit_box(&PointCloud::new(region.points.clone())) else {
            continue;
        };
        let mut box3d = complete_box_toward_view(&fitted);
        if !plausible_box(&box3d, saliency.min_box_extent) {
            continue;
        }
        let confidence = (mean_over_region(&region, &fused, |v| v as f64) / 3.0).clamp(0.0, 1.0);
        box3d.confidence = confidence;
        let mut cues = Vec::new();
        if mean_over_region(&region, &mag_d, |m| 1.0 - (-cfg.lambda * m as f64).exp()) > 0.3 {
            cues.push(Cue::Motion);
        }
        if mean_over_region(&region, &seg_d, |v| v as f64) > 0.3 {
            cues.push(Cue::Seg2d);
        }
        if mean_over_region(&region, &det_d, |v| v as f64) > 0.3 {
            cues.push(Cue::Det3d);
        }
        proposals.push(Proposal {
            box3d,
            cues,
            confidence,
            region,
        });
    }
    (fused, proposals)
}
