use nalgebra::Vector2;

use super::PseudoLabel;
use crate::geom::{Box3D, GridSpec, Intrinsics, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelClass {
    Ignore,
    Positive,
    Negative,
}

/// Per-pixel training classes for the 2D segmenter.
#[derive(Debug, Clone)]
pub struct LabelMap2D {
    pub width: u32,
    pub height: u32,
    pub classes: Vec<PixelClass>,
}

impl LabelMap2D {
    #[inline]
    pub fn get(&self, u: u32, v: u32) -> PixelClass {
        self.classes[(v * self.width + u) as usize]
    }

    pub fn count(&self, class: PixelClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// How far boxes shrink to make confident positives (meters per side).
pub const SHRINK_MARGIN: f64 = 0.1;
/// How far boxes grow to carve out the negative band (meters per side).
pub const ENLARGE_MARGIN: f64 = 2.0;

/// Shrinks a box by [`SHRINK_MARGIN`] per side while keeping at least half
/// of each extent, so thin surface-fit proposals keep a positive core.
pub fn shrink_with_core(b: &Box3D) -> Box3D {
    let mut out = *b;
    for a in 0..3 {
        out.size[a] = (b.size[a] - 2.0 * SHRINK_MARGIN).max(b.size[a] * 0.5);
    }
    out
}

/// Builds the sparse 2D supervision map for one frame.
///
/// Positives: projected cloud points inside the boxes shrunk by 0.1 m per
/// side. Negatives: projected points between each original box and its
/// 2.0 m-enlarged version, plus the projected box outline. Everything else
/// is ignore; positive beats negative where labels collide.
pub fn make_supervision_2d(
    labels: &[PseudoLabel],
    cloud: &PointCloud,
    intr: &Intrinsics,
) -> LabelMap2D {
    let n = (intr.width * intr.height) as usize;
    let mut classes = vec![PixelClass::Ignore; n];
    let pixels = cloud.pixels.as_deref();

    // Negatives first so positives can overwrite them.
    for label in labels {
        let original = label.box3d;
        let enlarged = original.inflated(ENLARGE_MARGIN);
        for (k, p) in cloud.points.iter().enumerate() {
            if enlarged.contains(p) && !original.contains(p) {
                if let Some((u, v)) = pixel_of(pixels, k, p, intr) {
                    classes[(v * intr.width + u) as usize] = PixelClass::Negative;
                }
            }
        }
        draw_box_outline(&original, intr, &mut classes);
    }
    for label in labels {
        let shrunk = shrink_with_core(&label.box3d);
        for (k, p) in cloud.points.iter().enumerate() {
            if shrunk.contains(p) {
                if let Some((u, v)) = pixel_of(pixels, k, p, intr) {
                    classes[(v * intr.width + u) as usize] = PixelClass::Positive;
                }
            }
        }
    }
    LabelMap2D {
        width: intr.width,
        height: intr.height,
        classes,
    }
}

fn pixel_of(
    pixels: Option<&[(u32, u32)]>,
    k: usize,
    p: &nalgebra::Vector3<f64>,
    intr: &Intrinsics,
) -> Option<(u32, u32)> {
    if let Some(px) = pixels {
        return Some(px[k]);
    }
    let (u, v, _) = intr.project_point(p)?;
    let (u, v) = (u.round(), v.round());
    intr.contains(u, v).then_some((u as u32, v as u32))
}

/// Rasterizes the convex hull outline of the box's projected corners as
/// negative pixels.
fn draw_box_outline(b: &Box3D, intr: &Intrinsics, classes: &mut [PixelClass]) {
    let mut pts: Vec<Vector2<f64>> = Vec::new();
    for c in b.corners() {
        if let Some((u, v, _)) = intr.project_point(&c) {
            pts.push(Vector2::new(u, v));
        }
    }
    if pts.len() < 3 {
        return;
    }
    let hull = convex_hull(&mut pts);
    for i in 0..hull.len() {
        let a = hull[i];
        let b2 = hull[(i + 1) % hull.len()];
        draw_line(a, b2, intr, classes);
    }
}

fn convex_hull(pts: &mut [Vector2<f64>]) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Vector2<f64>> = Vec::new();
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

fn draw_line(a: Vector2<f64>, b: Vector2<f64>, intr: &Intrinsics, classes: &mut [PixelClass]) {
    let steps = ((b - a).norm().ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let p = a + (b - a) * t;
        let (u, v) = (p.x.round(), p.y.round());
        if intr.contains(u, v) {
            let i = (v as u32 * intr.width + u as u32) as usize;
            if classes[i] == PixelClass::Ignore {
                classes[i] = PixelClass::Negative;
            }
        }
    }
}

/// Per-label regression targets written at the heatmap peak.
#[derive(Debug, Clone, Copy)]
pub struct PeakTarget {
    pub voxel: (usize, usize, usize),
    /// Box size in meters.
    pub size: [f64; 3],
    /// Subvoxel offset of the true center from the voxel center, in voxel
    /// units per axis.
    pub offset: [f64; 3],
    /// Orientation class among the 16 yaw bins.
    pub yaw_bin: usize,
}

pub const YAW_BINS: usize = 16;

pub fn yaw_to_bin(yaw: f64) -> usize {
    let tau = std::f64::consts::TAU;
    let w = tau / YAW_BINS as f64;
    ((yaw.rem_euclid(tau) / w).round() as usize) % YAW_BINS
}

pub fn bin_to_yaw(bin: usize) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut y = bin as f64 * tau / YAW_BINS as f64;
    if y >= std::f64::consts::PI {
        y -= tau;
    }
    y
}

/// Dense 3D training targets: an objectness heatmap with a Gaussian per
/// label, regression targets at each peak, and a valid mask that ignores
/// everything farther than `3·max(l,h,w)` from every label centroid.
#[derive(Debug, Clone)]
pub struct SupervisionTargets3D {
    pub spec: GridSpec,
    pub objectness: Vec<f32>,
    pub valid: Vec<bool>,
    pub peaks: Vec<PeakTarget>,
}

pub fn make_supervision_3d(labels: &[PseudoLabel], spec: GridSpec) -> SupervisionTargets3D {
    let n = spec.voxel_count();
    let mut objectness = vec![0.0f32; n];
    let mut valid = vec![false; n];
    let mut peaks = Vec::new();

    let min_h_edge = spec.voxel_size[0].min(spec.voxel_size[2]);
    for label in labels {
        let b = &label.box3d;
        let center = b.center_v();
        let Some((cx, cy, cz)) = spec.voxel_of(&center) else {
            continue;
        };
        let vc = spec.center_of(cx, cy, cz);
        peaks.push(PeakTarget {
            voxel: (cx, cy, cz),
            size: b.size,
            offset: [
                (center.x - vc.x) / spec.voxel_size[0],
                (center.y - vc.y) / spec.voxel_size[1],
                (center.z - vc.z) / spec.voxel_size[2],
            ],
            yaw_bin: yaw_to_bin(b.yaw),
        });

        let sigma = (b.size[0].min(b.size[2]) / (4.0 * min_h_edge)).max(1.0);
        let reach = (3.0 * sigma).ceil() as i64;
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (x, y, z) = (cx as i64 + dx, cy as i64 + dy, cz as i64 + dz);
                    if x < 0
                        || y < 0
                        || z < 0
                        || x >= spec.dims[0] as i64
                        || y >= spec.dims[1] as i64
                        || z >= spec.dims[2] as i64
                    {
                        continue;
                    }
                    let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                    let g = (-d2 / (2.0 * sigma * sigma)).exp() as f32;
                    let i = spec.linear(x as usize, y as usize, z as usize);
                    objectness[i] = objectness[i].max(g);
                }
            }
        }
        let i = spec.linear(cx, cy, cz);
        objectness[i] = 1.0;
    }

    // Valid region: within r = 3·max(l,h,w) of at least one label centroid.
    if !labels.is_empty() {
        let radii: Vec<(nalgebra::Vector3<f64>, f64)> = labels
            .iter()
            .map(|l| {
                let r = 3.0 * l.box3d.size.iter().cloned().fold(f64::MIN, f64::max);
                (l.box3d.center_v(), r)
            })
            .collect();
        for iz in 0..spec.dims[2] {
            for iy in 0..spec.dims[1] {
                for ix in 0..spec.dims[0] {
                    let c = spec.center_of(ix, iy, iz);
                    if radii.iter().any(|(p, r)| (c - p).norm() <= *r) {
                        valid[spec.linear(ix, iy, iz)] = true;
                    }
                }
            }
        }
    }

    SupervisionTargets3D {
        spec,
        objectness,
        valid,
        peaks,
    }
}
