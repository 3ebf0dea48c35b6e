use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::tracker::Tracklet;
use super::TrackError;
use crate::flow::FlowField;
use crate::geom::transform::yaw_matrix;
use crate::geom::{Box2D, Intrinsics, VoxelGrid};

/// A spatiotemporal objectness/visibility volume: one grid per timestep,
/// values in [0, 1]. Trajectories are scored by sampling it.
#[derive(Debug, Clone)]
pub struct CostVolume {
    pub grids: Vec<VoxelGrid>,
}

/// Per-timestep cost slice `p = min(unproj(s)·o + (1 − v), 1)`: a location
/// is traversable when both objectness cues agree on it or when it is
/// occluded.
pub fn build_cost_volume(
    seg_unproj: &[VoxelGrid],
    det_heat: &[VoxelGrid],
    visibility: &[VoxelGrid],
) -> CostVolume {
    assert_eq!(seg_unproj.len(), det_heat.len());
    assert_eq!(seg_unproj.len(), visibility.len());
    let grids = seg_unproj
        .iter()
        .zip(det_heat)
        .zip(visibility)
        .map(|((s, o), v)| {
            let mut g = VoxelGrid::zeros(s.spec, 1);
            for i in 0..g.values.len() {
                let p = s.values[i] as f64 * o.values[i] as f64 + (1.0 - v.values[i] as f64);
                g.values[i] = p.clamp(0.0, 1.0) as f32;
            }
            g
        })
        .collect();
    CostVolume { grids }
}

/// A motion prior: normalized displacement sequences from verified
/// tracklets. Entries start at the origin with the first displacement
/// rotated to +x and unit length.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectoryLibrary {
    pub entries: Vec<Vec<[f64; 3]>>,
}

fn plane_angle(v: &Vector3<f64>) -> f64 {
    v.z.atan2(v.x)
}

/// Normalizes a displacement sequence: rotates about the vertical so the
/// first displacement's ground direction is +x, scales by its magnitude.
/// None when the initial motion is degenerate.
pub fn normalize_trajectory(displacements: &[Vector3<f64>]) -> Option<Vec<Vector3<f64>>> {
    let d0 = displacements.first()?;
    let speed = d0.norm();
    if speed < 1e-9 || (d0.x * d0.x + d0.z * d0.z).sqrt() < 1e-9 {
        return None;
    }
    let rot = yaw_matrix(plane_angle(d0));
    Some(displacements.iter().map(|d| rot * d / speed).collect())
}

/// Inverse of normalization: rotates a normalized entry so +x lands on the
/// given initial motion's ground direction and scales by its magnitude.
pub fn orient_trajectory(entry: &[Vector3<f64>], initial: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let rot = yaw_matrix(-plane_angle(initial));
    let speed = initial.norm();
    entry.iter().map(|d| rot * d * speed).collect()
}

impl TrajectoryLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> Vec<Vector3<f64>> {
        self.entries[i]
            .iter()
            .map(|d| Vector3::new(d[0], d[1], d[2]))
            .collect()
    }

    /// Adds a verified tracklet's center displacements. Returns false when
    /// the tracklet is too short or its initial motion is degenerate.
    pub fn add_tracklet(&mut self, tr: &Tracklet) -> bool {
        let mut disps = Vec::new();
        for pair in tr.steps.windows(2) {
            if pair[1].frame != pair[0].frame + 1 {
                return false;
            }
            disps.push(pair[1].box3d.center_v() - pair[0].box3d.center_v());
        }
        match normalize_trajectory(&disps) {
            Some(n) => {
                self.entries.push(n.iter().map(|d| [d.x, d.y, d.z]).collect());
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Mean 2D flow residual gate (pixels).
    pub flow_gate_px: f64,
    /// Mean cost-volume sample threshold.
    pub cost_threshold: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            flow_gate_px: 2.0,
            cost_threshold: 0.99,
        }
    }
}

/// Checks that a tracklet (1) obeys the flow field and (2) travels through
/// object-like or invisible territory, at the stringent threshold that
/// guards library membership. Tracklets shorter than 3 steps are not
/// eligible.
pub fn verify_tracklet(
    tr: &Tracklet,
    flows: &[Option<&FlowField>],
    cost: &CostVolume,
    intr: &Intrinsics,
    cfg: &VerifyConfig,
) -> bool {
    if tr.steps.len() < 3 {
        return false;
    }
    // Cost agreement: mean sampled traversability along the trajectory.
    let mut cost_acc = 0.0;
    for step in &tr.steps {
        let Some(grid) = cost.grids.get(step.frame) else {
            return false;
        };
        cost_acc += grid.trilinear_sample(&step.box3d.center_v());
    }
    if cost_acc / (tr.steps.len() as f64) < cfg.cost_threshold {
        return false;
    }

    // Flow agreement: projected box motion vs. mean 2D flow in the box.
    let mut res_acc = 0.0;
    let mut pairs = 0usize;
    for pair in tr.steps.windows(2) {
        if pair[1].frame != pair[0].frame + 1 {
            continue;
        }
        let Some(Some(flow)) = flows.get(pair[0].frame) else {
            continue;
        };
        let Some((u0, v0, _)) = intr.project_point(&pair[0].box3d.center_v()) else {
            continue;
        };
        let Some((u1, v1, _)) = intr.project_point(&pair[1].box3d.center_v()) else {
            continue;
        };
        let Some(bb) = Box2D::from_projected(&pair[0].box3d, intr, 1.0) else {
            continue;
        };
        let (mut fu, mut fv, mut n) = (0.0f64, 0.0f64, 0usize);
        let (x0, x1) = (bb.xmin.max(0.0) as u32, (bb.xmax.min(intr.width as f64 - 1.0)) as u32);
        let (y0, y1) = (bb.ymin.max(0.0) as u32, (bb.ymax.min(intr.height as f64 - 1.0)) as u32);
        for v in y0..=y1 {
            for u in x0..=x1 {
                let (du, dv) = flow.get(u, v);
                fu += du as f64;
                fv += dv as f64;
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let residual = ((u1 - u0 - fu / n as f64).powi(2) + (v1 - v0 - fv / n as f64).powi(2)).sqrt();
        res_acc += residual;
        pairs += 1;
    }
    if pairs == 0 {
        return false;
    }
    res_acc / (pairs as f64) < cfg.flow_gate_px
}

/// Evaluates every library path oriented to the object's initial motion and
/// returns the most likely one: positions in the last-seen frame's
/// coordinates plus the mean sampled likelihood. `sample(k, p)` scores
/// position p at the k-th predicted step; the caller handles any camera
/// transport. Entries shorter than the horizon hold their final
/// displacement; longer ones are truncated. Zero initial motion falls back
/// to the stay-in-place hypothesis.
pub fn library_link(
    initial_motion: &Vector3<f64>,
    last_pos: &Vector3<f64>,
    lib: &TrajectoryLibrary,
    horizon: usize,
    sample: impl Fn(usize, &Vector3<f64>) -> f64,
) -> Result<(Vec<Vector3<f64>>, f64), TrackError> {
    if lib.is_empty() {
        return Err(TrackError::EmptyLibrary);
    }
    if horizon == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let hmag = (initial_motion.x.powi(2) + initial_motion.z.powi(2)).sqrt();
    if initial_motion.norm() < 1e-9 || hmag < 1e-9 {
        let positions = vec![*last_pos; horizon];
        let lik = positions
            .iter()
            .enumerate()
            .map(|(k, p)| sample(k, p))
            .sum::<f64>()
            / horizon as f64;
        return Ok((positions, lik));
    }

    let mut best: Option<(Vec<Vector3<f64>>, f64)> = None;
    for i in 0..lib.len() {
        let oriented = orient_trajectory(&lib.entry(i), initial_motion);
        let mut positions = Vec::with_capacity(horizon);
        let mut p = *last_pos;
        for k in 0..horizon {
            let d = oriented[k.min(oriented.len() - 1)];
            p += d;
            positions.push(p);
        }
        let lik = positions
            .iter()
            .enumerate()
            .map(|(k, q)| sample(k, q))
            .sum::<f64>()
            / horizon as f64;
        if best.as_ref().is_none_or(|(_, b)| lik > *b) {
            best = Some((positions, lik));
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::GridSpec;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cost_volume_hand_cases() {
        let spec = GridSpec {
            origin: [0.0; 3],
            voxel_size: [1.0; 3],
            dims: [2, 2, 2],
        };
        let mk = |v: f32| VoxelGrid::filled(spec, 1, v);
        // Visible and object-like: s·o = 1, v = 1 -> p = 1.
        let cv = build_cost_volume(&[mk(1.0)], &[mk(1.0)], &[mk(1.0)]);
        assert_eq!(cv.grids[0].values[0], 1.0);
        // Occluded with no objectness: p = 1.
        let cv = build_cost_volume(&[mk(0.0)], &[mk(0.0)], &[mk(0.0)]);
        assert_eq!(cv.grids[0].values[0], 1.0);
        // Visible but not object-like: forbidden.
        let cv = build_cost_volume(&[mk(0.0)], &[mk(0.0)], &[mk(1.0)]);
        assert_eq!(cv.grids[0].values[0], 0.0);
        // Clamp: everything strong stays at 1.
        let cv = build_cost_volume(&[mk(1.0)], &[mk(1.0)], &[mk(0.0)]);
        assert_eq!(cv.grids[0].values[0], 1.0);
    }

    #[test]
    fn normalization_round_trip() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let disps: Vec<Vector3<f64>> = (0..6)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.5..0.5),
                    )
                })
                .collect();
            let Some(norm) = normalize_trajectory(&disps) else {
                continue;
            };
            // First displacement: unit length, +x direction in the plane.
            assert!((norm[0].norm() - 1.0).abs() < 1e-9);
            assert!(norm[0].z.abs() < 1e-9);
            assert!(norm[0].x > 0.0);
            // orient(normalize(d), d0) reproduces the original sequence.
            let back = orient_trajectory(&norm, &disps[0]);
            for (a, b) in back.iter().zip(&disps) {
                assert!((a - b).norm() < 1e-9);
            }
            // normalize(orient(entry, any d)) == entry.
            let d = Vector3::new(rng.gen_range(0.1..1.0), 0.02, rng.gen_range(-1.0..1.0));
            let oriented = orient_trajectory(&norm, &d);
            let renorm = normalize_trajectory(&oriented).unwrap();
            for (a, b) in renorm.iter().zip(&norm) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_initial_motion_rejected_by_normalize() {
        assert!(normalize_trajectory(&[Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]).is_none());
        assert!(normalize_trajectory(&[]).is_none());
    }

    #[test]
    fn empty_library_is_an_error() {
        let lib = TrajectoryLibrary::default();
        let r = library_link(
            &Vector3::new(0.3, 0.0, 0.0),
            &Vector3::zeros(),
            &lib,
            4,
            |_, _| 1.0,
        );
        assert!(matches!(r, Err(TrackError::EmptyLibrary)));
    }

    #[test]
    fn link_prefers_the_planted_turn() {
        // Library: a straight line and a right turn. The sampler rewards
        // the turn's positions.
        let mut lib = TrajectoryLibrary::default();
        let straight: Vec<Vector3<f64>> = (0..6).map(|_| Vector3::new(0.4, 0.0, 0.0)).collect();
        let mut turn = Vec::new();
        for k in 0..6 {
            let a = 0.3 * k as f64;
            turn.push(Vector3::new(0.4 * a.cos(), 0.0, 0.4 * a.sin()));
        }
        lib.entries.push(
            normalize_trajectory(&straight)
                .unwrap()
                .iter()
                .map(|d| [d.x, d.y, d.z])
                .collect(),
        );
        lib.entries.push(
            normalize_trajectory(&turn)
                .unwrap()
                .iter()
                .map(|d| [d.x, d.y, d.z])
                .collect(),
        );
        let init = Vector3::new(0.4, 0.0, 0.0);
        let start = Vector3::new(1.0, 0.0, 1.0);
        // Ground truth follows the turn.
        let gt_positions: Vec<Vector3<f64>> = {
            let oriented = orient_trajectory(
                &lib.entry(1),
                &init,
            );
            let mut p = start;
            oriented.iter().map(|d| { p += d; p }).collect()
        };
        let (positions, lik) = library_link(&init, &start, &lib, 6, |k, p| {
            let d = (p - gt_positions[k]).norm();
            (1.0 - d).max(0.0)
        })
        .unwrap();
        assert!(lik > 0.99);
        for (p, g) in positions.iter().zip(&gt_positions) {
            assert!((p - g).norm() < 1e-9);
        }
    }

    #[test]
    fn short_entries_hold_final_displacement() {
        let mut lib = TrajectoryLibrary::default();
        lib.entries.push(vec![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let (positions, _) = library_link(
            &Vector3::new(0.5, 0.0, 0.0),
            &Vector3::zeros(),
            &lib,
            5,
            |_, _| 1.0,
        )
        .unwrap();
        assert_eq!(positions.len(), 5);
        assert!((positions[4] - Vector3::new(2.5, 0.0, 0.0)).norm() < 1e-9);
    }
}
