use nalgebra::Vector3;

use super::{ransac_rigid, EgoError, Flow3D, RansacConfig};
use crate::geom::{GridSpec, PointCloud, RigidTransform, VoxelGrid};

/// Outcome of a forward/backward egomotion estimation with its cycle check.
#[derive(Debug, Clone)]
pub struct EgomotionEstimate {
    pub t_fw: RigidTransform,
    pub t_bw: RigidTransform,
    /// Max round-trip displacement over the checked cloud (meters).
    pub cycle_error: f64,
    pub accepted: bool,
    pub inlier_count: usize,
}

/// Composes the forward and backward estimates over `x0` and measures the
/// maximum departure from identity. Accepted iff below `threshold` meters.
pub fn check_egomotion_cycle(
    t_fw: &RigidTransform,
    t_bw: &RigidTransform,
    x0: &PointCloud,
    threshold: f64,
) -> Result<(f64, bool), EgoError> {
    if x0.is_empty() {
        return Err(EgoError::EmptyCloud);
    }
    let round = t_bw.compose(t_fw);
    let error = x0
        .points
        .iter()
        .map(|p| (round.apply(p) - p).norm())
        .fold(0.0f64, f64::max);
    Ok((error, error < threshold))
}

/// Runs independent RANSAC estimates on the forward and backward flows and
/// certifies them against each other over the forward cloud.
pub fn estimate_egomotion(
    fw_flows: &[Flow3D],
    bw_flows: &[Flow3D],
    cfg: &RansacConfig,
    cycle_threshold: f64,
) -> Result<EgomotionEstimate, EgoError> {
    let (t_fw, inliers_fw) = ransac_rigid(fw_flows, cfg)?;
    let bw_cfg = RansacConfig {
        seed: cfg.seed.wrapping_add(0x5D1F),
        ..*cfg
    };
    let (t_bw, _) = ransac_rigid(bw_flows, &bw_cfg)?;
    let x0 = PointCloud::new(fw_flows.iter().map(|f| f.x0).collect());
    let (cycle_error, accepted) = check_egomotion_cycle(&t_fw, &t_bw, &x0, cycle_threshold)?;
    Ok(EgomotionEstimate {
        t_fw,
        t_bw,
        cycle_error,
        accepted,
        inlier_count: inliers_fw.len(),
    })
}

/// The egomotion-stabilized 3D motion field: per-correspondence residual
/// displacement anchored at the source point.
#[derive(Debug, Clone, Default)]
pub struct MotionField {
    pub anchors: Vec<Vector3<f64>>,
    pub deltas: Vec<Vector3<f64>>,
}

impl MotionField {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Rasterizes |Δx| onto a grid, keeping the max magnitude per voxel.
    pub fn magnitude_grid(&self, spec: GridSpec) -> VoxelGrid {
        let mut grid = VoxelGrid::zeros(spec, 1);
        for (a, d) in self.anchors.iter().zip(&self.deltas) {
            if let Some((ix, iy, iz)) = spec.voxel_of(a) {
                let m = d.norm() as f32;
                if m > grid.get(ix, iy, iz) {
                    grid.set(ix, iy, iz, m);
                }
            }
        }
        grid
    }
}

/// Subtracts the camera's contribution from each lifted correspondence:
/// `Δx = x1 − T_fw(x0)`.
pub fn motion_field(flows: &[Flow3D], t_fw: &RigidTransform) -> MotionField {
    let mut anchors = Vec::with_capacity(flows.len());
    let mut deltas = Vec::with_capacity(flows.len());
    for f in flows {
        anchors.push(f.x0);
        deltas.push(f.x1 - t_fw.apply(&f.x0));
    }
    MotionField { anchors, deltas }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn cloud() -> PointCloud {
        PointCloud::new(vec![
            Vector3::new(0.0, 0.0, 5.0),
            Vector3::new(2.0, -1.0, 7.0),
            Vector3::new(-3.0, 0.5, 4.0),
        ])
    }

    #[test]
    fn exact_inverse_accepted() {
        let t_fw = RigidTransform::new(
            crate::geom::transform::yaw_matrix(0.05),
            Vector3::new(0.2, 0.0, -0.1),
        );
        let t_bw = t_fw.inverse();
        let (err, ok) = check_egomotion_cycle(&t_fw, &t_bw, &cloud(), 0.25).unwrap();
        assert!(err < 1e-12);
        assert!(ok);
    }

    #[test]
    fn one_meter_offset_rejected() {
        let t_fw = RigidTransform::from_translation(Vector3::new(0.3, 0.0, 0.0));
        let t_bw = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0)).compose(&t_fw.inverse());
        let (err, ok) = check_egomotion_cycle(&t_fw, &t_bw, &cloud(), 0.25).unwrap();
        assert!((err - 1.0).abs() < 1e-12, "err {err}");
        assert!(!ok);
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let id = RigidTransform::identity();
        assert!(matches!(
            check_egomotion_cycle(&id, &id, &PointCloud::default(), 0.25),
            Err(EgoError::EmptyCloud)
        ));
    }

    #[test]
    fn identity_egomotion_static_scene_zero_field() {
        let flows: Vec<Flow3D> = cloud()
            .points
            .iter()
            .map(|p| Flow3D {
                x0: *p,
                x1: *p,
                pixel: (0, 0),
            })
            .collect();
        let field = motion_field(&flows, &RigidTransform::identity());
        assert!(field.deltas.iter().all(|d| d.norm() == 0.0));
    }

    #[test]
    fn moving_object_shows_residual_magnitude() {
        let t_fw = RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -0.2));
        let p = Vector3::new(1.0, 0.0, 6.0);
        let object_motion = Vector3::new(0.5, 0.0, 0.0);
        let flows = vec![Flow3D {
            x0: p,
            x1: t_fw.apply(&(p + object_motion)),
            pixel: (0, 0),
        }];
        let field = motion_field(&flows, &t_fw);
        assert!((field.deltas[0].norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn magnitude_grid_takes_max_per_voxel() {
        let spec = GridSpec {
            origin: [0.0, 0.0, 0.0],
            voxel_size: [1.0, 1.0, 1.0],
            dims: [2, 2, 2],
        };
        let field = MotionField {
            anchors: vec![Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.4, 0.5, 0.5)],
            deltas: vec![Vector3::new(0.3, 0.0, 0.0), Vector3::new(0.7, 0.0, 0.0)],
        };
        let g = field.magnitude_grid(spec);
        assert!((g.get(0, 0, 0) - 0.7).abs() < 1e-6);
    }
}
