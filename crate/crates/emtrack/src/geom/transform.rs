use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// An SE(3) rigid motion: `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation about the vertical (+y) axis by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        Self {
            rotation: yaw_matrix(yaw),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Frobenius departure from orthonormality, `‖RᵀR − I‖`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Rotation angle in radians (geodesic distance from the identity).
    pub fn rotation_angle(&self) -> f64 {
        let trace = self.rotation.trace();
        ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn is_valid(&self) -> bool {
        self.orthonormality_error() < 1e-9 && (self.rotation.determinant() - 1.0).abs() < 1e-9
    }
}

/// Right-handed rotation about +y: maps +x toward −z for positive yaw.
pub fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// A set of 3D points in a camera frame, optionally tagged with the source
/// pixel each point was unprojected from.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub pixels: Option<Vec<(u32, u32)>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            pixels: None,
        }
    }

    pub fn with_pixels(points: Vec<Vector3<f64>>, pixels: Vec<(u32, u32)>) -> Self {
        debug_assert_eq!(points.len(), pixels.len());
        Self {
            points,
            pixels: Some(pixels),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            pixels: self.pixels.clone(),
        }
    }
}

/// Maps every point through `t`.
pub fn apply_transform(t: &RigidTransform, pc: &PointCloud) -> PointCloud {
    pc.transformed(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_rotation(rng: &mut StdRng) -> Matrix3<f64> {
        // Rotation from a random axis-angle.
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let angle: f64 = rng.gen_range(-3.0..3.0);
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    #[test]
    fn identity_leaves_points_unchanged() {
        let pc = PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0)]);
        let out = apply_transform(&RigidTransform::identity(), &pc);
        assert_eq!(out.points[0], pc.points[0]);
    }

    #[test]
    fn pure_translation_moves_origin() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let pc = PointCloud::new(vec![Vector3::zeros()]);
        assert_eq!(apply_transform(&t, &pc).points[0], Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let t = RigidTransform::new(
                random_rotation(&mut rng),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            );
            let round = t.compose(&t.inverse());
            let p = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            assert_relative_eq!(round.apply(&p), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn transforms_preserve_pairwise_distances() {
        let mut rng = StdRng::seed_from_u64(2);
        let pts: Vec<Vector3<f64>> = (0..20)
            .map(|_| Vector3::new(rng.gen_range(-5.0..5.0), rng.gen(), rng.gen_range(-5.0..5.0)))
            .collect();
        let t = RigidTransform::new(random_rotation(&mut rng), Vector3::new(0.3, -1.0, 2.0));
        let out = apply_transform(&t, &PointCloud::new(pts.clone()));
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d0 = (pts[i] - pts[j]).norm();
                let d1 = (out.points[i] - out.points[j]).norm();
                assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
            }
        }
    }

    #[test]
    fn yaw_matrix_is_rotation() {
        for &yaw in &[-3.0, -0.5, 0.0, 0.7, 2.9] {
            let t = RigidTransform::from_yaw(yaw);
            assert!(t.is_valid());
            assert_relative_eq!(t.rotation_angle(), yaw.abs(), epsilon = 1e-12);
        }
    }
}
