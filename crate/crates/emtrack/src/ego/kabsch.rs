use nalgebra::{Matrix3, Vector3};

use super::EgoError;
use crate::geom::RigidTransform;

/// Least-squares rigid alignment: finds (R, t) minimizing
/// `Σ ‖R·src[i] + t − dst[i]‖²` in closed form via SVD of the
/// cross-covariance, with the determinant correction that keeps R a proper
/// rotation.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform, EgoError> {
    if src.len() < 3 {
        return Err(EgoError::TooFewCorrespondences(src.len()));
    }
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| EgoError::Degenerate("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| EgoError::Degenerate("SVD failed".into()))?;

    // Collinear points leave the rotation about the line unconstrained.
    if svd.singular_values[1] <= svd.singular_values[0].max(1e-300) * 1e-9 {
        return Err(EgoError::Degenerate(
            "rank-deficient cross-covariance (collinear points)".into(),
        ));
    }

    let d = (u * v_t).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let rotation = u * correction * v_t;
    let translation = mu_d - rotation * mu_s;
    Ok(RigidTransform::new(rotation, translation))
}
