use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Region;
use crate::ego::MotionField;
use crate::geom::GridSpec;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("region has no motion samples")]
    EmptyCenter,
    #[error("surround shell has no motion samples")]
    EmptySurround,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyConfig {
    /// Motion magnitude threshold marking "moving" voxels (meters).
    pub motion_threshold: f64,
    /// Bins per velocity axis.
    pub hist_bins: usize,
    /// Velocity histogram range, ±meters per axis.
    pub hist_range: f64,
    /// Chi-square acceptance threshold.
    pub chi2_threshold: f64,
    /// Surround shell width in voxels (Chebyshev).
    pub shell_width: usize,
    /// Minimum voxels per region.
    pub min_region_voxels: usize,
    /// Minimum member points for a proposal.
    pub min_region_points: usize,
    /// Minimum second-smallest box extent (meters); rejects line- and
    /// sheet-shaped ghost regions.
    pub min_box_extent: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            motion_threshold: 0.25,
            hist_bins: 8,
            hist_range: 1.0,
            chi2_threshold: 0.5,
            shell_width: 3,
            min_region_voxels: 4,
            min_region_points: 12,
            min_box_extent: 0.08,
        }
    }
}

/// Joint per-axis-binned velocity histogram, normalized to sum 1.
/// A distribution over bins³ cells keeps the chi-square distance in [0, 1]
/// and makes single-axis motion fully separable from rest.
fn histogram(deltas: &[nalgebra::Vector3<f64>], bins: usize, range: f64) -> Vec<f64> {
    let mut h = vec![0.0f64; bins * bins * bins];
    for d in deltas {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((d[a] + range) / (2.0 * range) * bins as f64).floor();
            idx[a] = (f.max(0.0) as usize).min(bins - 1);
        }
        h[(idx[2] * bins + idx[1]) * bins + idx[0]] += 1.0;
    }
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        for v in h.iter_mut() {
            *v /= total;
        }
    }
    h
}

/// Symmetric chi-square distance `½ Σ (p−q)² / (p+q+ε)`, in [0, 1] for
/// normalized histograms; 0 iff identical.
fn chi_square(p: &[f64], q: &[f64]) -> f64 {
    const EPS: f64 = 1e-9;
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b).powi(2) / (a + b + EPS))
        .sum::<f64>()
        / 2.0
}

/// Center-surround motion saliency of a region: chi-square distance between
/// the velocity histograms of the region's interior and its surrounding
/// shell.
pub fn center_surround(
    region: &Region,
    field: &MotionField,
    spec: GridSpec,
    cfg: &SaliencyConfig,
) -> Result<f64, SaliencyError> {
    let region_set: HashSet<(usize, usize, usize)> = region.voxels.iter().cloned().collect();
    let shell: HashSet<(usize, usize, usize)> = region
        .voxels
        .iter()
        .flat_map(|&(x, y, z)| {
            let w = cfg.shell_width as i64;
            let mut cells = Vec::new();
            for dz in -w..=w {
                for dy in -w..=w {
                    for dx in -w..=w {
                        let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if nx >= 0
                            && ny >= 0
                            && nz >= 0
                            && (nx as usize) < spec.dims[0]
                            && (ny as usize) < spec.dims[1]
                            && (nz as usize) < spec.dims[2]
                        {
                            cells.push((nx as usize, ny as usize, nz as usize));
                        }
                    }
                }
            }
            cells
        })
        .filter(|c| !region_set.contains(c))
        .collect();

    let mut center_deltas = Vec::new();
    let mut surround_deltas = Vec::new();
    for (a, d) in field.anchors.iter().zip(&field.deltas) {
        if let Some(v) = spec.voxel_of(a) {
            if region_set.contains(&v) {
                center_deltas.push(*d);
            } else if shell.contains(&v) {
                surround_deltas.push(*d);
            }
        }
    }
    if center_deltas.is_empty() {
        return Err(SaliencyError::EmptyCenter);
    }
    if surround_deltas.is_empty() {
        return Err(SaliencyError::EmptySurround);
    }
    let hc = histogram(&center_deltas, cfg.hist_bins, cfg.hist_range);
    let hs = histogram(&surround_deltas, cfg.hist_bins, cfg.hist_range);
    Ok(chi_square(&hc, &hs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Box3D;
    use nalgebra::Vector3;

    fn spec() -> GridSpec {
        GridSpec {
            origin: [0.0, 0.0, 0.0],
            voxel_size: [0.5, 0.5, 0.5],
            dims: [12, 6, 12],
        }
    }

    fn region(voxels: Vec<(usize, usize, usize)>) -> Region {
        Region {
            voxels,
            points: Vec::new(),
            bounds: Box3D::new([0.0; 3], [1.0; 3], 0.0, 1.0),
        }
    }

    fn field_with(
        center_cells: &[(usize, usize, usize)],
        center_delta: Vector3<f64>,
        shell_cells: &[(usize, usize, usize)],
        shell_delta: Vector3<f64>,
    ) -> MotionField {
        let s = spec();
        let mut anchors = Vec::new();
        let mut deltas = Vec::new();
        for &(x, y, z) in center_cells {
            anchors.push(s.center_of(x, y, z));
            deltas.push(center_delta);
        }
        for &(x, y, z) in shell_cells {
            anchors.push(s.center_of(x, y, z));
            deltas.push(shell_delta);
        }
        MotionField { anchors, deltas }
    }

    #[test]
    fn identical_distributions_score_zero() {
        let r = region(vec![(5, 2, 5), (6, 2, 5)]);
        let f = field_with(
            &[(5, 2, 5), (6, 2, 5)],
            Vector3::new(0.4, 0.0, 0.0),
            &[(3, 2, 5), (8, 2, 5)],
            Vector3::new(0.4, 0.0, 0.0),
        );
        let score = center_surround(&r, &f, spec(), &SaliencyConfig::default()).unwrap();
        assert!(score.abs() < 1e-12);
    }

    #[test]
    fn moving_center_static_surround_is_maximal() {
        let r = region(vec![(5, 2, 5), (6, 2, 5)]);
        let f = field_with(
            &[(5, 2, 5), (6, 2, 5)],
            Vector3::new(1.0, 0.0, 0.0),
            &[(3, 2, 5), (8, 2, 5), (5, 2, 8)],
            Vector3::zeros(),
        );
        let score = center_surround(&r, &f, spec(), &SaliencyConfig::default()).unwrap();
        assert!((score - 1.0).abs() < 1e-6, "score {score}");
    }

    #[test]
    fn empty_surround_is_error() {
        let r = region(vec![(5, 2, 5)]);
        let f = field_with(&[(5, 2, 5)], Vector3::new(1.0, 0.0, 0.0), &[], Vector3::zeros());
        assert!(matches!(
            center_surround(&r, &f, spec(), &SaliencyConfig::default()),
            Err(SaliencyError::EmptySurround)
        ));
    }

    #[test]
    fn all_zero_histograms_score_zero_without_division_error() {
        let p = vec![0.0; 512];
        assert_eq!(chi_square(&p, &p), 0.0);
    }

    #[test]
    fn score_bounded_in_unit_interval() {
        let r = region(vec![(5, 2, 5)]);
        for k in 0..10 {
            let f = field_with(
                &[(5, 2, 5)],
                Vector3::new(0.2 * k as f64, -0.1, 0.05 * k as f64),
                &[(2, 2, 2), (9, 3, 9)],
                Vector3::new(0.01 * k as f64, 0.0, 0.0),
            );
            let s = center_surround(&r, &f, spec(), &SaliencyConfig::default()).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
    }
}
