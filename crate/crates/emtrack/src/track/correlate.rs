use thiserror::Error;

use crate::detect::FeatureStack3D;

#[derive(Debug, Error)]
pub enum CorrelateError {
    #[error("zero-variance template")]
    DegenerateTemplate,
}

/// Copies a voxel window (all channels, zero padding outside the grid) into
/// a standalone feature crop anchored at `lo` with extent `dims`.
pub fn extract_crop(scene: &FeatureStack3D, lo: [i64; 3], dims: [usize; 3]) -> Vec<f64> {
    let spec = scene.spec;
    let vol_scene = spec.voxel_count();
    let channels = scene.data.len() / vol_scene;
    let vol = dims[0] * dims[1] * dims[2];
    let mut out = vec![0.0; channels * vol];
    for c in 0..channels {
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let (sx, sy, sz) = (lo[0] + x as i64, lo[1] + y as i64, lo[2] + z as i64);
                    if sx < 0
                        || sy < 0
                        || sz < 0
                        || sx >= spec.dims[0] as i64
                        || sy >= spec.dims[1] as i64
                        || sz >= spec.dims[2] as i64
                    {
                        continue;
                    }
                    out[c * vol + (z * dims[1] + y) * dims[0] + x] =
                        scene.data[c * vol_scene + spec.linear(sx as usize, sy as usize, sz as usize)];
                }
            }
        }
    }
    out
}

/// Normalized cross-correlation of a rigid multi-channel template against a
/// scene feature grid over all integer voxel offsets in the search window.
///
/// Returns the best offset (voxels, relative to `center`) and its NCC score
/// in [-1, 1]. No rotation search. Ties keep the first offset in scan order.
pub fn correlate_template(
    template: &[f64],
    template_dims: [usize; 3],
    scene: &FeatureStack3D,
    center: [i64; 3],
    search_radius: [i64; 3],
) -> Result<([i64; 3], f64), CorrelateError> {
    let t_vol = template_dims[0] * template_dims[1] * template_dims[2];
    let channels = template.len() / t_vol;
    let t_mean: f64 = template.iter().sum::<f64>() / template.len() as f64;
    let t_centered: Vec<f64> = template.iter().map(|v| v - t_mean).collect();
    let t_norm = t_centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t_norm < 1e-12 {
        return Err(CorrelateError::DegenerateTemplate);
    }

    // Template anchor: window such that `center + offset` is its middle.
    let half = [
        template_dims[0] as i64 / 2,
        template_dims[1] as i64 / 2,
        template_dims[2] as i64 / 2,
    ];
    let mut best_score = f64::NEG_INFINITY;
    let mut best_offset = [0i64; 3];
    for dz in -search_radius[2]..=search_radius[2] {
        for dy in -search_radius[1]..=search_radius[1] {
            for dx in -search_radius[0]..=search_radius[0] {
                let lo = [
                    center[0] + dx - half[0],
                    center[1] + dy - half[1],
                    center[2] + dz - half[2],
                ];
                let window = extract_crop(scene, lo, template_dims);
                let w_mean: f64 = window.iter().sum::<f64>() / window.len() as f64;
                let mut dot = 0.0;
                let mut norm2 = 0.0;
                for (w, t) in window.iter().zip(&t_centered) {
                    let wc = w - w_mean;
                    dot += wc * t;
                    norm2 += wc * wc;
                }
                if norm2 < 1e-24 {
                    continue;
                }
                let score = dot / (norm2.sqrt() * t_norm);
                if score > best_score {
                    best_score = score;
                    best_offset = [dx, dy, dz];
                }
            }
        }
    }
    let _ = channels;
    if best_score == f64::NEG_INFINITY {
        // Every window was flat; report a confident nothing.
        return Ok(([0, 0, 0], 0.0));
    }
    Ok((best_offset, best_score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::GridSpec;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scene_with_pattern(seed: u64, at: [usize; 3]) -> FeatureStack3D {
        let spec = GridSpec {
            origin: [0.0, 0.0, 0.0],
            voxel_size: [0.25, 0.25, 0.25],
            dims: [20, 10, 20],
        };
        let vol = spec.voxel_count();
        let mut data = vec![0.0; 2 * vol];
        let mut rng = StdRng::seed_from_u64(seed);
        // Distinct random blob.
        for dz in 0..3 {
            for dy in 0..3 {
                for dx in 0..3 {
                    let i = spec.linear(at[0] + dx, at[1] + dy, at[2] + dz);
                    data[i] = rng.gen_range(0.5..1.0);
                    data[vol + i] = rng.gen_range(0.0..0.5);
                }
            }
        }
        FeatureStack3D { spec, data }
    }

    #[test]
    fn template_embedded_in_zeros_recovered_exactly() {
        let scene = scene_with_pattern(1, [8, 4, 8]);
        let tdims = [5, 5, 5];
        let template = extract_crop(&scene, [9 - 2, 5 - 2, 9 - 2], tdims);
        let (offset, score) = correlate_template(
            &template,
            tdims,
            &scene,
            [6, 3, 11], // deliberately wrong center
            [6, 3, 6],
        )
        .unwrap();
        assert_eq!(offset, [3, 2, -2]);
        assert!(score > 1.0 - 1e-9, "score {score}");
    }

    #[test]
    fn ncc_invariant_to_affine_brightness() {
        let scene = scene_with_pattern(2, [10, 4, 10]);
        let tdims = [5, 5, 5];
        let template = extract_crop(&scene, [9, 3, 9], tdims);
        let (o1, s1) =
            correlate_template(&template, tdims, &scene, [11, 5, 11], [4, 2, 4]).unwrap();
        let mut scaled = scene;
        for v in scaled.data.iter_mut() {
            *v = 2.5 * *v + 0.7;
        }
        let (o2, s2) =
            correlate_template(&template, tdims, &scaled, [11, 5, 11], [4, 2, 4]).unwrap();
        assert_eq!(o1, o2);
        assert!((s1 - s2).abs() < 1e-6, "{s1} vs {s2}");
    }

    #[test]
    fn zero_variance_template_rejected() {
        let scene = scene_with_pattern(3, [5, 2, 5]);
        let template = vec![0.4; 2 * 27];
        assert!(matches!(
            correlate_template(&template, [3, 3, 3], &scene, [10, 5, 10], [2, 2, 2]),
            Err(CorrelateError::DegenerateTemplate)
        ));
    }

    #[test]
    fn pure_noise_scene_scores_below_handoff() {
        let spec = GridSpec {
            origin: [0.0, 0.0, 0.0],
            voxel_size: [0.25, 0.25, 0.25],
            dims: [16, 8, 16],
        };
        let mut rng = StdRng::seed_from_u64(9);
        let vol = spec.voxel_count();
        let noise: Vec<f64> = (0..2 * vol).map(|_| rng.gen_range(0.0..0.1)).collect();
        let scene = FeatureStack3D { spec, data: noise };
        // A structured template unrelated to the noise.
        let mut template = vec![0.0; 2 * 125];
        for (i, t) in template.iter_mut().enumerate() {
            *t = if i % 9 == 0 { 1.0 } else { 0.0 };
        }
        let (_, score) =
            correlate_template(&template, [5, 5, 5], &scene, [8, 4, 8], [4, 2, 4]).unwrap();
        assert!(score < 0.5, "noise score {score}");
    }
}
