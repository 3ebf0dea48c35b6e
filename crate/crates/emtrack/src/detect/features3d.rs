//! Fixed per-voxel feature stack for the 3D detection head: occupancy (1),
//! height above ground (1), local occupancy density at 2 scales (2), and
//! mean color of the points in the voxel (3) — 7 channels.

use nalgebra::Vector3;

use crate::geom::GridSpec;

pub const FEAT3D_CHANNELS: usize = 7;

/// Channel-planar voxel feature buffer, `[c][z][y][x]`, f64.
pub struct FeatureStack3D {
    pub spec: GridSpec,
    pub data: Vec<f64>,
}

/// Builds the feature stack from a colored point set. `colors` runs parallel
/// to `points`; pass an empty slice when color is unavailable.
pub fn feature_stack_3d(
    points: &[Vector3<f64>],
    colors: &[[u8; 3]],
    spec: GridSpec,
) -> FeatureStack3D {
    let vol = spec.voxel_count();
    let mut data = vec![0.0; FEAT3D_CHANNELS * vol];
    let mut color_acc = vec![[0.0f64; 3]; vol];
    let mut counts = vec![0u32; vol];

    for (k, p) in points.iter().enumerate() {
        if let Some((ix, iy, iz)) = spec.voxel_of(p) {
            let i = spec.linear(ix, iy, iz);
            data[i] = 1.0; // occupancy
            counts[i] += 1;
            if let Some(c) = colors.get(k) {
                for a in 0..3 {
                    color_acc[i][a] += c[a] as f64 / 255.0;
                }
            }
        }
    }

    // Height above the grid floor, normalized by the grid's vertical span.
    let span_y = spec.voxel_size[1] * spec.dims[1] as f64;
    for iz in 0..spec.dims[2] {
        for iy in 0..spec.dims[1] {
            for ix in 0..spec.dims[0] {
                let i = spec.linear(ix, iy, iz);
                if data[i] > 0.0 {
                    data[vol + i] = (iy as f64 + 0.5) * spec.voxel_size[1] / span_y;
                }
            }
        }
    }

    // Local occupancy density at radii 1 and 2 (mean over 3^3 and 5^3).
    for (c, radius) in [(2usize, 1i64), (3usize, 2i64)] {
        for iz in 0..spec.dims[2] as i64 {
            for iy in 0..spec.dims[1] as i64 {
                for ix in 0..spec.dims[0] as i64 {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for dz in -radius..=radius {
                        for dy in -radius..=radius {
                            for dx in -radius..=radius {
                                let (x, y, z) = (ix + dx, iy + dy, iz + dz);
                                if x >= 0
                                    && y >= 0
                                    && z >= 0
                                    && x < spec.dims[0] as i64
                                    && y < spec.dims[1] as i64
                                    && z < spec.dims[2] as i64
                                {
                                    acc += data[spec.linear(x as usize, y as usize, z as usize)];
                                    n += 1.0;
                                }
                            }
                        }
                    }
                    let i = spec.linear(ix as usize, iy as usize, iz as usize);
                    data[c * vol + i] = acc / n;
                }
            }
        }
    }

    // Mean point color per voxel, channels 4..7.
    for i in 0..vol {
        if counts[i] > 0 {
            for a in 0..3 {
                data[(4 + a) * vol + i] = color_acc[i][a] / counts[i] as f64;
            }
        }
    }

    FeatureStack3D { spec, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec {
            origin: [0.0, 0.0, 0.0],
            voxel_size: [0.5, 0.5, 0.5],
            dims: [8, 4, 8],
        }
    }

    #[test]
    fn empty_cloud_gives_zero_features() {
        let f = feature_stack_3d(&[], &[], spec());
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn occupancy_and_color_recorded() {
        let s = spec();
        let p = s.center_of(3, 2, 4);
        let f = feature_stack_3d(&[p], &[[255, 0, 0]], s);
        let vol = s.voxel_count();
        let i = s.linear(3, 2, 4);
        assert_eq!(f.data[i], 1.0);
        assert!(f.data[vol + i] > 0.0); // height
        assert!((f.data[4 * vol + i] - 1.0).abs() < 1e-12); // red
        assert_eq!(f.data[5 * vol + i], 0.0);
        // Density at radius 1 sees exactly one occupied voxel of 27.
        assert!((f.data[2 * vol + i] - 1.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let s = spec();
        let pts: Vec<_> = (0..50)
            .map(|k| Vector3::new((k as f64 * 0.07) % 4.0, (k as f64 * 0.13) % 2.0, (k as f64 * 0.11) % 4.0))
            .collect();
        let cols: Vec<[u8; 3]> = (0..50).map(|k| [(k * 5) as u8, 100, 200]).collect();
        let a = feature_stack_3d(&pts, &cols, s);
        let b = feature_stack_3d(&pts, &cols, s);
        assert_eq!(a.data, b.data);
    }
}
