use nalgebra::Vector3;

use crate::flow::{ConsistencyMask, FlowField};
use crate::geom::{DepthMap, Intrinsics};

/// A single 3D correspondence lifted from a 2D flow vector: `x0` in the
/// source frame's camera coordinates, `x1` in the target frame's.
#[derive(Debug, Clone, Copy)]
pub struct Flow3D {
    pub x0: Vector3<f64>,
    pub x1: Vector3<f64>,
    pub pixel: (u32, u32),
}

/// Upgrades cycle-consistent 2D flow to sparse 3D flow. A vector survives
/// iff its start pixel has depth in `d0`, its (nearest-pixel) end has depth
/// in `d1`, and the consistency mask accepts it. The end point unprojects
/// at the flow's subpixel location using the nearest pixel's depth.
pub fn lift_flow(
    flow: &FlowField,
    mask: Option<&ConsistencyMask>,
    d0: &DepthMap,
    d1: &DepthMap,
    intr: &Intrinsics,
) -> Vec<Flow3D> {
    let mut out = Vec::new();
    for v in 0..flow.height {
        for u in 0..flow.width {
            if let Some(m) = mask {
                if !m.get(u, v) {
                    continue;
                }
            }
            let Some(z0) = d0.get(u, v) else { continue };
            let (du, dv) = flow.get(u, v);
            let u1 = u as f64 + du as f64;
            let v1 = v as f64 + dv as f64;
            let (ur, vr) = (u1.round(), v1.round());
            if !intr.contains(ur, vr) {
                continue;
            }
            let Some(z1) = d1.get(ur as u32, vr as u32) else { continue };
            out.push(Flow3D {
                x0: intr.unproject_pixel(u as f64, v as f64, z0),
                x1: intr.unproject_pixel(u1, v1, z1),
                pixel: (u, v),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowDirection;

    fn intr() -> Intrinsics {
        Intrinsics {
            fx: 80.0,
            fy: 80.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
        }
    }

    #[test]
    fn invalid_depth_gives_empty_lift() {
        let k = intr();
        let flow = FlowField::zeros(64, 48, FlowDirection::Forward, (0, 1));
        let d = DepthMap::new_invalid(64, 48);
        assert!(lift_flow(&flow, None, &d, &d, &k).is_empty());
    }

    #[test]
    fn vector_ending_off_image_dropped() {
        let k = intr();
        let mut flow = FlowField::zeros(64, 48, FlowDirection::Forward, (0, 1));
        flow.set(10, 10, 500.0, 0.0);
        flow.set(12, 12, 1.0, 1.0);
        let mut d = DepthMap::new_invalid(64, 48);
        for v in 0..48 {
            for u in 0..64 {
                d.set(u, v, 3.0);
            }
        }
        let lifted = lift_flow(&flow, None, &d, &d, &k);
        assert!(lifted.iter().all(|f| f.pixel != (10, 10)));
        assert!(lifted.iter().any(|f| f.pixel == (12, 12)));
    }

    #[test]
    fn mask_filters_lifted_vectors() {
        let k = intr();
        let flow = FlowField::zeros(64, 48, FlowDirection::Forward, (0, 1));
        let mut d = DepthMap::new_invalid(64, 48);
        for v in 0..48 {
            for u in 0..64 {
                d.set(u, v, 2.0);
            }
        }
        let mut mask = ConsistencyMask {
            width: 64,
            height: 48,
            accepted: vec![false; 64 * 48],
        };
        mask.accepted[5] = true;
        let lifted = lift_flow(&flow, Some(&mask), &d, &d, &k);
        assert_eq!(lifted.len(), 1);
        assert_eq!(lifted[0].pixel, (5, 0));
    }

    // Static-scene ground-truth cases live in the integration tests where
    // the simulator provides depth and flow.
}
