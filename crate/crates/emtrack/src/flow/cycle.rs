use super::{FlowCheckConfig, FlowField};

/// A backward flow field resampled into the forward frame's coordinates.
/// Pixels whose warp target left the image are undefined.
#[derive(Debug, Clone)]
pub struct WarpedFlow {
    pub flow: FlowField,
    pub defined: Vec<bool>,
}

/// Per-pixel accept/reject decisions of the cycle check.
#[derive(Debug, Clone)]
pub struct ConsistencyMask {
    pub width: u32,
    pub height: u32,
    pub accepted: Vec<bool>,
}

impl ConsistencyMask {
    #[inline]
    pub fn get(&self, u: u32, v: u32) -> bool {
        self.accepted[(v * self.width + u) as usize]
    }

    pub fn accept_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }
}

/// Resamples `f_bw` at `p + f_fw(p)` with bilinear interpolation, producing
/// the backward flow expressed at forward-frame pixels. Samples outside the
/// image are marked undefined.
pub fn warp_backward(f_bw: &FlowField, f_fw: &FlowField) -> WarpedFlow {
    assert_eq!((f_bw.width, f_bw.height), (f_fw.width, f_fw.height));
    let (w, h) = (f_fw.width, f_fw.height);
    let mut out = FlowField::zeros(w, h, f_bw.direction, f_bw.frames);
    let mut defined = vec![false; (w * h) as usize];
    for v in 0..h {
        for u in 0..w {
            let (du, dv) = f_fw.get(u, v);
            let x = u as f64 + du as f64;
            let y = v as f64 + dv as f64;
            if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                continue;
            }
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let (x0, y0) = (x0 as u32, y0 as u32);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let mut acc = [0.0f64; 2];
            for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    let (bu, bv) = f_bw.get(xx, yy);
                    acc[0] += wy * wx * bu as f64;
                    acc[1] += wy * wx * bv as f64;
                }
            }
            out.set(u, v, acc[0] as f32, acc[1] as f32);
            defined[(v * w + u) as usize] = true;
        }
    }
    WarpedFlow { flow: out, defined }
}

/// Accepts a pixel iff `‖f_fw + f̂_bw‖ < α1·(‖f_fw‖ + ‖f̂_bw‖) + α2`.
/// The *sum* is thresholded because the two fields point in opposite
/// directions. Undefined warped pixels are rejected.
pub fn check_cycle(f_fw: &FlowField, warped_bw: &WarpedFlow, cfg: &FlowCheckConfig) -> ConsistencyMask {
    let (w, h) = (f_fw.width, f_fw.height);
    assert_eq!((warped_bw.flow.width, warped_bw.flow.height), (w, h));
    let mut accepted = vec![false; (w * h) as usize];
    for v in 0..h {
        for u in 0..w {
            let i = (v * w + u) as usize;
            if !warped_bw.defined[i] {
                continue;
            }
            let (fu, fv) = f_fw.get(u, v);
            let (bu, bv) = warped_bw.flow.get(u, v);
            let residual = ((fu as f64 + bu as f64).powi(2) + (fv as f64 + bv as f64).powi(2)).sqrt();
            let mag_f = ((fu as f64).powi(2) + (fv as f64).powi(2)).sqrt();
            let mag_b = ((bu as f64).powi(2) + (bv as f64).powi(2)).sqrt();
            accepted[i] = residual < cfg.alpha1 * (mag_f + mag_b) + cfg.alpha2;
        }
    }
    ConsistencyMask {
        width: w,
        height: h,
        accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowDirection;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn field(w: u32, h: u32) -> FlowField {
        FlowField::zeros(w, h, FlowDirection::Forward, (0, 1))
    }

    #[test]
    fn zero_forward_flow_warp_is_identity() {
        let mut bw = field(16, 12);
        bw.direction = FlowDirection::Backward;
        let mut rng = StdRng::seed_from_u64(4);
        for v in bw.vectors.iter_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        let fw = field(16, 12);
        let warped = warp_backward(&bw, &fw);
        assert!(warped.defined.iter().all(|&d| d));
        assert_eq!(warped.flow.vectors, bw.vectors);
    }

    #[test]
    fn constant_fields_warp_to_constant() {
        let (w, h) = (20u32, 10u32);
        let mut fw = field(w, h);
        let mut bw = field(w, h);
        for v in 0..h {
            for u in 0..w {
                fw.set(u, v, 5.0, 0.0);
                bw.set(u, v, -5.0, 0.0);
            }
        }
        let warped = warp_backward(&bw, &fw);
        for v in 0..h {
            for u in 0..w {
                let i = (v * w + u) as usize;
                if u as f64 + 5.0 <= (w - 1) as f64 {
                    assert!(warped.defined[i]);
                    assert_eq!(warped.flow.get(u, v), (-5.0, 0.0));
                } else {
                    assert!(!warped.defined[i]);
                }
            }
        }
    }

    #[test]
    fn warp_matches_bilinear_oracle() {
        let (w, h) = (24u32, 18u32);
        let mut rng = StdRng::seed_from_u64(8);
        let mut fw = field(w, h);
        let mut bw = field(w, h);
        for v in fw.vectors.iter_mut() {
            *v = rng.gen_range(-4.0..4.0);
        }
        for v in bw.vectors.iter_mut() {
            *v = rng.gen_range(-4.0..4.0);
        }
        let warped = warp_backward(&bw, &fw);
        for v in 0..h {
            for u in 0..w {
                let (du, dv) = fw.get(u, v);
                let x = u as f64 + du as f64;
                let y = v as f64 + dv as f64;
                let i = (v * w + u) as usize;
                if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                    assert!(!warped.defined[i]);
                    continue;
                }
                // Independent 4-corner weighted sum.
                let (x0, y0) = (x.floor() as u32, y.floor() as u32);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (ax, ay) = (x - x.floor(), y - y.floor());
                let mut eu = 0.0;
                let mut ev = 0.0;
                for (yy, wy) in [(y0, 1.0 - ay), (y1, ay)] {
                    for (xx, wx) in [(x0, 1.0 - ax), (x1, ax)] {
                        let (bu, bv) = bw.get(xx, yy);
                        eu += wy * wx * bu as f64;
                        ev += wy * wx * bv as f64;
                    }
                }
                let (gu, gv) = warped.flow.get(u, v);
                assert!((gu as f64 - eu).abs() < 1e-6);
                assert!((gv as f64 - ev).abs() < 1e-6);
            }
        }
    }

    fn constant_warped(w: u32, h: u32, du: f32, dv: f32) -> WarpedFlow {
        let mut f = field(w, h);
        for v in 0..h {
            for u in 0..w {
                f.set(u, v, du, dv);
            }
        }
        WarpedFlow {
            flow: f,
            defined: vec![true; (w * h) as usize],
        }
    }

    #[test]
    fn cycle_accepts_exact_inverse() {
        // residual 0 < 0.01·10 + 0.1
        let mut fw = field(4, 4);
        for v in 0..4 {
            for u in 0..4 {
                fw.set(u, v, 5.0, 0.0);
            }
        }
        let mask = check_cycle(&fw, &constant_warped(4, 4, -5.0, 0.0), &FlowCheckConfig::default());
        assert_eq!(mask.accept_count(), 16);
    }

    #[test]
    fn cycle_rejects_one_pixel_discrepancy() {
        // residual 1 > 0.01·9 + 0.1 = 0.19
        let mut fw = field(4, 4);
        for v in 0..4 {
            for u in 0..4 {
                fw.set(u, v, 5.0, 0.0);
            }
        }
        let mask = check_cycle(&fw, &constant_warped(4, 4, -4.0, 0.0), &FlowCheckConfig::default());
        assert_eq!(mask.accept_count(), 0);
    }

    #[test]
    fn cycle_accepts_zero_flows() {
        let fw = field(4, 4);
        let mask = check_cycle(&fw, &constant_warped(4, 4, 0.0, 0.0), &FlowCheckConfig::default());
        assert_eq!(mask.accept_count(), 16);
    }

    #[test]
    fn cycle_check_symmetric_in_flow_arguments() {
        let (w, h) = (10u32, 8u32);
        let mut rng = StdRng::seed_from_u64(13);
        let mut a = field(w, h);
        let mut b = field(w, h);
        for v in a.vectors.iter_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        for v in b.vectors.iter_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        let wa = WarpedFlow {
            flow: a.clone(),
            defined: vec![true; (w * h) as usize],
        };
        let wb = WarpedFlow {
            flow: b.clone(),
            defined: vec![true; (w * h) as usize],
        };
        let cfg = FlowCheckConfig::default();
        let m1 = check_cycle(&a, &wb, &cfg);
        let m2 = check_cycle(&b, &wa, &cfg);
        assert_eq!(m1.accepted, m2.accepted);
    }
}
