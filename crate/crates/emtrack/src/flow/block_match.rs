use super::{FlowDirection, FlowField};

/// Single-channel luminance image used by the block matcher.
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    /// Rec. 601 luminance of packed RGB bytes.
    pub fn from_rgb8(rgb: &[u8], width: u32, height: u32) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for px in rgb.chunks_exact(3) {
            data.push(0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    fn at_clamped(&self, u: i64, v: i64) -> f32 {
        let u = u.clamp(0, self.width as i64 - 1) as usize;
        let v = v.clamp(0, self.height as i64 - 1) as usize;
        self.data[v * self.width as usize + u]
    }

    fn downsample2(&self) -> GrayImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut out = GrayImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += self.at_clamped((2 * u + dx) as i64, (2 * v + dy) as i64);
                    }
                }
                out.data[(v * w + u) as usize] = acc / 4.0;
            }
        }
        out
    }
}

const PATCH_HALF_LO: i64 = -3;
const PATCH_HALF_HI: i64 = 4;
const SEARCH_RADIUS: i64 = 8;
const LEVELS: usize = 3;

/// Sum of absolute differences of 8x8 patches centered at the two pixels,
/// with an early exit once `best` is exceeded.
fn sad(a: &GrayImage, b: &GrayImage, au: i64, av: i64, bu: i64, bv: i64, best: f32) -> f32 {
    let mut acc = 0.0f32;
    for dy in PATCH_HALF_LO..=PATCH_HALF_HI {
        for dx in PATCH_HALF_LO..=PATCH_HALF_HI {
            acc += (a.at_clamped(au + dx, av + dy) - b.at_clamped(bu + dx, bv + dy)).abs();
        }
        if acc > best {
            return acc;
        }
    }
    acc
}

fn sample_flow(flow: &FlowField, x: f64, y: f64) -> (f64, f64) {
    let w = flow.width;
    let h = flow.height;
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (x - x.floor(), y - y.floor());
    let mut du = 0.0;
    let mut dv = 0.0;
    for (yy, wy) in [(y0, 1.0 - ay), (y1, ay)] {
        for (xx, wx) in [(x0, 1.0 - ax), (x1, ax)] {
            let (fu, fv) = flow.get(xx, yy);
            du += wy * wx * fu as f64;
            dv += wy * wx * fv as f64;
        }
    }
    (du, dv)
}

/// Dense flow from `img0` to `img1` by 3-level coarse-to-fine block
/// matching: 8x8 patches, ±8 px search per level, SAD scoring, and
/// per-axis quadratic subpixel refinement of the SAD minimum.
pub fn estimate_flow(img0: &GrayImage, img1: &GrayImage) -> FlowField {
    assert_eq!((img0.width, img0.height), (img1.width, img1.height));
    let mut pyr0 = vec![img0.clone()];
    let mut pyr1 = vec![img1.clone()];
    for _ in 1..LEVELS {
        pyr0.push(pyr0.last().unwrap().downsample2());
        pyr1.push(pyr1.last().unwrap().downsample2());
    }

    let mut prev: Option<FlowField> = None;
    for level in (0..LEVELS).rev() {
        let a = &pyr0[level];
        let b = &pyr1[level];
        let mut flow = FlowField::zeros(a.width, a.height, FlowDirection::Forward, (0, 1));
        for v in 0..a.height {
            for u in 0..a.width {
                // Initialize from the coarser level, scaled up.
                let (iu, iv) = match &prev {
                    Some(p) => {
                        let (du, dv) = sample_flow(p, u as f64 / 2.0, v as f64 / 2.0);
                        ((du * 2.0).round() as i64, (dv * 2.0).round() as i64)
                    }
                    None => (0, 0),
                };
                let mut best_score = f32::INFINITY;
                let mut best = (iu, iv);
                for dv_off in -SEARCH_RADIUS..=SEARCH_RADIUS {
                    for du_off in -SEARCH_RADIUS..=SEARCH_RADIUS {
                        let cand = (iu + du_off, iv + dv_off);
                        let s = sad(
                            a,
                            b,
                            u as i64,
                            v as i64,
                            u as i64 + cand.0,
                            v as i64 + cand.1,
                            best_score,
                        );
                        if s < best_score {
                            best_score = s;
                            best = cand;
                        }
                    }
                }
                // Quadratic refinement along each axis.
                let mut fu = best.0 as f64;
                let mut fv = best.1 as f64;
                let center = sad(a, b, u as i64, v as i64, u as i64 + best.0, v as i64 + best.1, f32::INFINITY) as f64;
                let sx0 = sad(a, b, u as i64, v as i64, u as i64 + best.0 - 1, v as i64 + best.1, f32::INFINITY) as f64;
                let sx1 = sad(a, b, u as i64, v as i64, u as i64 + best.0 + 1, v as i64 + best.1, f32::INFINITY) as f64;
                let denom_x = sx0 - 2.0 * center + sx1;
                if denom_x > 1e-9 {
                    fu += (0.5 * (sx0 - sx1) / denom_x).clamp(-0.5, 0.5);
                }
                let sy0 = sad(a, b, u as i64, v as i64, u as i64 + best.0, v as i64 + best.1 - 1, f32::INFINITY) as f64;
                let sy1 = sad(a, b, u as i64, v as i64, u as i64 + best.0, v as i64 + best.1 + 1, f32::INFINITY) as f64;
                let denom_y = sy0 - 2.0 * center + sy1;
                if denom_y > 1e-9 {
                    fv += (0.5 * (sy0 - sy1) / denom_y).clamp(-0.5, 0.5);
                }
                flow.set(u, v, fu as f32, fv as f32);
            }
        }
        prev = Some(flow);
    }
    prev.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{check_cycle, warp_backward, FlowCheckConfig};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Checker + noise, the same style of texture the simulator paints.
    fn textured(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut img = GrayImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let checker = if ((u / 6) + (v / 6)) % 2 == 0 { 80.0 } else { 160.0 };
                img.data[(v * w + u) as usize] = checker + rng.gen_range(-20.0..20.0);
            }
        }
        img
    }

    fn shifted_wrapped(img: &GrayImage, shift: i64) -> GrayImage {
        let (w, h) = (img.width, img.height);
        let mut out = GrayImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                let src = ((u as i64 - shift).rem_euclid(w as i64)) as u32;
                out.data[(v * w + u) as usize] = img.data[(v * w + src) as usize];
            }
        }
        out
    }

    #[test]
    fn identical_images_give_near_zero_flow() {
        let img = textured(64, 48, 21);
        let flow = estimate_flow(&img, &img);
        let mut bad = 0;
        for v in 4..44u32 {
            for u in 4..60u32 {
                let (du, dv) = flow.get(u, v);
                if (du * du + dv * dv).sqrt() >= 0.5 {
                    bad += 1;
                }
            }
        }
        assert_eq!(bad, 0, "{bad} interior pixels with |flow| >= 0.5");
    }

    #[test]
    fn shifted_image_recovers_median_flow() {
        let img = textured(64, 48, 22);
        let moved = shifted_wrapped(&img, 3);
        let flow = estimate_flow(&img, &moved);
        let mut dus: Vec<f32> = Vec::new();
        let mut dvs: Vec<f32> = Vec::new();
        for v in 4..44u32 {
            for u in 4..56u32 {
                let (du, dv) = flow.get(u, v);
                dus.push(du);
                dvs.push(dv);
            }
        }
        dus.sort_by(|a, b| a.total_cmp(b));
        dvs.sort_by(|a, b| a.total_cmp(b));
        let med_u = dus[dus.len() / 2];
        let med_v = dvs[dvs.len() / 2];
        assert!((med_u - 3.0).abs() <= 0.5, "median du {med_u}");
        assert!(med_v.abs() <= 0.5, "median dv {med_v}");
    }

    #[test]
    fn textureless_flow_is_rejected_by_cycle_check() {
        let img = GrayImage {
            width: 48,
            height: 36,
            data: vec![100.0; 48 * 36],
        };
        let fw = estimate_flow(&img, &img);
        let bw = estimate_flow(&img, &img);
        let warped = warp_backward(&bw, &fw);
        let mask = check_cycle(&fw, &warped, &FlowCheckConfig::default());
        let total = mask.accepted.len();
        let accepted = mask.accept_count();
        assert!(
            (accepted as f64) < 0.1 * total as f64,
            "cycle check accepted {accepted}/{total} on textureless input"
        );
    }
}
