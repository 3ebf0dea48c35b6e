//! Fixed per-pixel feature stack for the 2D objectness head: Lab color (3),
//! gradient magnitude at 3 scales (3), a local 8-bin hue histogram (8), and
//! local color variance (1) — 15 channels, all deterministic functions of
//! the image and roughly unit-scaled.

pub const FEAT2D_CHANNELS: usize = 15;

/// Channel-planar feature buffer, `[c][y][x]`, f64.
pub struct FeatureStack2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn rgb_to_lab(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (
        srgb_to_linear(r as f64 / 255.0),
        srgb_to_linear(g as f64 / 255.0),
        srgb_to_linear(b as f64 / 255.0),
    );
    // sRGB D65.
    let x = 0.4124 * r + 0.3576 * g + 0.1805 * b;
    let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    let z = 0.0193 * r + 0.1192 * g + 0.9505 * b;
    let f = |t: f64| {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

fn hue_saturation(r: u8, g: u8, b: u8) -> (f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d < 1e-9 {
        return (0.0, 0.0);
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0, if max > 0.0 { d / max } else { 0.0 })
}

fn luminance(rgb: &[u8], w: usize, h: usize) -> Vec<f64> {
    let mut lum = Vec::with_capacity(w * h);
    for px in rgb.chunks_exact(3) {
        lum.push(0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64);
    }
    debug_assert_eq!(lum.len(), w * h);
    lum
}

fn downsample(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = ((w / 2).max(1), (h / 2).max(1));
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            let mut acc = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let sx = (2 * x + dx).min(w - 1);
                    let sy = (2 * y + dy).min(h - 1);
                    acc += src[sy * w + sx];
                }
            }
            out[y * w2 + x] = acc / 4.0;
        }
    }
    (out, w2, h2)
}

/// Sobel gradient magnitude, normalized to roughly [0, 1].
fn gradient_mag(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let at = |x: i64, y: i64| -> f64 {
        src[(y.clamp(0, h as i64 - 1) as usize) * w + x.clamp(0, w as i64 - 1) as usize]
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = -at(x - 1, y - 1) - 2.0 * at(x - 1, y) - at(x - 1, y + 1)
                + at(x + 1, y - 1)
                + 2.0 * at(x + 1, y)
                + at(x + 1, y + 1);
            let gy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1)
                + 2.0 * at(x, y + 1)
                + at(x + 1, y + 1);
            out[y as usize * w + x as usize] = ((gx * gx + gy * gy).sqrt() / 1020.0).min(1.0);
        }
    }
    out
}

pub fn feature_stack_2d(rgb: &[u8], width: usize, height: usize) -> FeatureStack2D {
    let plane = width * height;
    let mut data = vec![0.0; FEAT2D_CHANNELS * plane];

    // Lab, channels 0..3.
    for i in 0..plane {
        let (l, a, b) = rgb_to_lab(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
        data[i] = l / 100.0;
        data[plane + i] = a / 220.0 + 0.5;
        data[2 * plane + i] = b / 220.0 + 0.5;
    }

    // Gradient magnitude at 3 scales, channels 3..6.
    let lum = luminance(rgb, width, height);
    let g0 = gradient_mag(&lum, width, height);
    let (l1, w1, h1) = downsample(&lum, width, height);
    let g1 = gradient_mag(&l1, w1, h1);
    let (l2, w2, h2) = downsample(&l1, w1, h1);
    let g2 = gradient_mag(&l2, w2, h2);
    for y in 0..height {
        for x in 0..width {
            data[3 * plane + y * width + x] = g0[y * width + x];
            data[4 * plane + y * width + x] = g1[(y / 2).min(h1 - 1) * w1 + (x / 2).min(w1 - 1)];
            data[5 * plane + y * width + x] = g2[(y / 4).min(h2 - 1) * w2 + (x / 4).min(w2 - 1)];
        }
    }

    // Local 8-bin hue histogram over a 5x5 window, channels 6..14.
    let mut hue = vec![0.0; plane];
    let mut sat = vec![0.0; plane];
    for i in 0..plane {
        let (h, s) = hue_saturation(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
        hue[i] = h;
        sat[i] = s;
    }
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut bins = [0.0f64; 8];
            for dy in -2..=2i64 {
                for dx in -2..=2i64 {
                    let sx = dx.clamp(-x, width as i64 - 1 - x) + x;
                    let sy = dy.clamp(-y, height as i64 - 1 - y) + y;
                    let i = sy as usize * width + sx as usize;
                    if sat[i] > 0.1 {
                        let b = ((hue[i] * 8.0) as usize).min(7);
                        bins[b] += 1.0;
                    }
                }
            }
            let i = y as usize * width + x as usize;
            for (b, &count) in bins.iter().enumerate() {
                data[(6 + b) * plane + i] = count / 25.0;
            }
        }
    }

    // Local luminance variance over 5x5, channel 14.
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            let mut n = 0.0;
            for dy in -2..=2i64 {
                for dx in -2..=2i64 {
                    let sx = (x + dx).clamp(0, width as i64 - 1);
                    let sy = (y + dy).clamp(0, height as i64 - 1);
                    let v = lum[sy as usize * width + sx as usize];
                    sum += v;
                    sum2 += v * v;
                    n += 1.0;
                }
            }
            let mean = sum / n;
            let var = (sum2 / n - mean * mean).max(0.0);
            data[14 * plane + y as usize * width + x as usize] = (var / 16384.0).min(1.0);
        }
    }

    FeatureStack2D {
        width,
        height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_are_finite_and_deterministic() {
        let (w, h) = (24usize, 16usize);
        let rgb: Vec<u8> = (0..w * h * 3).map(|i| ((i * 37) % 256) as u8).collect();
        let f1 = feature_stack_2d(&rgb, w, h);
        let f2 = feature_stack_2d(&rgb, w, h);
        assert_eq!(f1.data, f2.data);
        assert!(f1.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn all_black_image_is_finite() {
        let rgb = vec![0u8; 12 * 10 * 3];
        let f = feature_stack_2d(&rgb, 12, 10);
        assert!(f.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn saturated_red_vs_gray_differ_in_hue_channels() {
        let mut rgb = vec![128u8; 16 * 8 * 3];
        for x in 0..8 {
            for y in 0..8 {
                let i = (y * 16 + x) * 3;
                rgb[i] = 230;
                rgb[i + 1] = 40;
                rgb[i + 2] = 40;
            }
        }
        let f = feature_stack_2d(&rgb, 16, 8);
        let plane = 16 * 8;
        // Bin 0 covers red hues; the red half should dominate.
        let red_side = f.data[6 * plane + 4 * 16 + 2];
        let gray_side = f.data[6 * plane + 4 * 16 + 13];
        assert!(red_side > gray_side + 0.3, "red {red_side} gray {gray_side}");
    }
}
