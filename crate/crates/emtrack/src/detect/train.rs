use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::det::{det_loss, DetModel3D};
use super::features2d::feature_stack_2d;
use super::features3d::feature_stack_3d;
use super::seg::{labels_from_map, seg_loss, SegModel2D};
use crate::discover::{make_supervision_3d, LabelMap2D, PixelClass, PseudoLabel};
use crate::geom::transform::yaw_matrix;
use crate::geom::{GridSpec, Intrinsics};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (NaN loss) at iteration {0}")]
    Diverged(usize),
    #[error("no training frames")]
    NoData,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Gradient-accumulation window: samples per optimizer step.
    pub accumulation: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-4,
            accumulation: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub enabled: bool,
    /// Per-channel multiplicative jitter range.
    pub color_gain: (f64, f64),
    /// Per-channel additive jitter bound (intensity levels).
    pub color_offset: f64,
    /// Crop scale range (2D).
    pub scale_range: (f64, f64),
    /// Square 2D training crop edge (pixels).
    pub crop2d: usize,
    pub max_occlusions: usize,
    /// 3D training crop in voxels (x, y, z).
    pub crop3d: [usize; 3],
    /// Random voxelization yaw, ± radians.
    pub yaw_range: f64,
    /// Random horizontal crop-center jitter (meters).
    pub translation3d: f64,
    /// Probability a voxel is dropped from the input.
    pub voxel_dropout: f64,
    /// Probability of the image-space erase (which also removes the 3D
    /// points projecting into the erased area).
    pub occlusion_prob: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            color_gain: (0.7, 1.3),
            color_offset: 25.0,
            scale_range: (0.8, 1.25),
            crop2d: 64,
            max_occlusions: 2,
            crop3d: [16, 12, 16],
            yaw_range: std::f64::consts::PI,
            translation3d: 0.4,
            voxel_dropout: 0.1,
            occlusion_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub initial_holdout_loss: f64,
    pub final_holdout_loss: f64,
}

/// One 2D training frame: an image and its sparse supervision map.
#[derive(Debug, Clone)]
pub struct SegFrame {
    pub rgb: Vec<u8>,
    pub width: usize,
    pub height: usize,
    pub label_map: LabelMap2D,
}

/// One 3D training frame: a colored cloud (with source pixels for the
/// erase augmentation) and its pseudo-labels.
#[derive(Debug, Clone)]
pub struct DetFrame {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub pixels: Vec<(u32, u32)>,
    pub labels: Vec<PseudoLabel>,
    pub intrinsics: Intrinsics,
    /// Reference grid; crops reuse its voxel size and vertical placement.
    pub grid: GridSpec,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t);
        let bc2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS);
        }
    }
}

fn bilinear_rgb(rgb: &[u8], w: usize, h: usize, x: f64, y: f64) -> [f64; 3] {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (x - x.floor(), y - y.floor());
    let mut out = [0.0; 3];
    for (yy, wy) in [(y0, 1.0 - ay), (y1, ay)] {
        for (xx, wx) in [(x0, 1.0 - ax), (x1, ax)] {
            for c in 0..3 {
                out[c] += wy * wx * rgb[(yy * w + xx) * 3 + c] as f64;
            }
        }
    }
    out
}

struct SegSample {
    rgb: Vec<u8>,
    labels: Vec<i8>,
    mask: Vec<bool>,
    side: usize,
}

fn make_seg_sample(frame: &SegFrame, aug: &AugmentationSpec, rng: &mut ChaCha12Rng) -> SegSample {
    let side = aug.crop2d.min(frame.width).min(frame.height);
    let positives: Vec<usize> = frame
        .label_map
        .classes
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == PixelClass::Positive)
        .map(|(i, _)| i)
        .collect();

    let scale = if aug.enabled {
        rng.gen_range(aug.scale_range.0..aug.scale_range.1)
    } else {
        1.0
    };
    // The source window must fit inside the image.
    let src_side = (side as f64 * scale)
        .min(frame.width as f64 - 1.0)
        .min(frame.height as f64 - 1.0);
    let scale = src_side / side as f64;
    // Center the source window on a positive pixel when one exists.
    let (mut cx, mut cy) = if !positives.is_empty() && (rng.gen_bool(0.7) || !aug.enabled) {
        let i = positives[rng.gen_range(0..positives.len())];
        ((i % frame.width) as f64, (i / frame.width) as f64)
    } else {
        (
            rng.gen_range(0.0..frame.width as f64),
            rng.gen_range(0.0..frame.height as f64),
        )
    };
    if aug.enabled {
        cx += rng.gen_range(-0.25..0.25) * src_side;
        cy += rng.gen_range(-0.25..0.25) * src_side;
    }
    let half = src_side / 2.0;
    cx = cx.clamp(half, frame.width as f64 - half - 1.0);
    cy = cy.clamp(half, frame.height as f64 - half - 1.0);

    let gains: [f64; 3] = if aug.enabled {
        [
            rng.gen_range(aug.color_gain.0..aug.color_gain.1),
            rng.gen_range(aug.color_gain.0..aug.color_gain.1),
            rng.gen_range(aug.color_gain.0..aug.color_gain.1),
        ]
    } else {
        [1.0; 3]
    };
    let offsets: [f64; 3] = if aug.enabled {
        [
            rng.gen_range(-aug.color_offset..aug.color_offset),
            rng.gen_range(-aug.color_offset..aug.color_offset),
            rng.gen_range(-aug.color_offset..aug.color_offset),
        ]
    } else {
        [0.0; 3]
    };

    let mut rgb = vec![0u8; side * side * 3];
    let mut labels = vec![0i8; side * side];
    let mut mask = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let sx = cx - half + (x as f64 + 0.5) * scale;
            let sy = cy - half + (y as f64 + 0.5) * scale;
            let px = bilinear_rgb(&frame.rgb, frame.width, frame.height, sx, sy);
            for c in 0..3 {
                rgb[(y * side + x) * 3 + c] = (px[c] * gains[c] + offsets[c]).clamp(0.0, 255.0) as u8;
            }
            let (lu, lv) = (
                (sx.round() as i64).clamp(0, frame.width as i64 - 1) as u32,
                (sy.round() as i64).clamp(0, frame.height as i64 - 1) as u32,
            );
            match frame.label_map.get(lu, lv) {
                PixelClass::Positive => {
                    labels[y * side + x] = 1;
                    mask[y * side + x] = true;
                }
                PixelClass::Negative => {
                    labels[y * side + x] = -1;
                    mask[y * side + x] = true;
                }
                PixelClass::Ignore => {}
            }
        }
    }

    if aug.enabled {
        // Synthetic occluders. Pixels they cover become ignore: the patch's
        // appearance no longer matches its label, and training it either
        // way would teach "random rectangle" as a class.
        for _ in 0..rng.gen_range(0..=aug.max_occlusions) {
            let ow = rng.gen_range(4..=(side / 4).max(5));
            let oh = rng.gen_range(4..=(side / 4).max(5));
            let ox = rng.gen_range(0..side.saturating_sub(ow).max(1));
            let oy = rng.gen_range(0..side.saturating_sub(oh).max(1));
            let fill: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
            for y in oy..(oy + oh).min(side) {
                for x in ox..(ox + ow).min(side) {
                    for c in 0..3 {
                        rgb[(y * side + x) * 3 + c] = fill[c];
                    }
                    mask[y * side + x] = false;
                }
            }
        }
    }

    SegSample {
        rgb,
        labels,
        mask,
        side,
    }
}

fn seg_holdout_loss(model: &SegModel2D, frames: &[&SegFrame]) -> f64 {
    let mut total = 0.0;
    for f in frames {
        let feats = feature_stack_2d(&f.rgb, f.width, f.height);
        let (logits, _) = model.forward(&feats.data, (f.height, f.width));
        let (labels, mask) = labels_from_map(&f.label_map);
        total += seg_loss(&logits, &labels, &mask).0;
    }
    total / frames.len().max(1) as f64
}

/// Trains the 2D segmenter with gradient accumulation (Adam, batch of 4).
/// Rounds after the first warm-start from the previous parameters with a
/// lower learning rate; the caller passes the model and rate accordingly.
pub fn train_seg(
    model: &mut SegModel2D,
    frames: &[SegFrame],
    aug: &AugmentationSpec,
    opt: &OptimizerConfig,
) -> Result<TrainReport, TrainError> {
    if frames.is_empty() {
        return Err(TrainError::NoData);
    }
    let holdout_n = (frames.len() / 10).max(1);
    let (train_set, holdout): (Vec<&SegFrame>, Vec<&SegFrame>) = if frames.len() > 1 {
        let split = frames.len() - holdout_n;
        (
            frames[..split].iter().collect(),
            frames[split..].iter().collect(),
        )
    } else {
        (frames.iter().collect(), frames.iter().collect())
    };
    let initial = seg_holdout_loss(model, &holdout);

    let mut rng = ChaCha12Rng::seed_from_u64(opt.seed);
    let mut adam = Adam::new(model.params.len());
    let mut acc = vec![0.0; model.params.len()];
    let mut in_window = 0usize;
    for it in 0..opt.iterations {
        let frame = train_set[rng.gen_range(0..train_set.len())];
        let sample = make_seg_sample(frame, aug, &mut rng);
        let feats = feature_stack_2d(&sample.rgb, sample.side, sample.side);
        let (logits, hidden) = model.forward(&feats.data, (sample.side, sample.side));
        let (loss, grad_logits) = seg_loss(&logits, &sample.labels, &sample.mask);
        if !loss.is_finite() {
            return Err(TrainError::Diverged(it));
        }
        if loss > 0.0 {
            let grad = model.backward(&feats.data, &hidden, &grad_logits, (sample.side, sample.side));
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += g;
            }
        }
        in_window += 1;
        if in_window == opt.accumulation {
            for a in acc.iter_mut() {
                *a /= opt.accumulation as f64;
            }
            adam.step(&mut model.params, &acc, opt.learning_rate);
            acc.fill(0.0);
            in_window = 0;
        }
    }
    Ok(TrainReport {
        iterations: opt.iterations,
        initial_holdout_loss: initial,
        final_holdout_loss: seg_holdout_loss(model, &holdout),
    })
}

struct DetSample {
    features: Vec<f64>,
    targets: crate::discover::SupervisionTargets3D,
    dims: (usize, usize, usize),
}

fn make_det_sample(frame: &DetFrame, aug: &AugmentationSpec, rng: &mut ChaCha12Rng) -> Option<DetSample> {
    if frame.labels.is_empty() {
        return None;
    }
    let label = &frame.labels[rng.gen_range(0..frame.labels.len())];
    let crop_dims = aug.crop3d;
    let vs = frame.grid.voxel_size;

    let mut center = label.box3d.center_v();
    if aug.enabled {
        center.x += rng.gen_range(-aug.translation3d..aug.translation3d);
        center.z += rng.gen_range(-aug.translation3d..aug.translation3d);
    }
    // Crop is horizontally centered, vertically aligned with the base grid
    // so the height feature keeps its meaning.
    let crop = GridSpec {
        origin: [
            center.x - crop_dims[0] as f64 * vs[0] / 2.0,
            frame.grid.origin[1],
            center.z - crop_dims[2] as f64 * vs[2] / 2.0,
        ],
        voxel_size: vs,
        dims: crop_dims,
    };

    let theta = if aug.enabled {
        rng.gen_range(-aug.yaw_range..aug.yaw_range)
    } else {
        0.0
    };
    let rot = yaw_matrix(theta);
    let pivot = Vector3::new(center.x, 0.0, center.z);

    // Image-space erase: points projecting into a random rectangle near the
    // label vanish (applied pre-rotation, in the original camera).
    let erase = if aug.enabled && rng.gen_bool(aug.occlusion_prob) {
        let (u, v, _) = frame.intrinsics.project_point(&label.box3d.center_v())?;
        let w = rng.gen_range(8.0..24.0);
        let h = rng.gen_range(8.0..24.0);
        let ox = u + rng.gen_range(-12.0..12.0) - w / 2.0;
        let oy = v + rng.gen_range(-8.0..8.0) - h / 2.0;
        Some((ox, oy, ox + w, oy + h))
    } else {
        None
    };

    let mut pts = Vec::new();
    let mut cols = Vec::new();
    for (k, p) in frame.points.iter().enumerate() {
        if let Some((x0, y0, x1, y1)) = erase {
            let (u, v) = frame.pixels[k];
            if (u as f64) >= x0 && (u as f64) < x1 && (v as f64) >= y0 && (v as f64) < y1 {
                continue;
            }
        }
        let q = rot * (p - pivot) + pivot;
        if crop.voxel_of(&q).is_some() {
            pts.push(q);
            cols.push(frame.colors[k]);
        }
    }

    // Voxel dropout: remove whole occupied voxels.
    if aug.enabled && aug.voxel_dropout > 0.0 {
        let mut drop: std::collections::HashSet<(usize, usize, usize)> = Default::default();
        let mut occupied: Vec<(usize, usize, usize)> =
            pts.iter().filter_map(|p| crop.voxel_of(p)).collect();
        occupied.sort_unstable();
        occupied.dedup();
        for vcell in occupied {
            if rng.gen_bool(aug.voxel_dropout) {
                drop.insert(vcell);
            }
        }
        let mut kept_pts = Vec::with_capacity(pts.len());
        let mut kept_cols = Vec::with_capacity(cols.len());
        for (p, c) in pts.iter().zip(&cols) {
            if crop.voxel_of(p).is_none_or(|v| !drop.contains(&v)) {
                kept_pts.push(*p);
                kept_cols.push(*c);
            }
        }
        pts = kept_pts;
        cols = kept_cols;
    }

    // Transform every label that lands in the crop.
    let labels: Vec<PseudoLabel> = frame
        .labels
        .iter()
        .filter_map(|l| {
            let c = rot * (l.box3d.center_v() - pivot) + pivot;
            crop.voxel_of(&c)?;
            let mut out = l.clone();
            out.box3d = crate::geom::Box3D::new(
                [c.x, c.y, c.z],
                l.box3d.size,
                l.box3d.yaw + theta,
                l.box3d.confidence,
            );
            Some(out)
        })
        .collect();
    if labels.is_empty() {
        return None;
    }

    let feats = feature_stack_3d(&pts, &cols, crop);
    let targets = make_supervision_3d(&labels, crop);
    Some(DetSample {
        features: feats.data,
        targets,
        dims: (crop_dims[2], crop_dims[1], crop_dims[0]),
    })
}

fn det_holdout_loss(model: &DetModel3D, frames: &[&DetFrame], aug: &AugmentationSpec) -> f64 {
    // Un-augmented label-centered crops on the holdout frames.
    let mut rng = ChaCha12Rng::seed_from_u64(0x401D);
    let plain = AugmentationSpec {
        enabled: false,
        ..aug.clone()
    };
    let mut total = 0.0;
    let mut n = 0usize;
    for f in frames {
        if let Some(s) = make_det_sample(f, &plain, &mut rng) {
            let (out, _) = model.forward(&s.features, s.dims);
            total += det_loss(&out, &s.targets).0;
            n += 1;
        }
    }
    total / n.max(1) as f64
}

pub fn train_det(
    model: &mut DetModel3D,
    frames: &[DetFrame],
    aug: &AugmentationSpec,
    opt: &OptimizerConfig,
) -> Result<TrainReport, TrainError> {
    let usable: Vec<&DetFrame> = frames.iter().filter(|f| !f.labels.is_empty()).collect();
    if usable.is_empty() {
        return Err(TrainError::NoData);
    }
    let holdout_n = (usable.len() / 10).max(1);
    let (train_set, holdout): (Vec<&DetFrame>, Vec<&DetFrame>) = if usable.len() > 1 {
        let split = usable.len() - holdout_n;
        (usable[..split].to_vec(), usable[split..].to_vec())
    } else {
        (usable.clone(), usable.clone())
    };
    let initial = det_holdout_loss(model, &holdout, aug);

    let mut rng = ChaCha12Rng::seed_from_u64(opt.seed.wrapping_add(0xD3));
    let mut adam = Adam::new(model.params.len());
    let mut acc = vec![0.0; model.params.len()];
    let mut in_window = 0usize;
    for it in 0..opt.iterations {
        let frame = train_set[rng.gen_range(0..train_set.len())];
        let Some(sample) = make_det_sample(frame, aug, &mut rng) else {
            continue;
        };
        let (out, hidden) = model.forward(&sample.features, sample.dims);
        let (loss, grad_out) = det_loss(&out, &sample.targets);
        if !loss.is_finite() {
            return Err(TrainError::Diverged(it));
        }
        if loss > 0.0 {
            let grad = model.backward(&sample.features, &hidden, &grad_out, sample.dims);
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += g;
            }
        }
        in_window += 1;
        if in_window == opt.accumulation {
            for a in acc.iter_mut() {
                *a /= opt.accumulation as f64;
            }
            adam.step(&mut model.params, &acc, opt.learning_rate);
            acc.fill(0.0);
            in_window = 0;
        }
    }
    Ok(TrainReport {
        iterations: opt.iterations,
        initial_holdout_loss: initial,
        final_holdout_loss: det_holdout_loss(model, &holdout, aug),
    })
}
