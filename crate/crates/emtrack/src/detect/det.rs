//! The 3D detection head: two volumetric conv layers (7 → 16 → 23, 3x3x3)
//! producing objectness (1), size (3), subvoxel offset (3), and a 16-bin
//! orientation distribution, decoded CenterNet-style from heatmap peaks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::conv::{
    conv3d_backward, conv3d_forward, relu_backward, relu_forward, sigmoid, softplus,
};
use super::features3d::FEAT3D_CHANNELS;
use crate::discover::{bin_to_yaw, SupervisionTargets3D, YAW_BINS};
use crate::geom::{iou_bev, Box3D, GridSpec};

pub const DET_HIDDEN: usize = 16;
/// 1 objectness + 3 size + 3 offset + 16 orientation bins.
pub const DET_OUT: usize = 1 + 3 + 3 + YAW_BINS;
const W1_LEN: usize = DET_HIDDEN * FEAT3D_CHANNELS * 27;
const B1_OFF: usize = W1_LEN;
const W2_OFF: usize = W1_LEN + DET_HIDDEN;
const W2_LEN: usize = DET_OUT * DET_HIDDEN * 27;
const B2_OFF: usize = W2_OFF + W2_LEN;
pub const DET_PARAM_COUNT: usize = B2_OFF + DET_OUT;

pub const CH_OBJ: usize = 0;
pub const CH_SIZE: usize = 1;
pub const CH_OFFSET: usize = 4;
pub const CH_ORIENT: usize = 7;

/// Focal-loss shape parameters (standard CenterNet values).
const FOCAL_ALPHA: i32 = 2;
const FOCAL_BETA: i32 = 4;
/// Term weights: objectness, size, offset, orientation.
const W_OBJ: f64 = 1.0;
const W_SIZE: f64 = 0.1;
const W_OFF: f64 = 1.0;
const W_ORIENT: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct DetModel3D {
    pub params: Vec<f64>,
}

impl DetModel3D {
    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; DET_PARAM_COUNT],
        }
    }

    pub fn random_init(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0; DET_PARAM_COUNT];
        let s1 = (2.0 / (FEAT3D_CHANNELS as f64 * 27.0)).sqrt();
        for p in params[..W1_LEN].iter_mut() {
            *p = rng.gen_range(-s1..s1);
        }
        let s2 = (2.0 / (DET_HIDDEN as f64 * 27.0)).sqrt();
        for p in params[W2_OFF..W2_OFF + W2_LEN].iter_mut() {
            *p = rng.gen_range(-s2..s2);
        }
        // Start the objectness output around p = 0.1 so the focal loss is
        // not swamped by dense background gradients at initialization.
        params[B2_OFF + CH_OBJ] = -2.19;
        Self { params }
    }

    pub fn forward(&self, features: &[f64], dims: (usize, usize, usize)) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let mut hidden = conv3d_forward(
            features,
            dims,
            FEAT3D_CHANNELS,
            DET_HIDDEN,
            &p[..W1_LEN],
            &p[B1_OFF..B1_OFF + DET_HIDDEN],
        );
        relu_forward(&mut hidden);
        let out = conv3d_forward(
            &hidden,
            dims,
            DET_HIDDEN,
            DET_OUT,
            &p[W2_OFF..W2_OFF + W2_LEN],
            &p[B2_OFF..B2_OFF + DET_OUT],
        );
        (out, hidden)
    }

    pub fn backward(
        &self,
        features: &[f64],
        hidden: &[f64],
        grad_out: &[f64],
        dims: (usize, usize, usize),
    ) -> Vec<f64> {
        let p = &self.params;
        let mut grad = vec![0.0; DET_PARAM_COUNT];
        let (mut grad_hidden, gw2, gb2) = conv3d_backward(
            hidden,
            dims,
            DET_HIDDEN,
            DET_OUT,
            &p[W2_OFF..W2_OFF + W2_LEN],
            grad_out,
        );
        relu_backward(hidden, &mut grad_hidden);
        let (_, gw1, gb1) = conv3d_backward(
            features,
            dims,
            FEAT3D_CHANNELS,
            DET_HIDDEN,
            &p[..W1_LEN],
            &grad_hidden,
        );
        grad[..W1_LEN].copy_from_slice(&gw1);
        grad[B1_OFF..B1_OFF + DET_HIDDEN].copy_from_slice(&gb1);
        grad[W2_OFF..W2_OFF + W2_LEN].copy_from_slice(&gw2);
        grad[B2_OFF..B2_OFF + DET_OUT].copy_from_slice(&gb2);
        grad
    }
}

/// CenterNet-style detection loss against targets from
/// `make_supervision_3d`: penalty-reduced focal on the objectness heatmap
/// (ignore voxels skipped), L1 size/offset and orientation cross-entropy at
/// the peaks. Returns the loss and gradient with respect to the head output.
pub fn det_loss(out: &[f64], targets: &SupervisionTargets3D) -> (f64, Vec<f64>) {
    let spec = targets.spec;
    let vol = spec.voxel_count();
    debug_assert_eq!(out.len(), DET_OUT * vol);
    let mut grad = vec![0.0; out.len()];
    let n_norm = targets.peaks.len().max(1) as f64;

    let peak_set: std::collections::HashSet<usize> = targets
        .peaks
        .iter()
        .map(|p| spec.linear(p.voxel.0, p.voxel.1, p.voxel.2))
        .collect();

    let mut loss = 0.0;
    for i in 0..vol {
        if !targets.valid[i] {
            continue;
        }
        let x = out[CH_OBJ * vol + i];
        let p = sigmoid(x);
        if peak_set.contains(&i) {
            // -(1-p)^alpha · ln p, written via softplus for stability.
            let one_m = 1.0 - p;
            loss += W_OBJ / n_norm * one_m.powi(FOCAL_ALPHA) * softplus(-x);
            let d = -(FOCAL_ALPHA as f64) * p * one_m.powi(FOCAL_ALPHA) * softplus(-x)
                - one_m.powi(FOCAL_ALPHA + 1);
            grad[CH_OBJ * vol + i] = W_OBJ / n_norm * d;
        } else {
            let y = targets.objectness[i].clamp(0.0, 1.0) as f64;
            let w = (1.0 - y).powi(FOCAL_BETA);
            loss += W_OBJ / n_norm * w * p.powi(FOCAL_ALPHA) * softplus(x);
            let d = (FOCAL_ALPHA as f64) * p.powi(FOCAL_ALPHA) * (1.0 - p) * softplus(x)
                + p.powi(FOCAL_ALPHA) * p;
            grad[CH_OBJ * vol + i] = W_OBJ / n_norm * w * d;
        }
    }

    for peak in &targets.peaks {
        let i = spec.linear(peak.voxel.0, peak.voxel.1, peak.voxel.2);
        for a in 0..3 {
            let idx = (CH_SIZE + a) * vol + i;
            let diff = out[idx] - peak.size[a];
            loss += W_SIZE / n_norm * diff.abs();
            grad[idx] += W_SIZE / n_norm * diff.signum();

            let idx = (CH_OFFSET + a) * vol + i;
            let diff = out[idx] - peak.offset[a];
            loss += W_OFF / n_norm * diff.abs();
            grad[idx] += W_OFF / n_norm * diff.signum();
        }
        // Orientation cross-entropy over the 16 bins.
        let logits: Vec<f64> = (0..YAW_BINS).map(|b| out[(CH_ORIENT + b) * vol + i]).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += W_ORIENT / n_norm * (z.ln() - (logits[peak.yaw_bin] - max));
        for b in 0..YAW_BINS {
            let softmax = exps[b] / z;
            let onehot = if b == peak.yaw_bin { 1.0 } else { 0.0 };
            grad[(CH_ORIENT + b) * vol + i] += W_ORIENT / n_norm * (softmax - onehot);
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Objectness probability threshold for peaks.
    pub threshold: f64,
    /// BEV IoU above which a lower-confidence box is suppressed.
    pub nms_iou: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            nms_iou: 0.3,
        }
    }
}

/// Decodes head output into boxes: 3x3x3 local maxima of objectness above
/// threshold, size read at the peak, subvoxel offset added to the peak
/// coordinates, orientation from the argmax bin, then BEV-IoU NMS.
pub fn infer_det(out: &[f64], spec: GridSpec, cfg: &DecodeConfig) -> Vec<Box3D> {
    let vol = spec.voxel_count();
    let obj = &out[CH_OBJ * vol..(CH_OBJ + 1) * vol];
    let mut cands: Vec<Box3D> = Vec::new();
    for iz in 0..spec.dims[2] {
        for iy in 0..spec.dims[1] {
            for ix in 0..spec.dims[0] {
                let i = spec.linear(ix, iy, iz);
                let p = sigmoid(obj[i]);
                if p <= cfg.threshold {
                    continue;
                }
                let mut is_max = true;
                'nb: for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let (x, y, z) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                            if x < 0
                                || y < 0
                                || z < 0
                                || x >= spec.dims[0] as i64
                                || y >= spec.dims[1] as i64
                                || z >= spec.dims[2] as i64
                            {
                                continue;
                            }
                            if obj[spec.linear(x as usize, y as usize, z as usize)] > obj[i] {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if !is_max {
                    continue;
                }
                let center_voxel = spec.center_of(ix, iy, iz);
                let mut center = [0.0; 3];
                let mut size = [0.0; 3];
                for a in 0..3 {
                    let off = out[(CH_OFFSET + a) * vol + i].clamp(-1.0, 1.0);
                    center[a] = center_voxel[a] + off * spec.voxel_size[a];
                    size[a] = out[(CH_SIZE + a) * vol + i].max(0.05);
                }
                let yaw_bin = (0..YAW_BINS)
                    .max_by(|&a, &b| {
                        out[(CH_ORIENT + a) * vol + i].total_cmp(&out[(CH_ORIENT + b) * vol + i])
                    })
                    .unwrap();
                cands.push(Box3D::new(center, size, bin_to_yaw(yaw_bin), p));
            }
        }
    }
    // Stable sort keeps scan order on ties, so decoding is deterministic.
    cands.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Box3D> = Vec::new();
    for c in cands {
        if kept.iter().all(|k| iou_bev(k, &c) <= cfg.nms_iou) {
            kept.push(c);
        }
    }
    kept
}

/// Builds a synthetic head output that decodes back to the given targets:
/// objectness through the inverse sigmoid, size/offset/orientation written
/// at the peaks. Inference on this output must reproduce the encoded boxes.
pub fn encode_targets(targets: &SupervisionTargets3D) -> Vec<f64> {
    let spec = targets.spec;
    let vol = spec.voxel_count();
    let mut out = vec![0.0; DET_OUT * vol];
    for i in 0..vol {
        let p = (targets.objectness[i] as f64).clamp(1e-6, 1.0 - 1e-6);
        out[CH_OBJ * vol + i] = (p / (1.0 - p)).ln();
    }
    for peak in &targets.peaks {
        let i = spec.linear(peak.voxel.0, peak.voxel.1, peak.voxel.2);
        for a in 0..3 {
            out[(CH_SIZE + a) * vol + i] = peak.size[a];
            out[(CH_OFFSET + a) * vol + i] = peak.offset[a];
        }
        for b in 0..YAW_BINS {
            out[(CH_ORIENT + b) * vol + i] = if b == peak.yaw_bin { 10.0 } else { -10.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discover::{make_supervision_3d, Cue, PseudoLabel};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grid() -> GridSpec {
        GridSpec {
            origin: [-2.0, -1.0, 0.0],
            voxel_size: [0.25, 0.25, 0.25],
            dims: [16, 8, 16],
        }
    }

    fn label(center: [f64; 3], size: [f64; 3], yaw: f64) -> PseudoLabel {
        PseudoLabel {
            frame_id: 0,
            round: 1,
            box3d: Box3D::new(center, size, yaw, 1.0),
            cues: vec![Cue::Motion],
            confidence: 1.0,
        }
    }

    #[test]
    fn all_ignore_grid_zero_loss() {
        let t = make_supervision_3d(&[], grid());
        let vol = grid().voxel_count();
        let out = vec![0.7; DET_OUT * vol];
        let (loss, grad) = det_loss(&out, &t);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn exact_targets_give_near_zero_loss() {
        // The focal objectness term vanishes when the head saturates to the
        // binary target (1 at peaks, 0 elsewhere) and the regression
        // channels match exactly.
        let t = make_supervision_3d(&[label([0.1, 0.0, 1.9], [0.5, 0.4, 0.6], 0.4)], grid());
        let mut out = encode_targets(&t);
        let vol = grid().voxel_count();
        let peak = grid().linear(t.peaks[0].voxel.0, t.peaks[0].voxel.1, t.peaks[0].voxel.2);
        for i in 0..vol {
            out[CH_OBJ * vol + i] = if i == peak { 20.0 } else { -20.0 };
        }
        let (loss, _) = det_loss(&out, &t);
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(3);
        let small = GridSpec {
            origin: [0.0, 0.0, 0.0],
            voxel_size: [0.5, 0.5, 0.5],
            dims: [5, 4, 5],
        };
        for trial in 0..10 {
            let l = label(
                [
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.5..1.5),
                    rng.gen_range(0.5..2.0),
                ],
                [0.6, 0.5, 0.7],
                rng.gen_range(-3.0..3.0),
            );
            let t = make_supervision_3d(&[l], small);
            let vol = small.voxel_count();
            let out: Vec<f64> = (0..DET_OUT * vol).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, grad) = det_loss(&out, &t);
            let eps = 1e-6;
            for i in (0..out.len()).step_by(53) {
                let mut op = out.clone();
                op[i] += eps;
                let mut om = out.clone();
                om[i] -= eps;
                let fd = (det_loss(&op, &t).0 - det_loss(&om, &t).0) / (2.0 * eps);
                assert!(
                    (fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1e-5),
                    "trial {trial} idx {i}: fd {fd} vs {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn zero_objectness_decodes_to_nothing() {
        let vol = grid().voxel_count();
        let mut out = vec![0.0; DET_OUT * vol];
        for v in out[..vol].iter_mut() {
            *v = -10.0;
        }
        assert!(infer_det(&out, grid(), &DecodeConfig::default()).is_empty());
    }

    #[test]
    fn encode_decode_recovers_box() {
        let mut rng = StdRng::seed_from_u64(9);
        let g = grid();
        for _ in 0..50 {
            let center = [
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-0.7..0.7),
                rng.gen_range(0.5..3.5),
            ];
            let size = [
                rng.gen_range(0.3..1.2),
                rng.gen_range(0.3..1.0),
                rng.gen_range(0.3..1.2),
            ];
            let yaw = rng.gen_range(-3.1..3.1);
            let l = label(center, size, yaw);
            let t = make_supervision_3d(&[l], g);
            let out = encode_targets(&t);
            let dets = infer_det(&out, g, &DecodeConfig::default());
            assert_eq!(dets.len(), 1, "expected exactly one box");
            let d = &dets[0];
            for a in 0..3 {
                assert!(
                    (d.center[a] - center[a]).abs() <= 0.5 * g.voxel_size[a] + 1e-9,
                    "center axis {a}"
                );
                assert!((d.size[a] - size[a]).abs() <= 0.1 * size[a] + 1e-9, "size axis {a}");
            }
            let bin_w = std::f64::consts::TAU / YAW_BINS as f64;
            let dyaw = (d.yaw - yaw).rem_euclid(std::f64::consts::TAU);
            let dyaw = dyaw.min(std::f64::consts::TAU - dyaw);
            assert!(dyaw <= bin_w + 1e-9, "yaw err {dyaw}");
        }
    }

    #[test]
    fn nms_keeps_higher_of_two_overlapping_peaks() {
        let g = grid();
        let vol = g.voxel_count();
        let mut out = vec![0.0; DET_OUT * vol];
        for v in out[..vol].iter_mut() {
            *v = -10.0;
        }
        // Two nearby peaks with heavily overlapping footprints.
        let a = g.linear(8, 4, 8);
        let b = g.linear(10, 4, 8);
        out[a] = 3.0; // p ~ 0.95
        out[b] = 1.0; // p ~ 0.73
        for (i, s) in [(a, 1.2), (b, 1.2)] {
            for ax in 0..3 {
                out[(CH_SIZE + ax) * vol + i] = s;
            }
            out[(CH_ORIENT) * vol + i] = 5.0;
        }
        let dets = infer_det(&out, g, &DecodeConfig::default());
        assert_eq!(dets.len(), 1);
        assert!(dets[0].confidence > 0.9);
    }

    #[test]
    fn full_det_backprop_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(21);
        let small = GridSpec {
            origin: [0.0, 0.0, 0.0],
            voxel_size: [0.5, 0.5, 0.5],
            dims: [4, 3, 4],
        };
        let vol = small.voxel_count();
        let feats: Vec<f64> = (0..FEAT3D_CHANNELS * vol).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t = make_supervision_3d(&[label([1.0, 0.7, 1.0], [0.6, 0.5, 0.6], 0.2)], small);
        let mut model = DetModel3D::random_init(4);
        let dims = (small.dims[2], small.dims[1], small.dims[0]);

        let (out, hidden) = model.forward(&feats, dims);
        let (_, grad_out) = det_loss(&out, &t);
        let grad = model.backward(&feats, &hidden, &grad_out, dims);

        let eps = 1e-6;
        for i in (0..DET_PARAM_COUNT).step_by(331) {
            let orig = model.params[i];
            model.params[i] = orig + eps;
            let lp = det_loss(&model.forward(&feats, dims).0, &t).0;
            model.params[i] = orig - eps;
            let lm = det_loss(&model.forward(&feats, dims).0, &t).0;
            model.params[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1e-4),
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }
}
