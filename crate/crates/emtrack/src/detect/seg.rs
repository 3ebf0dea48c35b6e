//! The 2D objectness segmenter: a two-layer convolutional head
//! (15 → 16 → 1, 3x3 kernels) over the fixed feature stack, trained with a
//! class-balanced logistic loss against sparse pseudo-ground-truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::conv::{
    conv2d_backward, conv2d_forward, relu_backward, relu_forward, sigmoid, softplus,
};
use super::features2d::{feature_stack_2d, FEAT2D_CHANNELS};
use crate::discover::{LabelMap2D, PixelClass};

pub const SEG_HIDDEN: usize = 16;
const W1_LEN: usize = SEG_HIDDEN * FEAT2D_CHANNELS * 9;
const B1_OFF: usize = W1_LEN;
const W2_OFF: usize = W1_LEN + SEG_HIDDEN;
const W2_LEN: usize = SEG_HIDDEN * 9;
const B2_OFF: usize = W2_OFF + W2_LEN;
pub const SEG_PARAM_COUNT: usize = B2_OFF + 1;

#[derive(Debug, Clone)]
pub struct SegModel2D {
    pub params: Vec<f64>,
}

impl SegModel2D {
    /// Zero-initialized head: every logit is 0, every probability 0.5.
    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; SEG_PARAM_COUNT],
        }
    }

    pub fn random_init(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0; SEG_PARAM_COUNT];
        let s1 = (2.0 / (FEAT2D_CHANNELS as f64 * 9.0)).sqrt();
        for p in params[..W1_LEN].iter_mut() {
            *p = rng.gen_range(-s1..s1);
        }
        let s2 = (2.0 / (SEG_HIDDEN as f64 * 9.0)).sqrt();
        for p in params[W2_OFF..W2_OFF + W2_LEN].iter_mut() {
            *p = rng.gen_range(-s2..s2);
        }
        Self { params }
    }

    /// Per-pixel logits plus the hidden activations needed for backprop.
    pub fn forward(&self, features: &[f64], (h, w): (usize, usize)) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let mut hidden = conv2d_forward(
            features,
            (h, w),
            FEAT2D_CHANNELS,
            SEG_HIDDEN,
            &p[..W1_LEN],
            &p[B1_OFF..B1_OFF + SEG_HIDDEN],
        );
        relu_forward(&mut hidden);
        let logits = conv2d_forward(
            &hidden,
            (h, w),
            SEG_HIDDEN,
            1,
            &p[W2_OFF..W2_OFF + W2_LEN],
            &p[B2_OFF..B2_OFF + 1],
        );
        (logits, hidden)
    }

    /// Parameter gradient given the loss gradient at the logits.
    pub fn backward(
        &self,
        features: &[f64],
        hidden: &[f64],
        grad_logits: &[f64],
        (h, w): (usize, usize),
    ) -> Vec<f64> {
        let p = &self.params;
        let mut grad = vec![0.0; SEG_PARAM_COUNT];
        let (mut grad_hidden, gw2, gb2) = conv2d_backward(
            hidden,
            (h, w),
            SEG_HIDDEN,
            1,
            &p[W2_OFF..W2_OFF + W2_LEN],
            grad_logits,
        );
        relu_backward(hidden, &mut grad_hidden);
        let (_, gw1, gb1) = conv2d_backward(
            features,
            (h, w),
            FEAT2D_CHANNELS,
            SEG_HIDDEN,
            &p[..W1_LEN],
            &grad_hidden,
        );
        grad[..W1_LEN].copy_from_slice(&gw1);
        grad[B1_OFF..B1_OFF + SEG_HIDDEN].copy_from_slice(&gb1);
        grad[W2_OFF..W2_OFF + W2_LEN].copy_from_slice(&gw2);
        grad[B2_OFF..B2_OFF + 1].copy_from_slice(&gb2);
        grad
    }
}

/// Class-balanced logistic loss `Σ m̂ · w(ŝ) · log(1 + exp(−ŝ·s))`.
///
/// Positive- and negative-labeled pixels are reweighted so each class
/// contributes half the total mass whenever both are present. Returns the
/// loss and its gradient with respect to the logits.
pub fn seg_loss(logits: &[f64], labels: &[i8], mask: &[bool]) -> (f64, Vec<f64>) {
    debug_assert_eq!(logits.len(), labels.len());
    debug_assert_eq!(logits.len(), mask.len());
    let pos = mask
        .iter()
        .zip(labels)
        .filter(|(&m, &l)| m && l > 0)
        .count();
    let neg = mask
        .iter()
        .zip(labels)
        .filter(|(&m, &l)| m && l < 0)
        .count();
    let (w_pos, w_neg) = match (pos, neg) {
        (0, 0) => (0.0, 0.0),
        (p, 0) => (1.0 / p as f64, 0.0),
        (0, n) => (0.0, 1.0 / n as f64),
        (p, n) => (0.5 / p as f64, 0.5 / n as f64),
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for i in 0..logits.len() {
        if !mask[i] || labels[i] == 0 {
            continue;
        }
        let y = labels[i] as f64;
        let w = if labels[i] > 0 { w_pos } else { w_neg };
        loss += w * softplus(-y * logits[i]);
        grad[i] = -w * y * sigmoid(-y * logits[i]);
    }
    (loss, grad)
}

/// Converts a supervision map into the (label, mask) pair `seg_loss` takes.
pub fn labels_from_map(map: &LabelMap2D) -> (Vec<i8>, Vec<bool>) {
    let mut labels = vec![0i8; map.classes.len()];
    let mut mask = vec![false; map.classes.len()];
    for (i, c) in map.classes.iter().enumerate() {
        match c {
            PixelClass::Positive => {
                labels[i] = 1;
                mask[i] = true;
            }
            PixelClass::Negative => {
                labels[i] = -1;
                mask[i] = true;
            }
            PixelClass::Ignore => {}
        }
    }
    (labels, mask)
}

/// Sigmoid objectness heatmap for an RGB frame.
pub fn infer_seg(model: &SegModel2D, rgb: &[u8], width: usize, height: usize) -> Vec<f32> {
    let feats = feature_stack_2d(rgb, width, height);
    let (logits, _) = model.forward(&feats.data, (height, width));
    logits.iter().map(|&x| sigmoid(x) as f32).collect()
}
