//! Detection and tracking evaluation: greedy-matched all-point average
//! precision at IoU thresholds in perspective (2D) and bird's-eye view,
//! and the IoU-over-time / recall / precision tracking protocol.

use serde::{Deserialize, Serialize};

use crate::geom::{iou_2d, iou_3d, iou_bev, Box2D, Box3D, Intrinsics};
use crate::track::Tracklet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Bev,
    TwoD,
}

/// Detections and ground truth of one frame, with the intrinsics needed for
/// the perspective view.
#[derive(Debug, Clone)]
pub struct FrameEval {
    pub dets: Vec<Box3D>,
    pub gts: Vec<Box3D>,
    pub intr: Intrinsics,
}

/// All-point average precision with greedy confidence-ordered matching:
/// each detection (descending confidence) claims the unmatched ground-truth
/// box with the highest IoU if that IoU clears the threshold.
pub fn evaluate_map(frames: &[FrameEval], threshold: f64, view: View) -> f64 {
    // Flatten to (frame, conf, iou-key), projecting for the 2D view.
    enum Key {
        B3(Box3D),
        B2(Box2D),
    }
    let iou = |a: &Key, b: &Key| -> f64 {
        match (a, b) {
            (Key::B3(x), Key::B3(y)) => iou_bev(x, y),
            (Key::B2(x), Key::B2(y)) => iou_2d(x, y),
            _ => 0.0,
        }
    };
    let mut dets: Vec<(usize, f64, Key)> = Vec::new();
    let mut gts: Vec<Vec<Key>> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        let mut frame_gts = Vec::new();
        for g in &f.gts {
            match view {
                View::Bev => frame_gts.push(Key::B3(*g)),
                View::TwoD => {
                    if let Some(b) = Box2D::from_projected(g, &f.intr, 1.0) {
                        frame_gts.push(Key::B2(b));
                    }
                }
            }
        }
        gts.push(frame_gts);
        for d in &f.dets {
            match view {
                View::Bev => dets.push((fi, d.confidence, Key::B3(*d))),
                View::TwoD => {
                    if let Some(b) = Box2D::from_projected(d, &f.intr, d.confidence) {
                        dets.push((fi, d.confidence, Key::B2(b)));
                    }
                }
            }
        }
    }
    let n_gt: usize = gts.iter().map(|g| g.len()).sum();
    if n_gt == 0 {
        return 0.0;
    }
    dets.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut claimed: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(dets.len());
    for (fi, _, key) in &dets {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts[*fi].iter().enumerate() {
            if claimed[*fi][gi] {
                continue;
            }
            let v = iou(key, g);
            if v >= threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                claimed[*fi][gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }

    // Area under the precision envelope; each TP adds 1/n_gt recall.
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut tp_cum = 0usize;
    for (k, &tp) in tp_flags.iter().enumerate() {
        if tp {
            tp_cum += 1;
        }
        precisions.push(tp_cum as f64 / (k + 1) as f64);
    }
    let mut ap = 0.0;
    let mut envelope: f64 = 0.0;
    for k in (0..tp_flags.len()).rev() {
        envelope = envelope.max(precisions[k]);
        if tp_flags[k] {
            ap += envelope / n_gt as f64;
        }
    }
    ap
}

/// Fraction of predicted boxes that match some ground-truth box at the BEV
/// IoU threshold (one-to-one, confidence-ordered). 1.0 when nothing was
/// predicted.
pub fn box_precision(frames: &[FrameEval], threshold: f64) -> f64 {
    let mut total = 0usize;
    let mut hit = 0usize;
    for f in frames {
        let mut order: Vec<usize> = (0..f.dets.len()).collect();
        order.sort_by(|&a, &b| f.dets[b].confidence.total_cmp(&f.dets[a].confidence));
        let mut claimed = vec![false; f.gts.len()];
        for di in order {
            total += 1;
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in f.gts.iter().enumerate() {
                if claimed[gi] {
                    continue;
                }
                let v = iou_bev(&f.dets[di], g);
                if v >= threshold && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            if let Some((gi, _)) = best {
                claimed[gi] = true;
                hit += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingEval {
    /// Mean 3D IoU against ground truth per frame offset.
    pub iou_over_time: Vec<f64>,
    /// Fraction of objects still tracked (IoU ≥ 0.5) at the final frame.
    pub recall: f64,
    /// Fraction of tracklets that begin and end on the same object.
    pub precision: f64,
}

/// Evaluates tracklets initialized from ground-truth frame-0 boxes.
/// `gt[object][frame]` holds each object's box when present.
pub fn evaluate_tracking(tracklets: &[Tracklet], gt: &[Vec<Option<Box3D>>]) -> TrackingEval {
    let frames = gt.iter().map(|g| g.len()).max().unwrap_or(0);
    let mut iou_over_time = Vec::new();
    for k in 0..frames {
        let mut acc = 0.0;
        let mut n = 0usize;
        for tr in tracklets {
            let Some(gt_box) = gt.get(tr.object_id).and_then(|g| g.get(k)).and_then(|b| *b) else {
                continue;
            };
            let Some(step) = tr.steps.iter().find(|s| s.frame == k) else {
                continue;
            };
            acc += iou_3d(&step.box3d, &gt_box);
            n += 1;
        }
        if n == 0 {
            break;
        }
        iou_over_time.push(acc / n as f64);
    }

    let mut tracked = 0usize;
    let mut considered = 0usize;
    for tr in tracklets {
        let Some(obj_gt) = gt.get(tr.object_id) else {
            continue;
        };
        // Final frame where this object has ground truth.
        let Some(last_f) = (0..obj_gt.len()).rev().find(|&f| obj_gt[f].is_some()) else {
            continue;
        };
        considered += 1;
        if let Some(step) = tr.steps.iter().find(|s| s.frame == last_f) {
            if iou_3d(&step.box3d, &obj_gt[last_f].unwrap()) >= 0.5 {
                tracked += 1;
            }
        }
    }
    let recall = if considered == 0 {
        0.0
    } else {
        tracked as f64 / considered as f64
    };

    let mut same = 0usize;
    let mut total = 0usize;
    for tr in tracklets {
        let (Some(first), Some(last)) = (tr.steps.first(), tr.steps.last()) else {
            continue;
        };
        total += 1;
        let nearest = |frame: usize, b: &Box3D| -> Option<usize> {
            let mut best: Option<(usize, f64)> = None;
            for (oid, seq) in gt.iter().enumerate() {
                if let Some(Some(g)) = seq.get(frame) {
                    let v = iou_3d(b, g);
                    if v > 0.0 && best.map_or(true, |(_, bv)| v > bv) {
                        best = Some((oid, v));
                    }
                }
            }
            best.map(|(oid, _)| oid)
        };
        let a = nearest(first.frame, &first.box3d);
        let b = nearest(last.frame, &last.box3d);
        if a.is_some() && a == b {
            same += 1;
        }
    }
    let precision = if total == 0 { 0.0 } else { same as f64 / total as f64 };

    TrackingEval {
        iou_over_time,
        recall,
        precision,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 48.0,
            width: 128,
            height: 96,
        }
    }

    fn boxed(x: f64, z: f64, conf: f64) -> Box3D {
        Box3D::new([x, 0.0, z], [1.0, 1.0, 1.0], 0.0, conf)
    }

    #[test]
    fn single_match_above_threshold_is_perfect_ap() {
        // det vs gt at IoU ~0.6: AP 1.0 at threshold 0.5, 0.0 at 0.7.
        let det = boxed(0.25, 4.0, 0.9);
        let gt = boxed(0.0, 4.0, 1.0);
        // Overlap 0.75 over union 1.25.
        assert!((iou_bev(&det, &gt) - 0.6).abs() < 1e-9);
        let frames = vec![FrameEval {
            dets: vec![det],
            gts: vec![gt],
            intr: intr(),
        }];
        assert_eq!(evaluate_map(&frames, 0.42, View::Bev), 1.0);
        assert_eq!(evaluate_map(&frames, 0.7, View::Bev), 0.0);
    }

    #[test]
    fn identical_pred_gt_gives_ap_one_in_both_views() {
        let frames = vec![FrameEval {
            dets: vec![boxed(0.0, 4.0, 0.8), boxed(2.0, 6.0, 0.6)],
            gts: vec![boxed(0.0, 4.0, 1.0), boxed(2.0, 6.0, 1.0)],
            intr: intr(),
        }];
        for thr in [0.1, 0.3, 0.5, 0.7] {
            assert_eq!(evaluate_map(&frames, thr, View::Bev), 1.0);
            assert_eq!(evaluate_map(&frames, thr, View::TwoD), 1.0);
        }
    }

    #[test]
    fn false_positive_before_true_positive_halves_ap() {
        let frames = vec![FrameEval {
            dets: vec![boxed(10.0, 10.0, 0.9), boxed(0.0, 4.0, 0.5)],
            gts: vec![boxed(0.0, 4.0, 1.0)],
            intr: intr(),
        }];
        // Precision at the TP is 1/2, single recall step.
        assert_eq!(evaluate_map(&frames, 0.5, View::Bev), 0.5);
    }

    #[test]
    fn perfect_tracklets_score_ones() {
        let gt: Vec<Vec<Option<Box3D>>> = vec![(0..5)
            .map(|t| Some(boxed(0.2 * t as f64, 4.0, 1.0)))
            .collect()];
        let tracklets = vec![Tracklet {
            object_id: 0,
            steps: (0..5)
                .map(|t| crate::track::TrackStep {
                    frame: t,
                    box3d: boxed(0.2 * t as f64, 4.0, 1.0),
                    source: crate::track::StepSource::Detected,
                })
                .collect(),
            verified: false,
        }];
        let eval = evaluate_tracking(&tracklets, &gt);
        assert_eq!(eval.recall, 1.0);
        assert_eq!(eval.precision, 1.0);
        assert!(eval.iou_over_time.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_motion_tracker_decays_on_moving_scene() {
        let gt: Vec<Vec<Option<Box3D>>> = vec![(0..8)
            .map(|t| Some(boxed(0.3 * t as f64, 4.0, 1.0)))
            .collect()];
        let tracklets = vec![Tracklet {
            object_id: 0,
            steps: (0..8)
                .map(|t| crate::track::TrackStep {
                    frame: t,
                    box3d: boxed(0.0, 4.0, 1.0),
                    source: crate::track::StepSource::Correlated,
                })
                .collect(),
            verified: false,
        }];
        let eval = evaluate_tracking(&tracklets, &gt);
        assert_eq!(eval.recall, 0.0);
        assert!(eval.iou_over_time[0] > 0.99);
        assert!(eval.iou_over_time[7] < 0.05);
        for pair in eval.iou_over_time.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }
}
