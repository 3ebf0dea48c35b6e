use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::correlate::{correlate_template, extract_crop};
use super::hungarian::associate_iou;
use super::library::{library_link, CostVolume, TrajectoryLibrary};
use crate::detect::FeatureStack3D;
use crate::geom::{iou_bev, Box3D, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSource {
    Detected,
    Correlated,
    Library,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackStep {
    pub frame: usize,
    pub box3d: Box3D,
    pub source: StepSource,
}

/// One object's track through a sequence. Frames are strictly increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tracklet {
    pub object_id: usize,
    pub steps: Vec<TrackStep>,
    pub verified: bool,
}

impl Tracklet {
    pub fn last_box(&self) -> &Box3D {
        &self.steps.last().unwrap().box3d
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Correlation score below which the tracker hands off to the library.
    pub handoff: f64,
    /// BEV IoU gate for associating with detections.
    pub assoc_gate: f64,
    /// Search window half-extent as a multiple of the box extent.
    pub search_scale: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            handoff: 0.5,
            assoc_gate: 0.1,
            search_scale: 1.5,
        }
    }
}

/// Chains per-frame detections into tracklets by Hungarian IoU association.
/// Unmatched detections start new tracklets; tracklets that miss a frame
/// end there.
pub fn chain_detections(dets: &[Vec<Box3D>], gate: f64) -> Vec<Tracklet> {
    let mut done: Vec<Tracklet> = Vec::new();
    let mut active: Vec<Tracklet> = Vec::new();
    let mut next_id = 0usize;
    for (t, frame_dets) in dets.iter().enumerate() {
        let prev_boxes: Vec<Box3D> = active.iter().map(|tr| *tr.last_box()).collect();
        let matches = associate_iou(&prev_boxes, frame_dets, gate);
        let mut matched_tr = vec![false; active.len()];
        let mut matched_det = vec![false; frame_dets.len()];
        for (i, j) in matches {
            active[i].steps.push(TrackStep {
                frame: t,
                box3d: frame_dets[j],
                source: StepSource::Detected,
            });
            matched_tr[i] = true;
            matched_det[j] = true;
        }
        // Retire tracklets that lost their detection.
        let mut still_active = Vec::new();
        for (i, tr) in active.into_iter().enumerate() {
            if matched_tr[i] {
                still_active.push(tr);
            } else {
                done.push(tr);
            }
        }
        active = still_active;
        for (j, det) in frame_dets.iter().enumerate() {
            if !matched_det[j] {
                active.push(Tracklet {
                    object_id: next_id,
                    steps: vec![TrackStep {
                        frame: t,
                        box3d: *det,
                        source: StepSource::Detected,
                    }],
                    verified: false,
                });
                next_id += 1;
            }
        }
    }
    done.extend(active);
    done.sort_by_key(|tr| tr.object_id);
    done
}

/// Everything the single-object tracker needs per frame.
pub struct TrackInputs<'a> {
    pub feats: &'a [FeatureStack3D],
    pub dets: &'a [Vec<Box3D>],
    pub cost: &'a CostVolume,
    /// Camera motion t -> t+1 (length frames-1); None means static camera.
    pub ego: Option<&'a [RigidTransform]>,
}

fn ego_at(inputs: &TrackInputs, t: usize) -> RigidTransform {
    inputs
        .ego
        .map(|e| e[t])
        .unwrap_or_else(RigidTransform::identity)
}

fn yaw_of(t: &RigidTransform) -> f64 {
    // For near-level rotations, the yaw about +y.
    t.rotation[(0, 2)].atan2(t.rotation[(0, 0)])
}

fn template_dims(b: &Box3D, feats: &FeatureStack3D) -> [usize; 3] {
    let vs = feats.spec.voxel_size;
    let mut dims = [0usize; 3];
    for (a, ext) in [(0, b.size[0]), (1, b.size[1]), (2, b.size[2])] {
        dims[a] = (((ext / vs[a]).ceil() as usize) + 2).clamp(3, feats.spec.dims[a]);
    }
    dims
}

fn crop_at(feats: &FeatureStack3D, center: &Vector3<f64>, dims: [usize; 3]) -> Vec<f64> {
    let spec = feats.spec;
    let mut lo = [0i64; 3];
    for a in 0..3 {
        let f = ((center[a] - spec.origin[a]) / spec.voxel_size[a]).floor() as i64;
        lo[a] = f - dims[a] as i64 / 2;
    }
    extract_crop(feats, lo, dims)
}

fn voxel_of_center(feats: &FeatureStack3D, center: &Vector3<f64>) -> [i64; 3] {
    let spec = feats.spec;
    let mut out = [0i64; 3];
    for a in 0..3 {
        out[a] = ((center[a] - spec.origin[a]) / spec.voxel_size[a]).floor() as i64;
    }
    out
}

/// Tracks a single object from its frame-0 box: template correlation with
/// detection snapping while confident, trajectory-library prediction across
/// occlusions until a detection re-acquires the target.
pub fn track(
    inputs: &TrackInputs,
    init_box: Box3D,
    lib: &TrajectoryLibrary,
    cfg: &TrackConfig,
    object_id: usize,
) -> Tracklet {
    let frames = inputs.feats.len();
    let mut steps = vec![TrackStep {
        frame: 0,
        box3d: init_box,
        source: StepSource::Detected,
    }];
    let tdims = template_dims(&init_box, &inputs.feats[0]);
    let mut template = crop_at(&inputs.feats[0], &init_box.center_v(), tdims);

    // Library state: predicted positions (in each frame's own coordinates)
    // for frames after the handoff.
    let mut library_path: Option<Vec<Vector3<f64>>> = None;

    for t in 0..frames.saturating_sub(1) {
        let cur = steps.last().unwrap().clone();
        let ego = ego_at(inputs, t);
        let pred_center = ego.apply(&cur.box3d.center_v());
        let pred_yaw = cur.box3d.yaw + yaw_of(&ego);
        let pred_box = Box3D::new(
            [pred_center.x, pred_center.y, pred_center.z],
            cur.box3d.size,
            pred_yaw,
            cur.box3d.confidence,
        );
        let feats_next = &inputs.feats[t + 1];

        if let Some(path) = &library_path {
            // Follow the predicted path, watching for a re-detection.
            let k = t + 1 - (steps.last().unwrap().frame + 1);
            let pos = path.get(k).cloned().unwrap_or(pred_center);
            let lib_box = Box3D::new(
                [pos.x, pos.y, pos.z],
                cur.box3d.size,
                pred_yaw,
                cur.box3d.confidence,
            );
            let redetect = inputs.dets[t + 1]
                .iter()
                .map(|d| (iou_bev(&lib_box, d), d))
                .filter(|(i, _)| *i > cfg.assoc_gate)
                .max_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, det)) = redetect {
                steps.push(TrackStep {
                    frame: t + 1,
                    box3d: *det,
                    source: StepSource::Detected,
                });
                template = crop_at(feats_next, &det.center_v(), tdims);
                library_path = None;
            } else {
                steps.push(TrackStep {
                    frame: t + 1,
                    box3d: lib_box,
                    source: StepSource::Library,
                });
                // Keep following the same path, transported one frame on.
                let shifted: Vec<Vector3<f64>> = path
                    .iter()
                    .skip(1)
                    .map(|p| ego_at(inputs, t + 1).apply(p))
                    .collect();
                library_path = if shifted.is_empty() { None } else { Some(shifted) };
            }
            continue;
        }

        // Normal mode: correlation search around the prediction.
        let vs = feats_next.spec.voxel_size;
        let radius = [
            ((cur.box3d.size[0] * cfg.search_scale / vs[0]).ceil() as i64).max(2),
            ((cur.box3d.size[1] * cfg.search_scale / vs[1]).ceil() as i64).max(1),
            ((cur.box3d.size[2] * cfg.search_scale / vs[2]).ceil() as i64).max(2),
        ];
        let corr = correlate_template(
            &template,
            tdims,
            feats_next,
            voxel_of_center(feats_next, &pred_center),
            radius,
        );
        let confident = match &corr {
            Ok((_, score)) => *score >= cfg.handoff,
            Err(_) => false,
        };
        if confident {
            let (offset, score) = corr.unwrap();
            let cand_center = Vector3::new(
                pred_center.x + offset[0] as f64 * vs[0],
                pred_center.y + offset[1] as f64 * vs[1],
                pred_center.z + offset[2] as f64 * vs[2],
            );
            let cand = Box3D::new(
                [cand_center.x, cand_center.y, cand_center.z],
                cur.box3d.size,
                pred_yaw,
                score,
            );
            let snapped = inputs.dets[t + 1]
                .iter()
                .map(|d| (iou_bev(&cand, d), d))
                .filter(|(i, _)| *i > cfg.assoc_gate)
                .max_by(|a, b| a.0.total_cmp(&b.0));
            match snapped {
                Some((_, det)) => {
                    steps.push(TrackStep {
                        frame: t + 1,
                        box3d: *det,
                        source: StepSource::Detected,
                    });
                    template = crop_at(feats_next, &det.center_v(), tdims);
                }
                None => steps.push(TrackStep {
                    frame: t + 1,
                    box3d: cand,
                    source: StepSource::Correlated,
                }),
            }
            continue;
        }

        // Handoff: build the library prediction from the latest observed
        // egomotion-stabilized displacement.
        let initial_motion = if steps.len() >= 2 {
            let a = &steps[steps.len() - 2];
            let b = &steps[steps.len() - 1];
            if b.frame == a.frame + 1 {
                b.box3d.center_v() - ego_at(inputs, a.frame).apply(&a.box3d.center_v())
            } else {
                Vector3::zeros()
            }
        } else {
            Vector3::zeros()
        };
        let horizon = frames - 1 - t;
        // Chained transforms from the current (last seen) frame to each
        // predicted frame, for sampling the per-frame cost grids.
        let mut chains: Vec<RigidTransform> = Vec::with_capacity(horizon);
        let mut acc = RigidTransform::identity();
        for k in 0..horizon {
            acc = ego_at(inputs, t + k).compose(&acc);
            chains.push(acc);
        }
        let cost = inputs.cost;
        let link = library_link(
            &initial_motion,
            &cur.box3d.center_v(),
            lib,
            horizon,
            |k, p| {
                let q = chains[k].apply(p);
                cost.grids
                    .get(t + 1 + k)
                    .map(|g| g.trilinear_sample(&q))
                    .unwrap_or(0.0)
            },
        );
        match link {
            Ok((path, _)) => {
                // Transport each predicted position into its own frame.
                let per_frame: Vec<Vector3<f64>> = path
                    .iter()
                    .enumerate()
                    .map(|(k, p)| chains[k].apply(p))
                    .collect();
                let pos = per_frame[0];
                steps.push(TrackStep {
                    frame: t + 1,
                    box3d: Box3D::new(
                        [pos.x, pos.y, pos.z],
                        cur.box3d.size,
                        pred_yaw,
                        cur.box3d.confidence,
                    ),
                    source: StepSource::Library,
                });
                library_path = if per_frame.len() > 1 {
                    Some(per_frame[1..].to_vec())
                } else {
                    None
                };
            }
            Err(_) => {
                // No library: hold the prediction and keep correlating.
                steps.push(TrackStep {
                    frame: t + 1,
                    box3d: pred_box,
                    source: StepSource::Correlated,
                });
            }
        }
    }

    Tracklet {
        object_id,
        steps,
        verified: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(x: f64, z: f64) -> Box3D {
        Box3D::new([x, 0.0, z], [0.8, 0.8, 0.8], 0.0, 1.0)
    }

    #[test]
    fn chains_follow_smooth_motion() {
        let dets: Vec<Vec<Box3D>> = (0..6)
            .map(|t| vec![boxed(0.1 * t as f64, 2.0), boxed(3.0, 2.0 + 0.2 * t as f64)])
            .collect();
        let tracklets = chain_detections(&dets, 0.1);
        assert_eq!(tracklets.len(), 2);
        for tr in &tracklets {
            assert_eq!(tr.steps.len(), 6);
            // Frames strictly increasing.
            for pair in tr.steps.windows(2) {
                assert!(pair[1].frame > pair[0].frame);
            }
        }
    }

    #[test]
    fn interruption_splits_tracklets() {
        let mut dets: Vec<Vec<Box3D>> = (0..6).map(|t| vec![boxed(0.1 * t as f64, 2.0)]).collect();
        dets[3].clear();
        let tracklets = chain_detections(&dets, 0.1);
        assert_eq!(tracklets.len(), 2);
        assert_eq!(tracklets[0].steps.len(), 3);
        assert_eq!(tracklets[1].steps.len(), 2);
    }
}
