//! Runs the single-object tracker over a dataset: per-frame inference,
//! cost volumes, estimated egomotion, then one tracklet per ground-truth
//! frame-0 object, with the trajectory library bridging occlusions.

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::estep::{flow_pair, frame_context, unproject_heat};
use super::eval::{evaluate_tracking, TrackingEval};
use super::rounds::LoadedData;
use crate::detect::{feature_stack_3d, infer_det, infer_seg, DetModel3D, FeatureStack3D, SegModel2D, CH_OBJ};
use crate::ego::{estimate_egomotion, lift_flow};
use crate::flow::{check_cycle, warp_backward};
use crate::geom::{raycast_visibility, Box3D, RigidTransform, VoxelGrid};
use crate::track::{
    build_cost_volume, track, StepSource, TrackInputs, Tracklet, TrajectoryLibrary,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRecord {
    pub seq: String,
    pub object_id: usize,
    pub frame_id: usize,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub source: StepSource,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRunReport {
    pub sequences: usize,
    pub objects: usize,
    pub recall: f64,
    pub precision: f64,
    pub iou_over_time: Vec<f64>,
}

pub struct TrackRun {
    pub records: Vec<TrackRecord>,
    pub report: TrackRunReport,
    pub tracklets: Vec<(String, Tracklet)>,
}

/// Estimated per-pair camera motion, identity where the estimate fails the
/// cycle check.
fn egomotion_chain(
    frames: &[crate::sim::Frame],
    cfg: &PipelineConfig,
    seed: u64,
) -> Vec<RigidTransform> {
    let mut out = Vec::new();
    for t in 0..frames.len().saturating_sub(1) {
        let (flow_fw, flow_bw) = flow_pair(&frames[t], &frames[t + 1], cfg, seed.wrapping_add(t as u64));
        let warped_bw = warp_backward(&flow_bw, &flow_fw);
        let mask_fw = check_cycle(&flow_fw, &warped_bw, &cfg.flow.check);
        let warped_fw = warp_backward(&flow_fw, &flow_bw);
        let mask_bw = check_cycle(&flow_bw, &warped_fw, &cfg.flow.check);
        let fw = lift_flow(&flow_fw, Some(&mask_fw), &frames[t].depth, &frames[t + 1].depth, &frames[t].intrinsics);
        let bw = lift_flow(&flow_bw, Some(&mask_bw), &frames[t + 1].depth, &frames[t].depth, &frames[t + 1].intrinsics);
        let mut ransac = cfg.ego.ransac;
        ransac.seed = ransac.seed.wrapping_add(seed).wrapping_add(t as u64);
        let ego = estimate_egomotion(&fw, &bw, &ransac, cfg.ego.cycle_threshold)
            .ok()
            .filter(|e| e.accepted)
            .map(|e| e.t_fw)
            .unwrap_or_else(RigidTransform::identity);
        out.push(ego);
    }
    out
}

/// Tracks every visible moving-type frame-0 object in every sequence.
pub fn run_tracking(
    data: &LoadedData,
    seg: &SegModel2D,
    det: &DetModel3D,
    library: &TrajectoryLibrary,
    cfg: &PipelineConfig,
    min_init_pixels: usize,
) -> TrackRun {
    let mut records = Vec::new();
    let mut all_tracklets = Vec::new();
    let mut evals: Vec<TrackingEval> = Vec::new();
    let mut total_objects = 0usize;

    for (s, frames) in data.sequences.iter().enumerate() {
        let meta = &data.dataset.manifest.sequences[s];
        let grid = meta.grid;

        let mut feats: Vec<FeatureStack3D> = Vec::new();
        let mut dets: Vec<Vec<Box3D>> = Vec::new();
        let mut seg_grids = Vec::new();
        let mut det_grids = Vec::new();
        let mut vis_grids = Vec::new();
        for frame in frames {
            let ctx = frame_context(frame);
            let f3 = feature_stack_3d(&ctx.cloud.points, &ctx.colors, grid);
            let dims = (grid.dims[2], grid.dims[1], grid.dims[0]);
            let (out, _) = det.forward(&f3.data, dims);
            let vol = grid.voxel_count();
            let mut heat = VoxelGrid::zeros(grid, 1);
            for i in 0..vol {
                heat.values[i] = (1.0 / (1.0 + (-out[CH_OBJ * vol + i]).exp())) as f32;
            }
            dets.push(infer_det(&out, grid, &cfg.detection));
            let sheat = infer_seg(seg, &frame.rgb, frame.intrinsics.width as usize, frame.intrinsics.height as usize);
            seg_grids.push(unproject_heat(&sheat, frame.intrinsics.width as usize, &ctx, grid));
            det_grids.push(heat);
            vis_grids.push(raycast_visibility(&ctx.cloud, grid));
            feats.push(f3);
        }
        let cost = build_cost_volume(&seg_grids, &det_grids, &vis_grids);
        let ego = egomotion_chain(frames, cfg, 0x7AC0 + s as u64);

        let inputs = TrackInputs {
            feats: &feats,
            dets: &dets,
            cost: &cost,
            ego: Some(&ego),
        };

        // Ground-truth table per object id.
        let max_id = frames[0].boxes.iter().map(|b| b.id).max().unwrap_or(0);
        let mut gt: Vec<Vec<Option<Box3D>>> = vec![vec![None; frames.len()]; max_id + 1];
        for (t, frame) in frames.iter().enumerate() {
            for b in &frame.boxes {
                gt[b.id][t] = Some(b.box3d);
            }
        }

        let mut seq_tracklets = Vec::new();
        for b in &frames[0].boxes {
            if !b.moving_type || b.n_pixels < min_init_pixels {
                continue;
            }
            total_objects += 1;
            let tr = track(&inputs, b.box3d, library, &cfg.tracking, b.id);
            for step in &tr.steps {
                records.push(TrackRecord {
                    seq: meta.name.clone(),
                    object_id: tr.object_id,
                    frame_id: step.frame,
                    center: step.box3d.center,
                    size: step.box3d.size,
                    yaw: step.box3d.yaw,
                    source: step.source,
                    score: step.box3d.confidence,
                });
            }
            seq_tracklets.push(tr);
        }
        evals.push(evaluate_tracking(&seq_tracklets, &gt));
        for tr in seq_tracklets {
            all_tracklets.push((meta.name.clone(), tr));
        }
    }

    // Aggregate: weight each sequence by its tracked-object count.
    let mut recall = 0.0;
    let mut precision = 0.0;
    let mut weight = 0.0;
    let mut curve: Vec<f64> = Vec::new();
    let mut curve_n: Vec<usize> = Vec::new();
    for (e, n) in evals.iter().zip(data.sequences.iter().map(|f| f.len())) {
        let w = e.iou_over_time.first().map(|_| 1.0).unwrap_or(0.0);
        recall += e.recall * w;
        precision += e.precision * w;
        weight += w;
        for (k, v) in e.iou_over_time.iter().enumerate() {
            if curve.len() <= k {
                curve.push(0.0);
                curve_n.push(0);
            }
            curve[k] += v;
            curve_n[k] += 1;
        }
        let _ = n;
    }
    if weight > 0.0 {
        recall /= weight;
        precision /= weight;
    }
    for (v, n) in curve.iter_mut().zip(&curve_n) {
        *v /= (*n).max(1) as f64;
    }

    TrackRun {
        records,
        report: TrackRunReport {
            sequences: data.sequences.len(),
            objects: total_objects,
            recall,
            precision,
            iou_over_time: curve,
        },
        tracklets: all_tracklets,
    }
}
