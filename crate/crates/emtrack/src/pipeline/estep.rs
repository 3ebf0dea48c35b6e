//! Per-frame expectation step: flow, cycle certification, egomotion,
//! motion field, and proposal generation (handcrafted in round 1, ensemble
//! fusion afterwards).

use super::config::{FlowSource, PipelineConfig};
use crate::discover::{fuse_ensemble, motion_proposals, Proposal, PseudoLabel};
use crate::ego::{estimate_egomotion, lift_flow, motion_field, EgomotionEstimate, MotionField};
use crate::flow::{check_cycle, estimate_flow, warp_backward, FlowField, GrayImage};
use crate::geom::{unproject, GridSpec, PointCloud, VoxelGrid};
use crate::sim::{corrupt_flow, FlowNoiseSpec, Frame};

/// Cheap per-frame derived state shared by several stages.
pub struct FrameContext {
    pub cloud: PointCloud,
    pub colors: Vec<[u8; 3]>,
}

pub fn frame_context(frame: &Frame) -> FrameContext {
    let cloud = unproject(&frame.depth, &frame.intrinsics);
    let colors: Vec<[u8; 3]> = cloud
        .pixels
        .as_ref()
        .unwrap()
        .iter()
        .map(|&(u, v)| {
            let i = ((v * frame.intrinsics.width + u) * 3) as usize;
            [frame.rgb[i], frame.rgb[i + 1], frame.rgb[i + 2]]
        })
        .collect();
    FrameContext { cloud, colors }
}

/// The flow pair (forward from t, backward from t+1) for a frame pair,
/// from files or block matching per the config.
pub fn flow_pair(
    frame_t: &Frame,
    frame_t1: &Frame,
    cfg: &PipelineConfig,
    frame_seed: u64,
) -> (FlowField, FlowField) {
    let stored = (frame_t.flow_fw.clone(), frame_t1.flow_bw.clone());
    match (cfg.flow.source, stored) {
        (FlowSource::Files, (Some(mut fw), Some(mut bw))) => {
            if cfg.flow.noise_sigma > 0.0 || cfg.flow.corrupt_rho > 0.0 {
                let (f, _) = corrupt_flow(
                    &fw,
                    &FlowNoiseSpec {
                        sigma: cfg.flow.noise_sigma,
                        rho: cfg.flow.corrupt_rho,
                        seed: frame_seed,
                    },
                );
                fw = f;
                let (b, _) = corrupt_flow(
                    &bw,
                    &FlowNoiseSpec {
                        sigma: cfg.flow.noise_sigma,
                        rho: cfg.flow.corrupt_rho,
                        seed: frame_seed.wrapping_add(1),
                    },
                );
                bw = b;
            }
            (fw, bw)
        }
        _ => {
            let g0 = GrayImage::from_rgb8(&frame_t.rgb, frame_t.intrinsics.width, frame_t.intrinsics.height);
            let g1 = GrayImage::from_rgb8(&frame_t1.rgb, frame_t1.intrinsics.width, frame_t1.intrinsics.height);
            (estimate_flow(&g0, &g1), estimate_flow(&g1, &g0))
        }
    }
}

/// Appearance cues from the previous round's models, already inferred.
pub struct EnsembleCues<'a> {
    /// Per-pixel 2D objectness heat (same layout as the image).
    pub seg_heat: &'a [f32],
    /// Per-voxel 3D objectness probability.
    pub det_heat: &'a VoxelGrid,
}

pub struct EStepOutput {
    pub ego: Option<EgomotionEstimate>,
    pub field: Option<MotionField>,
    pub proposals: Vec<Proposal>,
}

/// Runs the expectation step for the pair (t, t+1).
///
/// Round 1 uses the handcrafted path (motion threshold, connected
/// components, center-surround gate). Later rounds fuse the motion heat
/// with the 2D/3D appearance modules. Frames whose egomotion fails the
/// cycle check contribute no proposals.
pub fn e_step(
    frame_t: &Frame,
    frame_t1: &Frame,
    ctx_t: &FrameContext,
    grid: GridSpec,
    cfg: &PipelineConfig,
    frame_seed: u64,
    cues: Option<&EnsembleCues>,
) -> EStepOutput {
    let (flow_fw, flow_bw) = flow_pair(frame_t, frame_t1, cfg, frame_seed);

    let warped_bw = warp_backward(&flow_bw, &flow_fw);
    let mask_fw = check_cycle(&flow_fw, &warped_bw, &cfg.flow.check);
    let warped_fw = warp_backward(&flow_fw, &flow_bw);
    let mask_bw = check_cycle(&flow_bw, &warped_fw, &cfg.flow.check);

    let lifted_fw = lift_flow(&flow_fw, Some(&mask_fw), &frame_t.depth, &frame_t1.depth, &frame_t.intrinsics);
    let lifted_bw = lift_flow(&flow_bw, Some(&mask_bw), &frame_t1.depth, &frame_t.depth, &frame_t1.intrinsics);

    let mut ransac = cfg.ego.ransac;
    ransac.seed = ransac.seed.wrapping_add(frame_seed);
    let ego = match estimate_egomotion(&lifted_fw, &lifted_bw, &ransac, cfg.ego.cycle_threshold) {
        Ok(e) => e,
        Err(_) => {
            return EStepOutput {
                ego: None,
                field: None,
                proposals: Vec::new(),
            }
        }
    };
    if !ego.accepted {
        return EStepOutput {
            ego: Some(ego),
            field: None,
            proposals: Vec::new(),
        };
    }

    let field = motion_field(&lifted_fw, &ego.t_fw);
    let mag = field.magnitude_grid(grid);

    let proposals = match cues {
        None => motion_proposals(&field, &mag, &cfg.saliency, cfg.fusion.lambda),
        Some(c) => {
            let seg_grid = unproject_heat(c.seg_heat, frame_t.intrinsics.width as usize, ctx_t, grid);
            let (_, props) = fuse_ensemble(
                &mag,
                &seg_grid,
                c.det_heat,
                &ctx_t.cloud,
                &cfg.fusion,
                &cfg.saliency,
            );
            props
        }
    };

    EStepOutput {
        ego: Some(ego),
        field: Some(field),
        proposals,
    }
}

/// Max-pools a per-pixel heatmap onto the voxels its points fall into.
pub fn unproject_heat(heat: &[f32], width: usize, ctx: &FrameContext, grid: GridSpec) -> VoxelGrid {
    let mut g = VoxelGrid::zeros(grid, 1);
    let pixels = ctx.cloud.pixels.as_ref().unwrap();
    for (k, p) in ctx.cloud.points.iter().enumerate() {
        if let Some((ix, iy, iz)) = grid.voxel_of(p) {
            let (u, v) = pixels[k];
            let h = heat[v as usize * width + u as usize];
            if h > g.get(ix, iy, iz) {
                g.set(ix, iy, iz, h);
            }
        }
    }
    g
}

/// Promotes proposals into pseudo-labels.
pub fn promote(proposals: &[Proposal], frame_id: usize, round: usize, min_confidence: f64) -> Vec<PseudoLabel> {
    proposals
        .iter()
        .filter(|p| p.confidence >= min_confidence)
        .map(|p| PseudoLabel {
            frame_id,
            round,
            box3d: p.box3d,
            cues: p.cues.clone(),
            confidence: p.confidence,
        })
        .collect()
}
