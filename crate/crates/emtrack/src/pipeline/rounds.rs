//! The EM orchestrator: expectation over all frames, pseudo-label
//! promotion, maximization (detector training on every label gathered so
//! far), per-round evaluation, and trajectory-library construction from the
//! final round's detections.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::dataset::Dataset;
use super::estep::{e_step, frame_context, promote, unproject_heat, EnsembleCues};
use super::eval::{box_precision, evaluate_map, FrameEval, View};
use super::PipelineError;
use crate::detect::{
    feature_stack_3d, infer_det, infer_seg, save_checkpoint, train_det, train_seg, Checkpoint,
    DetFrame, DetModel3D, SegFrame, SegModel2D, TrainReport, CH_OBJ,
};
use crate::discover::{make_supervision_2d, Cue, PseudoLabel};
use crate::geom::{raycast_visibility, Box3D, VoxelGrid};
use crate::sim::Frame;
use crate::track::{
    build_cost_volume, chain_detections, verify_tracklet, TrajectoryLibrary,
};

/// A pseudo-label pinned to its sequence, as persisted in the round stores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub seq: String,
    pub frame_id: usize,
    pub round: usize,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub confidence: f64,
    pub cues: Vec<Cue>,
}

impl LabelRecord {
    pub fn from_label(seq: &str, l: &PseudoLabel) -> Self {
        Self {
            seq: seq.to_string(),
            frame_id: l.frame_id,
            round: l.round,
            center: l.box3d.center,
            size: l.box3d.size,
            yaw: l.box3d.yaw,
            confidence: l.confidence,
            cues: l.cues.clone(),
        }
    }

    pub fn to_label(&self) -> PseudoLabel {
        PseudoLabel {
            frame_id: self.frame_id,
            round: self.round,
            box3d: Box3D::new(self.center, self.size, self.yaw, self.confidence),
            cues: self.cues.clone(),
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub seq: String,
    pub frame_id: usize,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub new_labels: usize,
    pub total_labels: usize,
    pub egomotion_attempts: usize,
    pub egomotion_accepted: usize,
    /// Precision of this round's labels against currently-moving ground
    /// truth at BEV IoU 0.3.
    pub label_precision_bev03: f64,
    pub map_bev: BTreeMap<String, f64>,
    pub map_2d: BTreeMap<String, f64>,
    pub seg_train: TrainReport,
    pub det_train: TrainReport,
    pub seg_checkpoint: String,
    pub det_checkpoint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub rounds: Vec<RoundReport>,
    pub library_entries: usize,
    pub config: PipelineConfig,
}

/// In-memory dataset: every frame of every sequence.
pub struct LoadedData {
    pub dataset: Dataset,
    pub sequences: Vec<Vec<Frame>>,
}

pub fn load_all(dataset: Dataset) -> Result<LoadedData, PipelineError> {
    let mut sequences = Vec::new();
    for meta in &dataset.manifest.sequences {
        let mut frames = Vec::with_capacity(meta.frames);
        for t in 0..meta.frames {
            frames.push(dataset.load_frame(meta, t)?);
        }
        sequences.push(frames);
    }
    Ok(LoadedData { dataset, sequences })
}

/// Per-frame products of one round's inference pass.
struct InferencePass {
    /// Per flat frame: decoded detections.
    detections: Vec<Vec<Box3D>>,
    /// Per flat frame: 3D objectness probability grid.
    det_heat: Vec<VoxelGrid>,
    /// Per flat frame: 2D objectness heat, image layout.
    seg_heat: Vec<Vec<f32>>,
}

pub struct EmRun {
    pub report: RunReport,
    pub seg: SegModel2D,
    pub det: DetModel3D,
    pub library: TrajectoryLibrary,
}

fn frame_seed(base: u64, seq: usize, t: usize) -> u64 {
    // SplitMix-style mixing keeps per-frame rngs decorrelated and stable.
    let mut x = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(seq as u64 + 1))
        .wrapping_add(0xBF58_476D_1CE4_E5B9u64.wrapping_mul(t as u64 + 1));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x
}

/// Runs the full EM loop and writes all artifacts under `out`.
pub fn run_em(data: &LoadedData, cfg: &PipelineConfig, out: &Path) -> Result<EmRun, PipelineError> {
    fs::create_dir_all(out)?;
    let metas = &data.dataset.manifest.sequences;
    let n_seq = metas.len();

    // Accumulated labels: [seq][frame] -> labels from all rounds so far.
    let mut accumulated: Vec<Vec<Vec<PseudoLabel>>> = (0..n_seq)
        .map(|s| vec![Vec::new(); data.sequences[s].len()])
        .collect();
    let mut seg = SegModel2D::random_init(cfg.seed.wrapping_add(11));
    let mut det = DetModel3D::random_init(cfg.seed.wrapping_add(23));
    let mut prev_pass: Option<InferencePass> = None;
    let mut rounds = Vec::new();

    for round in 1..=cfg.rounds {
        let phase_t = std::time::Instant::now();
        // ---- E step ----
        let pairs: Vec<(usize, usize)> = (0..n_seq)
            .flat_map(|s| (0..data.sequences[s].len().saturating_sub(1)).map(move |t| (s, t)))
            .collect();
        let flat_index = |s: usize, t: usize| -> usize {
            metas[..s].iter().map(|m| m.frames).sum::<usize>() + t
        };
        let run_pair = |&(s, t): &(usize, usize)| {
            let frames = &data.sequences[s];
            let ctx = frame_context(&frames[t]);
            let grid = metas[s].grid;
            let cues_storage;
            let cues = match (&prev_pass, round) {
                (Some(pass), r) if r > 1 => {
                    let fi = flat_index(s, t);
                    cues_storage = EnsembleCues {
                        seg_heat: &pass.seg_heat[fi],
                        det_heat: &pass.det_heat[fi],
                    };
                    Some(&cues_storage)
                }
                _ => None,
            };
            e_step(
                &frames[t],
                &frames[t + 1],
                &ctx,
                grid,
                cfg,
                frame_seed(cfg.seed, s, t),
                cues,
            )
        };
        let outputs: Vec<_> = if cfg.jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| PipelineError::Data(format!("thread pool: {e}")))?;
            pool.install(|| pairs.par_iter().map(run_pair).collect())
        } else {
            pairs.iter().map(run_pair).collect()
        };

        let mut new_labels = 0usize;
        let mut ego_attempts = 0usize;
        let mut ego_accepted = 0usize;
        let mut round_label_frames: Vec<FrameEval> = Vec::new();
        let mut store = Vec::new();
        for ((s, t), output) in pairs.iter().zip(outputs) {
            ego_attempts += 1;
            if output.ego.as_ref().is_some_and(|e| e.accepted) {
                ego_accepted += 1;
            }
            let labels = promote(&output.proposals, *t, round, cfg.promotion.min_confidence);
            new_labels += labels.len();
            for l in &labels {
                store.push(LabelRecord::from_label(&metas[*s].name, l));
            }
            // Label precision bookkeeping against currently-moving GT.
            let frame = &data.sequences[*s][*t];
            round_label_frames.push(FrameEval {
                dets: labels.iter().map(|l| l.box3d).collect(),
                gts: frame
                    .boxes
                    .iter()
                    .filter(|b| b.is_moving && b.n_pixels >= cfg.promotion.eval_min_pixels)
                    .map(|b| b.box3d)
                    .collect(),
                intr: frame.intrinsics,
            });
            accumulated[*s][*t].extend(labels);
        }
        eprintln!("[t] round {round} E-step: {:?}", phase_t.elapsed());
        let phase_t = std::time::Instant::now();
        let label_precision = box_precision(&round_label_frames, 0.3);
        write_jsonl(&out.join(format!("labels_round_{round}.jsonl")), &store)?;

        // ---- M step: train on every label accumulated so far ----
        let seg_frames = build_seg_frames(data, &accumulated);
        let det_frames = build_det_frames(data, &accumulated);
        let lr = if round == 1 { cfg.training.lr_round1 } else { cfg.training.lr_warm };
        let mut aug = cfg.training.augmentation.clone();
        let opt_seed = frame_seed(cfg.seed, 1000 + round, 0);
        let seg_train = train_seg(
            &mut seg,
            &seg_frames,
            &aug,
            &crate::detect::OptimizerConfig {
                iterations: cfg.training.seg_iterations,
                learning_rate: lr,
                accumulation: cfg.training.accumulation,
                seed: opt_seed,
            },
        )
        .map_err(|e| PipelineError::Data(format!("2D training failed: {e}")))?;
        aug.crop3d = cfg.training.augmentation.crop3d;
        let det_train = train_det(
            &mut det,
            &det_frames,
            &aug,
            &crate::detect::OptimizerConfig {
                iterations: cfg.training.det_iterations,
                learning_rate: lr,
                accumulation: cfg.training.accumulation,
                seed: opt_seed.wrapping_add(7),
            },
        )
        .map_err(|e| PipelineError::Data(format!("3D training failed: {e}")))?;

        eprintln!("[t] round {round} M-step: {:?}", phase_t.elapsed());
        let phase_t = std::time::Instant::now();
        // ---- Inference pass with the fresh models ----
        let pass = inference_pass(data, &seg, &det, cfg);

        eprintln!("[t] round {round} inference: {:?}", phase_t.elapsed());
        let phase_t = std::time::Instant::now();
        // ---- Evaluation against visible moving-type ground truth ----
        let mut eval_frames = Vec::new();
        let mut det_records = Vec::new();
        for s in 0..n_seq {
            for (t, frame) in data.sequences[s].iter().enumerate() {
                let fi = flat_index(s, t);
                for d in &pass.detections[fi] {
                    det_records.push(DetectionRecord {
                        seq: metas[s].name.clone(),
                        frame_id: t,
                        center: d.center,
                        size: d.size,
                        yaw: d.yaw,
                        confidence: d.confidence,
                    });
                }
                eval_frames.push(FrameEval {
                    dets: pass.detections[fi].clone(),
                    gts: frame
                        .boxes
                        .iter()
                        .filter(|b| b.moving_type && b.n_pixels >= cfg.promotion.eval_min_pixels)
                        .map(|b| b.box3d)
                        .collect(),
                    intr: frame.intrinsics,
                });
            }
        }
        write_jsonl(&out.join(format!("detections_round_{round}.jsonl")), &det_records)?;
        let mut map_bev = BTreeMap::new();
        let mut map_2d = BTreeMap::new();
        for k in 1..=7 {
            let thr = k as f64 / 10.0;
            map_bev.insert(format!("{thr:.1}"), evaluate_map(&eval_frames, thr, View::Bev));
            map_2d.insert(format!("{thr:.1}"), evaluate_map(&eval_frames, thr, View::TwoD));
        }

        eprintln!("[t] round {round} eval: {:?}", phase_t.elapsed());
        let seg_ckpt = format!("seg_round_{round}.emck");
        let det_ckpt = format!("det_round_{round}.emck");
        save_checkpoint(&out.join(&seg_ckpt), &Checkpoint::Seg(seg.clone()))?;
        save_checkpoint(&out.join(&det_ckpt), &Checkpoint::Det(det.clone()))?;

        let total_labels: usize = accumulated
            .iter()
            .flat_map(|s| s.iter().map(|f| f.len()))
            .sum();
        rounds.push(RoundReport {
            round,
            new_labels,
            total_labels,
            egomotion_attempts: ego_attempts,
            egomotion_accepted: ego_accepted,
            label_precision_bev03: label_precision,
            map_bev,
            map_2d,
            seg_train: seg_train.clone(),
            det_train: det_train.clone(),
            seg_checkpoint: seg_ckpt,
            det_checkpoint: det_ckpt,
        });
        prev_pass = Some(pass);
    }

    // ---- Trajectory library from the final round's detections ----
    let pass = prev_pass.as_ref().unwrap();
    let mut library = TrajectoryLibrary::default();
    let flat_index = |s: usize, t: usize| -> usize {
        metas[..s].iter().map(|m| m.frames).sum::<usize>() + t
    };
    for s in 0..n_seq {
        let frames = &data.sequences[s];
        let grid = metas[s].grid;
        let dets: Vec<Vec<Box3D>> = (0..frames.len())
            .map(|t| pass.detections[flat_index(s, t)].clone())
            .collect();
        let tracklets = chain_detections(&dets, cfg.tracking.assoc_gate);
        // Cost volume for verification.
        let mut seg_grids = Vec::new();
        let mut vis_grids = Vec::new();
        let mut det_grids = Vec::new();
        for (t, frame) in frames.iter().enumerate() {
            let ctx = frame_context(frame);
            let fi = flat_index(s, t);
            seg_grids.push(unproject_heat(
                &pass.seg_heat[fi],
                frame.intrinsics.width as usize,
                &ctx,
                grid,
            ));
            vis_grids.push(raycast_visibility(&ctx.cloud, grid));
            det_grids.push(pass.det_heat[fi].clone());
        }
        let cost = build_cost_volume(&seg_grids, &det_grids, &vis_grids);
        let flows: Vec<Option<crate::flow::FlowField>> = (0..frames.len())
            .map(|t| {
                (t + 1 < frames.len()).then(|| {
                    super::estep::flow_pair(&frames[t], &frames[t + 1], cfg, frame_seed(cfg.seed, s, t)).0
                })
            })
            .collect();
        let flow_refs: Vec<Option<&crate::flow::FlowField>> =
            flows.iter().map(|f| f.as_ref()).collect();
        for mut tr in tracklets {
            tr.verified = verify_tracklet(&tr, &flow_refs, &cost, &frames[0].intrinsics, &cfg.verify);
            if tr.verified {
                library.add_tracklet(&tr);
            }
        }
    }
    fs::write(out.join("library.json"), serde_json::to_string_pretty(&library)?)?;
    save_checkpoint(&out.join("seg.emck"), &Checkpoint::Seg(seg.clone()))?;
    save_checkpoint(&out.join("det.emck"), &Checkpoint::Det(det.clone()))?;

    let report = RunReport {
        rounds,
        library_entries: library.len(),
        config: cfg.clone(),
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(EmRun {
        report,
        seg,
        det,
        library,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let mut f = fs::File::create(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_labels_jsonl(path: &Path) -> Result<Vec<LabelRecord>, PipelineError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

fn build_seg_frames(data: &LoadedData, labels: &[Vec<Vec<PseudoLabel>>]) -> Vec<SegFrame> {
    let mut out = Vec::new();
    for (s, frames) in data.sequences.iter().enumerate() {
        for (t, frame) in frames.iter().enumerate() {
            if labels[s][t].is_empty() {
                continue;
            }
            let ctx = frame_context(frame);
            let map = make_supervision_2d(&labels[s][t], &ctx.cloud, &frame.intrinsics);
            out.push(SegFrame {
                rgb: frame.rgb.clone(),
                width: frame.intrinsics.width as usize,
                height: frame.intrinsics.height as usize,
                label_map: map,
            });
        }
    }
    out
}

fn build_det_frames(data: &LoadedData, labels: &[Vec<Vec<PseudoLabel>>]) -> Vec<DetFrame> {
    let mut out = Vec::new();
    for (s, frames) in data.sequences.iter().enumerate() {
        let grid = data.dataset.manifest.sequences[s].grid;
        for (t, frame) in frames.iter().enumerate() {
            if labels[s][t].is_empty() {
                continue;
            }
            let ctx = frame_context(frame);
            out.push(DetFrame {
                points: ctx.cloud.points.clone(),
                colors: ctx.colors.clone(),
                pixels: ctx.cloud.pixels.clone().unwrap(),
                labels: labels[s][t].clone(),
                intrinsics: frame.intrinsics,
                grid,
            });
        }
    }
    out
}

fn inference_pass(
    data: &LoadedData,
    seg: &SegModel2D,
    det: &DetModel3D,
    cfg: &PipelineConfig,
) -> InferencePass {
    let mut detections = Vec::new();
    let mut det_heat = Vec::new();
    let mut seg_heat = Vec::new();
    for (s, frames) in data.sequences.iter().enumerate() {
        let grid = data.dataset.manifest.sequences[s].grid;
        for frame in frames {
            let ctx = frame_context(frame);
            let feats = feature_stack_3d(&ctx.cloud.points, &ctx.colors, grid);
            let dims = (grid.dims[2], grid.dims[1], grid.dims[0]);
            let (out, _) = det.forward(&feats.data, dims);
            let vol = grid.voxel_count();
            let mut heat = VoxelGrid::zeros(grid, 1);
            for i in 0..vol {
                heat.values[i] = (1.0 / (1.0 + (-out[CH_OBJ * vol + i]).exp())) as f32;
            }
            detections.push(infer_det(&out, grid, &cfg.detection));
            det_heat.push(heat);
            seg_heat.push(infer_seg(
                seg,
                &frame.rgb,
                frame.intrinsics.width as usize,
                frame.intrinsics.height as usize,
            ));
        }
    }
    InferencePass {
        detections,
        det_heat,
        seg_heat,
    }
}
