//! Command-line interface: simulate / run / eval / track / viz.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use super::config::PipelineConfig;
use super::dataset::{open_dataset, write_dataset};
use super::eval::{evaluate_map, FrameEval, View};
use super::rounds::{load_all, run_em, DetectionRecord, LoadedData};
use super::trackrun::run_tracking;
use super::viz::{render_frame, save_png};
use super::PipelineError;
use crate::detect::{load_checkpoint, Checkpoint};
use crate::geom::Box3D;
use crate::sim::{generate, SceneSpec};
use crate::track::TrajectoryLibrary;

#[derive(Parser)]
#[command(name = "emtrack", version, about = "Unsupervised moving-object discovery and tracking in RGB-D video", disable_help_subcommand = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the E step.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGB-D dataset.
    Simulate {
        /// Scene spec JSON: one spec or {"sequences": [spec, ...]}.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run EM rounds over a dataset.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate stored detections against dataset ground truth.
    Eval {
        /// Run output directory (or a detections .jsonl file).
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Track every ground-truth frame-0 object with trained models.
    Track {
        #[arg(long)]
        data: PathBuf,
        /// Run output directory holding seg.emck, det.emck, library.json.
        #[arg(long)]
        models: PathBuf,
        /// Initialization mode; only "frame0" is supported.
        #[arg(long, default_value = "frame0")]
        init: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render perspective + BEV box overlays to PNG.
    Viz {
        #[arg(long)]
        data: PathBuf,
        /// Labels/detections JSONL to overlay.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Let clap print help/version normally; everything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(PipelineError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SimSpecFile {
    Many { sequences: Vec<SceneSpec> },
    One(SceneSpec),
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { spec, out } => {
            let mut specs = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path)?;
                    match serde_json::from_str::<SimSpecFile>(&text)? {
                        SimSpecFile::Many { sequences } => sequences,
                        SimSpecFile::One(s) => vec![s],
                    }
                }
                None => vec![SceneSpec::default()],
            };
            if let Some(seed) = cli.global.seed {
                for (i, s) in specs.iter_mut().enumerate() {
                    s.seed = seed.wrapping_add(i as u64);
                }
            }
            let mut seqs = Vec::new();
            for (i, s) in specs.iter().enumerate() {
                let seq = generate(s).map_err(|e| PipelineError::Data(e.to_string()))?;
                seqs.push((format!("seq_{i:03}"), seq));
            }
            let refs: Vec<(String, &crate::sim::Sequence)> =
                seqs.iter().map(|(n, s)| (n.clone(), s)).collect();
            write_dataset(&out, &refs)?;
            println!("wrote {} sequence(s) to {}", refs.len(), out.display());
            Ok(())
        }
        Command::Run {
            data,
            rounds,
            config,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => PipelineConfig::from_json(&fs::read_to_string(&path)?)?,
                None => PipelineConfig::default(),
            };
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if let Some(seed) = cli.global.seed {
                cfg.seed = seed;
            }
            if let Some(jobs) = cli.global.jobs {
                cfg.jobs = jobs.max(1);
            }
            let loaded = load_all(open_dataset(&data)?)?;
            let run = run_em(&loaded, &cfg, &out)?;
            for r in &run.report.rounds {
                println!(
                    "round {}: {} new labels (total {}), BEV mAP@0.5 = {:.3}",
                    r.round,
                    r.new_labels,
                    r.total_labels,
                    r.map_bev.get("0.5").copied().unwrap_or(0.0)
                );
            }
            println!("library entries: {}", run.report.library_entries);
            println!("report: {}", out.join("report.json").display());
            Ok(())
        }
        Command::Eval { pred, gt, report } => {
            let dets_path = resolve_detections(&pred)?;
            let loaded = load_all(open_dataset(&gt)?)?;
            let records = read_detections(&dets_path)?;
            let eval = eval_against(&loaded, &records, 20)?;
            fs::write(&report, serde_json::to_string_pretty(&eval)?)?;
            println!("report: {}", report.display());
            Ok(())
        }
        Command::Track {
            data,
            models,
            init,
            out,
        } => {
            if init != "frame0" {
                return Err(PipelineError::Usage(format!(
                    "unsupported --init '{init}' (only 'frame0')"
                )));
            }
            let loaded = load_all(open_dataset(&data)?)?;
            let Checkpoint::Seg(seg) = load_checkpoint(&models.join("seg.emck"))? else {
                return Err(PipelineError::Data("seg.emck holds the wrong model kind".into()));
            };
            let Checkpoint::Det(det) = load_checkpoint(&models.join("det.emck"))? else {
                return Err(PipelineError::Data("det.emck holds the wrong model kind".into()));
            };
            let library: TrajectoryLibrary = {
                let path = models.join("library.json");
                if path.exists() {
                    serde_json::from_str(&fs::read_to_string(&path)?)?
                } else {
                    TrajectoryLibrary::default()
                }
            };
            let cfg = PipelineConfig {
                seed: cli.global.seed.unwrap_or(0),
                ..PipelineConfig::default()
            };
            let run = run_tracking(&loaded, &seg, &det, &library, &cfg, 20);
            let mut f = fs::File::create(&out)?;
            use std::io::Write;
            for r in &run.records {
                writeln!(f, "{}", serde_json::to_string(r)?)?;
            }
            let report_path = out.with_extension("report.json");
            fs::write(&report_path, serde_json::to_string_pretty(&run.report)?)?;
            println!(
                "tracked {} objects over {} sequences: recall {:.2}, precision {:.2}",
                run.report.objects, run.report.sequences, run.report.recall, run.report.precision
            );
            Ok(())
        }
        Command::Viz { data, labels, out } => {
            let loaded = load_all(open_dataset(&data)?)?;
            let records = read_boxes_generic(&labels)?;
            fs::create_dir_all(&out)?;
            for (s, frames) in loaded.sequences.iter().enumerate() {
                let meta = &loaded.dataset.manifest.sequences[s];
                for (t, frame) in frames.iter().enumerate() {
                    let boxes: Vec<Box3D> = records
                        .iter()
                        .filter(|r| r.seq == meta.name && r.frame_id == t)
                        .map(|r| Box3D::new(r.center, r.size, r.yaw, r.confidence))
                        .collect();
                    let img = render_frame(frame, &boxes, meta.grid);
                    save_png(&img, &out.join(format!("{}_{t:04}.png", meta.name)))?;
                }
            }
            println!("wrote renderings to {}", out.display());
            Ok(())
        }
    }
}

fn resolve_detections(pred: &Path) -> Result<PathBuf, PipelineError> {
    if pred.is_file() {
        return Ok(pred.to_path_buf());
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(pred)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(rest) = name.strip_prefix("detections_round_") {
            if let Some(num) = rest.strip_suffix(".jsonl").and_then(|n| n.parse::<usize>().ok()) {
                if best.as_ref().is_none_or(|(b, _)| num > *b) {
                    best = Some((num, path));
                }
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| {
        PipelineError::Data(format!("{}: no detections_round_*.jsonl found", pred.display()))
    })
}

fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>, PipelineError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

/// Minimal box record shared by label, detection and track JSONL files.
#[derive(Deserialize)]
struct GenericBoxRecord {
    seq: String,
    frame_id: usize,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    #[serde(default)]
    confidence: f64,
}

fn read_boxes_generic(path: &Path) -> Result<Vec<GenericBoxRecord>, PipelineError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

fn eval_against(
    loaded: &LoadedData,
    records: &[DetectionRecord],
    min_pixels: usize,
) -> Result<serde_json::Value, PipelineError> {
    let mut frames = Vec::new();
    for (s, seq_frames) in loaded.sequences.iter().enumerate() {
        let meta = &loaded.dataset.manifest.sequences[s];
        for (t, frame) in seq_frames.iter().enumerate() {
            frames.push(FrameEval {
                dets: records
                    .iter()
                    .filter(|r| r.seq == meta.name && r.frame_id == t)
                    .map(|r| Box3D::new(r.center, r.size, r.yaw, r.confidence))
                    .collect(),
                gts: frame
                    .boxes
                    .iter()
                    .filter(|b| b.moving_type && b.n_pixels >= min_pixels)
                    .map(|b| b.box3d)
                    .collect(),
                intr: frame.intrinsics,
            });
        }
    }
    let mut map_bev = BTreeMap::new();
    let mut map_2d = BTreeMap::new();
    for k in 1..=7 {
        let thr = k as f64 / 10.0;
        map_bev.insert(format!("{thr:.1}"), evaluate_map(&frames, thr, View::Bev));
        map_2d.insert(format!("{thr:.1}"), evaluate_map(&frames, thr, View::TwoD));
    }
    Ok(serde_json::json!({ "map_bev": map_bev, "map_2d": map_2d }))
}
