//! Dataset directory I/O.
//!
//! Layout: `manifest.json` at the root plus one subdirectory per sequence
//! holding `rgb_%04d.ppm` (binary P6), `depth_%04d.pfm` (little-endian PFM,
//! invalid pixels 0), `gt_%04d.json` (boxes, pose, intrinsics),
//! `flow_%04d.bin` (forward flow, raw f32 LE, H·W·2, row-major, (du,dv))
//! and `flowbw_%04d.bin` (backward flow, same layout, frames 1..T).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::flow::{read_flow_bin, write_flow_bin, FlowDirection};
use crate::geom::{Box3D, DepthMap, GridSpec, Intrinsics, RigidTransform};
use crate::sim::{Frame, GtBox, Sequence};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub name: String,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub sequences: Vec<SequenceMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GtBoxJson {
    id: usize,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    moving_type: bool,
    is_moving: bool,
    n_pixels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GtJson {
    pose: RigidTransform,
    intrinsics: Intrinsics,
    boxes: Vec<GtBoxJson>,
}

fn write_ppm(path: &Path, rgb: &[u8], width: u32, height: u32) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", width, height)?;
    w.write_all(rgb)?;
    w.flush()
}

fn read_ppm(path: &Path) -> Result<(Vec<u8>, u32, u32), PipelineError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // Three whitespace-delimited tokens after the magic; then one byte.
    let mut tokens = Vec::new();
    let mut magic = [0u8; 2];
    r.read_exact(&mut magic)?;
    if &magic != b"P6" {
        return Err(PipelineError::Data(format!("{}: not a P6 ppm", path.display())));
    }
    while tokens.len() < 3 {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        if b[0].is_ascii_whitespace() {
            if !header.is_empty() {
                tokens.push(String::from_utf8_lossy(&header).to_string());
                header.clear();
            }
        } else if b[0] == b'#' {
            let mut line = String::new();
            r.read_line(&mut line)?;
        } else {
            header.push(b[0]);
        }
    }
    let width: u32 = tokens[0].parse().map_err(|_| bad(path, "width"))?;
    let height: u32 = tokens[1].parse().map_err(|_| bad(path, "height"))?;
    if tokens[2] != "255" {
        return Err(bad(path, "maxval"));
    }
    let mut rgb = vec![0u8; (width * height * 3) as usize];
    r.read_exact(&mut rgb)?;
    Ok((rgb, width, height))
}

fn bad(path: &Path, what: &str) -> PipelineError {
    PipelineError::Data(format!("{}: bad {what}", path.display()))
}

/// PFM convention: rows stored bottom-to-top, negative scale marks little
/// endian. Invalid depths are written as 0.
fn write_pfm(path: &Path, depth: &DepthMap) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", depth.width, depth.height)?;
    for v in (0..depth.height).rev() {
        for u in 0..depth.width {
            let i = depth.idx(u, v);
            let val = if depth.valid[i] { depth.values[i] } else { 0.0 };
            w.write_all(&val.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_pfm(path: &Path) -> Result<DepthMap, PipelineError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "Pf" {
        return Err(bad(path, "pfm magic (grayscale Pf expected)"));
    }
    line.clear();
    r.read_line(&mut line)?;
    let mut it = line.split_whitespace();
    let width: u32 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(path, "size"))?;
    let height: u32 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(path, "size"))?;
    line.clear();
    r.read_line(&mut line)?;
    let scale: f32 = line.trim().parse().map_err(|_| bad(path, "scale"))?;
    if scale >= 0.0 {
        return Err(bad(path, "endianness (little-endian expected)"));
    }
    let mut bytes = vec![0u8; (width * height * 4) as usize];
    r.read_exact(&mut bytes)?;
    let mut depth = DepthMap::new_invalid(width, height);
    for row in 0..height {
        let v = height - 1 - row; // bottom-up storage
        for u in 0..width {
            let o = ((row * width + u) * 4) as usize;
            let val = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            if val > 0.0 && val.is_finite() {
                depth.set(u, v, val);
            }
        }
    }
    Ok(depth)
}

pub fn write_dataset(dir: &Path, sequences: &[(String, &Sequence)]) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    let metas: Vec<SequenceMeta> = sequences
        .iter()
        .map(|(name, seq)| SequenceMeta {
            name: name.clone(),
            frames: seq.frames.len(),
            width: seq.spec.width,
            height: seq.spec.height,
            intrinsics: seq.spec.intrinsics(),
            grid: seq.grid,
        })
        .collect();
    let manifest = Manifest { sequences: metas };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    for (name, seq) in sequences {
        let sdir = dir.join(name);
        fs::create_dir_all(&sdir)?;
        for (t, frame) in seq.frames.iter().enumerate() {
            write_ppm(
                &sdir.join(format!("rgb_{t:04}.ppm")),
                &frame.rgb,
                seq.spec.width,
                seq.spec.height,
            )?;
            write_pfm(&sdir.join(format!("depth_{t:04}.pfm")), &frame.depth)?;
            let gt = GtJson {
                pose: frame.pose,
                intrinsics: frame.intrinsics,
                boxes: frame
                    .boxes
                    .iter()
                    .map(|b| GtBoxJson {
                        id: b.id,
                        center: b.box3d.center,
                        size: b.box3d.size,
                        yaw: b.box3d.yaw,
                        moving_type: b.moving_type,
                        is_moving: b.is_moving,
                        n_pixels: b.n_pixels,
                    })
                    .collect(),
            };
            fs::write(
                sdir.join(format!("gt_{t:04}.json")),
                serde_json::to_string_pretty(&gt)?,
            )?;
            if let Some(flow) = &frame.flow_fw {
                write_flow_bin(&sdir.join(format!("flow_{t:04}.bin")), flow)?;
            }
            if let Some(flow) = &frame.flow_bw {
                write_flow_bin(&sdir.join(format!("flowbw_{t:04}.bin")), flow)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

pub fn open_dataset(dir: &Path) -> Result<Dataset, PipelineError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(PipelineError::Data(format!(
            "{}: no manifest.json (not a dataset directory)",
            dir.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        manifest,
    })
}

impl Dataset {
    /// Loads one frame with its ground truth and any stored flow.
    pub fn load_frame(&self, seq: &SequenceMeta, t: usize) -> Result<Frame, PipelineError> {
        let sdir = self.root.join(&seq.name);
        let (rgb, w, h) = read_ppm(&sdir.join(format!("rgb_{t:04}.ppm")))?;
        if (w, h) != (seq.width, seq.height) {
            return Err(PipelineError::Data(format!(
                "{}: frame {t} size {w}x{h} does not match manifest {}x{}",
                seq.name, seq.width, seq.height
            )));
        }
        let depth = read_pfm(&sdir.join(format!("depth_{t:04}.pfm")))?;
        let gt_path = sdir.join(format!("gt_{t:04}.json"));
        let gt: GtJson = serde_json::from_str(&fs::read_to_string(&gt_path)?)?;
        let flow_fw_path = sdir.join(format!("flow_{t:04}.bin"));
        let flow_fw = if flow_fw_path.exists() {
            Some(read_flow_bin(
                &flow_fw_path,
                seq.width,
                seq.height,
                FlowDirection::Forward,
                (t, t + 1),
            )?)
        } else {
            None
        };
        let flow_bw_path = sdir.join(format!("flowbw_{t:04}.bin"));
        let flow_bw = if flow_bw_path.exists() {
            Some(read_flow_bin(
                &flow_bw_path,
                seq.width,
                seq.height,
                FlowDirection::Backward,
                (t, t.saturating_sub(1)),
            )?)
        } else {
            None
        };
        Ok(Frame {
            rgb,
            depth,
            intrinsics: gt.intrinsics,
            pose: gt.pose,
            boxes: gt
                .boxes
                .into_iter()
                .map(|b| GtBox {
                    id: b.id,
                    box3d: Box3D::new(b.center, b.size, b.yaw, 1.0),
                    moving_type: b.moving_type,
                    is_moving: b.is_moving,
                    n_pixels: b.n_pixels,
                })
                .collect(),
            flow_fw,
            flow_bw,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, SceneSpec};

    #[test]
    fn dataset_round_trip_preserves_frames() {
        let spec = SceneSpec {
            n_objects: 2,
            frames: 3,
            seed: 5,
            width: 48,
            height: 32,
            ..Default::default()
        };
        let seq = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[("seq_000".into(), &seq)]).unwrap();

        let ds = open_dataset(dir.path()).unwrap();
        assert_eq!(ds.manifest.sequences.len(), 1);
        let meta = &ds.manifest.sequences[0];
        assert_eq!(meta.frames, 3);
        for t in 0..3 {
            let frame = ds.load_frame(meta, t).unwrap();
            let orig = &seq.frames[t];
            assert_eq!(frame.rgb, orig.rgb);
            assert_eq!(frame.depth.valid, orig.depth.valid);
            for (a, b) in frame.depth.values.iter().zip(&orig.depth.values) {
                assert!((a - b).abs() < 1e-6);
            }
            assert_eq!(
                frame.flow_fw.as_ref().map(|f| f.vectors.clone()),
                orig.flow_fw.as_ref().map(|f| f.vectors.clone())
            );
            assert_eq!(frame.boxes.len(), orig.boxes.len());
            for (a, b) in frame.boxes.iter().zip(&orig.boxes) {
                assert_eq!(a.id, b.id);
                assert!((a.box3d.yaw - b.box3d.yaw).abs() < 1e-12);
                assert_eq!(a.n_pixels, b.n_pixels);
            }
        }
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            open_dataset(dir.path()),
            Err(PipelineError::Data(_))
        ));
    }

    #[test]
    fn writes_are_byte_identical_across_runs() {
        let spec = SceneSpec {
            n_objects: 1,
            frames: 2,
            seed: 9,
            width: 32,
            height: 24,
            ..Default::default()
        };
        let seq = generate(&spec).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_dataset(d1.path(), &[("s".into(), &seq)]).unwrap();
        write_dataset(d2.path(), &[("s".into(), &seq)]).unwrap();
        for f in ["manifest.json", "s/rgb_0000.ppm", "s/depth_0000.pfm", "s/gt_0000.json", "s/flow_0000.bin"] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
    }
}
