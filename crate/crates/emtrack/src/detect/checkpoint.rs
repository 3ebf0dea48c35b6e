//! Model checkpoints: magic, version, model kind, parameter count, then
//! little-endian f32 parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::det::{DetModel3D, DET_PARAM_COUNT};
use super::seg::{SegModel2D, SEG_PARAM_COUNT};

const MAGIC: &[u8; 4] = b"EMCK";
const VERSION: u32 = 1;
const KIND_SEG: u8 = 1;
const KIND_DET: u8 = 2;

#[derive(Debug, Clone)]
pub enum Checkpoint {
    Seg(SegModel2D),
    Det(DetModel3D),
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let (kind, params): (u8, &[f64]) = match ckpt {
        Checkpoint::Seg(m) => (KIND_SEG, &m.params),
        Checkpoint::Det(m) => (KIND_DET, &m.params),
    };
    w.write_all(&[kind])?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for &p in params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    w.flush()
}

pub fn load_checkpoint(path: &Path) -> std::io::Result<Checkpoint> {
    let bad = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 4 + 4 + 1 + 8];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(bad(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let kind = head[8];
    let count = u64::from_le_bytes(head[9..17].try_into().unwrap()) as usize;
    let expect = match kind {
        KIND_SEG => SEG_PARAM_COUNT,
        KIND_DET => DET_PARAM_COUNT,
        k => return Err(bad(format!("unknown model kind {k}"))),
    };
    if count != expect {
        return Err(bad(format!(
            "parameter count {count} does not match layout ({expect})"
        )));
    }
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let params: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(match kind {
        KIND_SEG => Checkpoint::Seg(SegModel2D { params }),
        _ => Checkpoint::Det(DetModel3D { params }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.emck");
        let model = SegModel2D::random_init(7);
        save_checkpoint(&path, &Checkpoint::Seg(model.clone())).unwrap();
        let Checkpoint::Seg(back) = load_checkpoint(&path).unwrap() else {
            panic!("wrong kind");
        };
        for (a, b) in model.params.iter().zip(&back.params) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.emck");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxxxx").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn det_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.emck");
        let model = DetModel3D::random_init(3);
        save_checkpoint(&path, &Checkpoint::Det(model.clone())).unwrap();
        assert!(matches!(load_checkpoint(&path).unwrap(), Checkpoint::Det(_)));
    }
}
