use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FlowDirection, FlowField};

/// Writes a flow field in the raw binary layout used by dataset
/// directories: little-endian f32, H·W·2 values, row-major, (du, dv) order.
pub fn write_flow_bin(path: &Path, flow: &FlowField) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &flow.vectors {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_flow_bin(
    path: &Path,
    width: u32,
    height: u32,
    direction: FlowDirection,
    frames: (usize, usize),
) -> std::io::Result<FlowField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let expect = (width * height * 2) as usize * 4;
    if bytes.len() != expect {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("flow file {}: {} bytes, expected {}", path.display(), bytes.len(), expect),
        ));
    }
    let vectors = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(FlowField {
        width,
        height,
        vectors,
        direction,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_bin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow_0000.bin");
        let mut flow = FlowField::zeros(6, 4, FlowDirection::Forward, (0, 1));
        for (i, v) in flow.vectors.iter_mut().enumerate() {
            *v = i as f32 * 0.25 - 3.0;
        }
        write_flow_bin(&path, &flow).unwrap();
        let back = read_flow_bin(&path, 6, 4, FlowDirection::Forward, (0, 1)).unwrap();
        assert_eq!(back.vectors, flow.vectors);
        assert!(read_flow_bin(&path, 7, 4, FlowDirection::Forward, (0, 1)).is_err());
    }
}
