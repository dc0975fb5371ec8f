//! Parameter checkpoints: an 8-byte little-endian header length, a JSON
//! header, then every parameter as little-endian f64 in layer order
//! (weight row-major, then bias).

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, ModelKind, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    /// `[rows, cols]` of each layer's weight.
    pub shapes: Vec<[usize; 2]>,
    pub seed: u64,
    pub format_version: u32,
}

pub fn write_checkpoint(path: &Path, params: &ModelParams, seed: u64) -> Result<()> {
    let header = CheckpointHeader {
        kind: params.kind,
        shapes: params
            .layers
            .iter()
            .map(|l| [l.weight.nrows(), l.weight.ncols()])
            .collect(),
        seed,
        format_version: 1,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 8 * params.num_scalars());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in params.tensors().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(path, "header length exceeds file"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..body_start])?;
    let mut values = bytes[body_start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = header.shapes.iter().map(|[r, c]| r * c + c).sum();
    if bytes.len() - body_start != expected * 8 {
        return Err(Error::format(
            path,
            format!("expected {expected} parameters after header"),
        ));
    }
    let mut layers = Vec::with_capacity(header.shapes.len());
    for &[r, c] in &header.shapes {
        let w: Vec<f64> = values.by_ref().take(r * c).collect();
        let b: Vec<f64> = values.by_ref().take(c).collect();
        layers.push(Dense {
            weight: Array2::from_shape_vec((r, c), w).expect("sized"),
            bias: Array1::from(b),
        });
    }
    Ok((
        ModelParams {
            kind: header.kind,
            layers,
        },
        header,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [ModelKind::Gcn2, ModelKind::Sgc] {
            let p = ModelParams::init(kind, 5, 7, 3, &mut rng::stream(4, "ckpt"));
            let path = dir.path().join(format!("{kind}.bin"));
            write_checkpoint(&path, &p, 4).unwrap();
            let (q, h) = read_checkpoint(&path).unwrap();
            assert_eq!(p, q);
            assert_eq!(h.seed, 4);
            assert_eq!(h.kind, kind);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let p = ModelParams::init(ModelKind::Sgc, 2, 0, 2, &mut rng::stream(0, "x"));
        write_checkpoint(&path, &p, 0).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format { .. })));
    }
}
