//! Shallow-net checkpoints: one JSON header line, then a little-endian
//! float64 payload holding W, W_init (both column-major, unit by unit) and a.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ShallowNet;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{Matrix, Vector};

pub const CHECKPOINT_FORMAT: &str = "transferlab-shallow-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    d: usize,
    m: usize,
    kappa: f64,
    seed: u64,
    step: usize,
    payload: Vec<String>,
}

pub(crate) fn encode_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Split a checkpoint into its header line and binary payload.
pub(crate) fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint has no header line".into()))?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

pub fn checkpoint_bytes(net: &ShallowNet) -> Result<Vec<u8>> {
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        d: net.d(),
        m: net.m(),
        kappa: net.kappa(),
        seed: net.seed(),
        step: net.step(),
        payload: vec!["w".into(), "w_init".into(), "a".into()],
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    encode_f64s(&mut out, net.w().as_slice());
    encode_f64s(&mut out, net.w_init().as_slice());
    encode_f64s(&mut out, net.a().as_slice());
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ShallowNet> {
    let (head, payload) = split_header(bytes)?;
    let header: Header = serde_json::from_slice(head)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format {}", header.format)));
    }
    let values = decode_f64s(payload)?;
    let (d, m) = (header.d, header.m);
    let expected = 2 * d * m + m;
    if values.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} values, header implies {expected}",
            values.len()
        )));
    }
    let w = Matrix::from_column_slice(d, m, &values[..d * m]);
    let w_init = Matrix::from_column_slice(d, m, &values[d * m..2 * d * m]);
    let a = Vector::from_column_slice(&values[2 * d * m..]);
    ShallowNet::from_checkpoint_parts(w, w_init, a, header.kappa, header.seed, header.step)
}

pub fn write_checkpoint(net: &ShallowNet, path: &Path) -> Result<()> {
    io::write_atomic(path, &checkpoint_bytes(net)?)
}

pub fn read_checkpoint(path: &Path) -> Result<ShallowNet> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
