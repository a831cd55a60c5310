//! Warm-up parameter file:
//!
//! ```text
//! magic   b"OWLW"          4 bytes
//! version u32 LE           4 bytes
//! inputs  u32 LE           4 bytes
//! hidden  u32 LE           4 bytes
//! outputs u32 LE           4 bytes (always 1)
//! params  f64 LE * N       N = hidden*inputs + hidden + hidden + 1
//! ```

use std::fs;
use std::path::Path;

use super::predictor::OccupancyPredictor;
use super::OccupancyError;

pub const MAGIC: [u8; 4] = *b"OWLW";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_warmup(pred: &OccupancyPredictor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * pred.parameter_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(pred.inputs as u32).to_le_bytes());
    out.extend_from_slice(&(pred.hidden as u32).to_le_bytes());
    out.extend_from_slice(&1u32.to_le_bytes());
    for p in pred.parameters() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, OccupancyError> {
    let b = bytes.get(offset..offset + 4).ok_or(OccupancyError::Truncated { offset })?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

pub fn decode_warmup(bytes: &[u8]) -> Result<OccupancyPredictor, OccupancyError> {
    let magic = bytes.get(0..4).ok_or(OccupancyError::Truncated { offset: 0 })?;
    if magic != MAGIC {
        return Err(OccupancyError::BadMagic);
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(OccupancyError::Version { found: version, expected: VERSION });
    }
    let inputs = read_u32(bytes, 8)? as usize;
    let hidden = read_u32(bytes, 12)? as usize;
    let outputs = read_u32(bytes, 16)?;
    if outputs != 1 || inputs == 0 || hidden == 0 {
        return Err(OccupancyError::Format(format!(
            "unsupported layer sizes {inputs}x{hidden}x{outputs}"
        )));
    }
    let mut pred = OccupancyPredictor {
        inputs,
        hidden,
        w1: vec![0.0; inputs * hidden],
        b1: vec![0.0; hidden],
        w2: vec![0.0; hidden],
        b2: 0.0,
    };
    let n = pred.parameter_count();
    let mut params = Vec::with_capacity(n);
    for k in 0..n {
        let offset = HEADER_LEN + 8 * k;
        let b = bytes.get(offset..offset + 8).ok_or(OccupancyError::Truncated { offset })?;
        params.push(f64::from_le_bytes(b.try_into().expect("8 bytes")));
    }
    let end = HEADER_LEN + 8 * n;
    if bytes.len() != end {
        return Err(OccupancyError::Format(format!("{} trailing bytes at offset {end}", bytes.len() - end)));
    }
    pred.set_parameters(&params)?;
    Ok(pred)
}

pub fn export_warmup(pred: &OccupancyPredictor, path: &Path) -> Result<(), OccupancyError> {
    fs::write(path, encode_warmup(pred))?;
    Ok(())
}

pub fn import_warmup(path: &Path) -> Result<OccupancyPredictor, OccupancyError> {
    decode_warmup(&fs::read(path)?)
}
