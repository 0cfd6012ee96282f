//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | content |
//! |--------|------|---------|
//! | 0 | 8 | magic `ILDLMOD\0` |
//! | 8 | 1 | format version (`1`) |
//! | 9 | 8 | `d` as `u64` |
//! | 17 | 8 | `q` as `u64` |
//! | 25 | `8 d q` | `W`, row-major `f64` |
//! | … | `8 d q` | `P`, row-major `f64` |
//! | … | `8 q q` | `Q`, row-major `f64` |

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{IldlError, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"ILDLMOD\0";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 25;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let (d, q) = (model.d(), model.n_labels());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (2 * d * q + q * q));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&(q as u64).to_le_bytes());
    for m in [&model.w, &model.p, &model.q] {
        for i in 0..m.nrows() {
            for v in m.row(i).iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let bad = |msg: String| IldlError::ModelFormat(msg);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("not a model file (bad magic)".into()));
    }
    if bytes[8] != VERSION {
        return Err(bad(format!("unsupported format version {}", bytes[8])));
    }
    let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
    let (d, q) = (read_u64(9), read_u64(17));
    let expected = usize::try_from(d)
        .ok()
        .zip(usize::try_from(q).ok())
        .and_then(|(d, q)| {
            let dq = d.checked_mul(q)?;
            let total = dq.checked_mul(2)?.checked_add(q.checked_mul(q)?)?;
            total.checked_mul(8)?.checked_add(HEADER_LEN)
        })
        .ok_or_else(|| bad(format!("implausible dimensions {d}x{q}")))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for d={d}, q={q}, found {}", bytes.len())));
    }
    let (d, q) = (d as usize, q as usize);
    let mut at = HEADER_LEN;
    let mut take = |rows: usize, cols: usize| {
        let vals: Vec<f64> = bytes[at..at + 8 * rows * cols]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        at += 8 * rows * cols;
        DMatrix::from_row_slice(rows, cols, &vals)
    };
    let w = take(d, q);
    let p = take(d, q);
    let qm = take(q, q);
    Model::new(w, p, qm)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&fs::read(path)?)
}
