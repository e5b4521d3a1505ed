//! `SAE1` files: magic, `d_model` and `d_sae` (u32 LE), then W_enc, b_enc,
//! theta, W_dec, b_dec as f32 LE row-major. Training metadata goes in a JSON
//! sidecar.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::SaeParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SAE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeSidecar {
    pub layer: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub steps: usize,
}

pub fn write_sae<W: Write>(mut w: W, sae: &SaeParams) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(sae.d_model() as u32).to_le_bytes())?;
    w.write_all(&(sae.d_sae() as u32).to_le_bytes())?;
    let parts = [
        sae.w_enc.as_slice(),
        sae.b_enc.as_slice(),
        sae.theta.as_slice(),
        sae.w_dec.as_slice(),
        sae.b_dec.as_slice(),
    ];
    for part in parts {
        for &v in part.expect("contiguous") {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads an SAE; the layer is taken from the sidecar by the caller.
pub fn read_sae<R: Read>(mut r: R, layer: usize) -> Result<SaeParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("SAE file: bad magic".into()));
    }
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    let d = u32::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let s = u32::from_le_bytes(b) as usize;
    let mut sae = SaeParams::zeros(layer, d, s);
    {
        let parts = [
            sae.w_enc.as_slice_mut(),
            sae.b_enc.as_slice_mut(),
            sae.theta.as_slice_mut(),
            sae.w_dec.as_slice_mut(),
            sae.b_dec.as_slice_mut(),
        ];
        for part in parts {
            for v in part.expect("contiguous") {
                r.read_exact(&mut b)?;
                *v = f64::from(f32::from_le_bytes(b));
            }
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("SAE file: trailing bytes".into()));
    }
    sae.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(sae)
}
