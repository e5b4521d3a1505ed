//! `MLM1` checkpoint files: magic, seven u32 config words (n_layers, d_model,
//! n_heads, vocab_size, max_seq_len, seed low, seed high), every tensor in
//! declared order as f32 LE row-major, then a u32-length-prefixed JSON
//! provenance trailer.

use std::io::{Read, Write};

use super::params::{Checkpoint, ModelConfig, Provenance, Weights};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MLM1";

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let c = &ckpt.config;
    w.write_all(MAGIC)?;
    for v in [
        c.n_layers as u32,
        c.d_model as u32,
        c.n_heads as u32,
        c.vocab_size as u32,
        c.max_seq_len as u32,
        c.rng_seed as u32,
        (c.rng_seed >> 32) as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in ckpt.weights.tensors() {
        for &v in t {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    let prov = serde_json::to_vec(&ckpt.provenance)?;
    w.write_all(&(prov.len() as u32).to_le_bytes())?;
    w.write_all(&prov)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let mut words = [0u32; 7];
    for w in &mut words {
        *w = read_u32(&mut r)?;
    }
    let config = ModelConfig {
        n_layers: words[0] as usize,
        d_model: words[1] as usize,
        n_heads: words[2] as usize,
        vocab_size: words[3] as usize,
        max_seq_len: words[4] as usize,
        rng_seed: u64::from(words[5]) | (u64::from(words[6]) << 32),
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut weights = Weights::zeros(&config);
    let mut buf = [0u8; 4];
    for t in weights.tensors_mut() {
        for v in t.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from(f32::from_le_bytes(buf));
        }
    }
    let n = read_u32(&mut r)? as usize;
    let mut prov = vec![0u8; n];
    r.read_exact(&mut prov)?;
    let provenance: Provenance = serde_json::from_slice(&prov)?;
    if !weights.all_finite() {
        return Err(Error::Format("checkpoint contains non-finite weights".into()));
    }
    Ok(Checkpoint {
        config,
        weights,
        provenance,
    })
}
