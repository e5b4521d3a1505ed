//! Final-prompt-token residual captures and the `ACT1` activation store.

use std::io::{Read, Write};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::forward::{Decoder, HookSpec};
use super::params::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Correct,
    Incorrect,
    Unlabeled,
}

impl Label {
    pub fn from_passed(passed: bool) -> Self {
        if passed {
            Label::Correct
        } else {
            Label::Incorrect
        }
    }

    fn code(self) -> u8 {
        match self {
            Label::Incorrect => 0,
            Label::Correct => 1,
            Label::Unlabeled => 255,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Label::Incorrect),
            1 => Ok(Label::Correct),
            255 => Ok(Label::Unlabeled),
            _ => Err(Error::Format(format!("unknown label code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub problem_id: u64,
    pub layer: usize,
    pub vector: Array1<f64>,
    pub label: Label,
}

/// Residual stream after block `l` at the final prompt token, for each `l` in
/// `layers`. Output is indexed `[layer_slot][prompt]`.
pub fn capture_final_token_residuals_multi(
    ckpt: &Checkpoint,
    prompts: &[PromptBundle],
    layers: &[usize],
) -> Result<Vec<Vec<ActivationRecord>>> {
    let hooks: Vec<HookSpec> = layers.iter().map(|&l| HookSpec::capture(l)).collect();
    let mut out = vec![Vec::with_capacity(prompts.len()); layers.len()];
    for prompt in prompts {
        let mut dec = Decoder::new(ckpt, &hooks, prompt.final_index())?;
        for &t in &prompt.tokens {
            dec.push(t)?;
        }
        let final_pos = prompt.final_index();
        for cap in dec.take_captures() {
            if cap.position == final_pos {
                out[cap.hook].push(ActivationRecord {
                    problem_id: prompt.problem_id,
                    layer: cap.layer,
                    vector: cap.vector,
                    label: Label::Unlabeled,
                });
            }
        }
    }
    Ok(out)
}

pub fn capture_final_token_residuals(
    ckpt: &Checkpoint,
    prompts: &[PromptBundle],
    layer: usize,
) -> Result<Vec<ActivationRecord>> {
    Ok(capture_final_token_residuals_multi(ckpt, prompts, &[layer])?
        .pop()
        .expect("one layer requested"))
}

/// Residuals after block `l` at every position of every sequence.
pub fn capture_all_positions(
    ckpt: &Checkpoint,
    sequences: &[(u64, Vec<crate::harness::TokenId>)],
    layers: &[usize],
) -> Result<Vec<Vec<ActivationRecord>>> {
    let hooks: Vec<HookSpec> = layers.iter().map(|&l| HookSpec::capture(l)).collect();
    let mut out = vec![Vec::new(); layers.len()];
    for (id, tokens) in sequences {
        let mut dec = Decoder::new(ckpt, &hooks, tokens.len().saturating_sub(1))?;
        for &t in tokens {
            dec.push(t)?;
        }
        for cap in dec.take_captures() {
            out[cap.hook].push(ActivationRecord {
                problem_id: *id,
                layer: cap.layer,
                vector: cap.vector,
                label: Label::Unlabeled,
            });
        }
    }
    Ok(out)
}

const ACT_MAGIC: &[u8; 4] = b"ACT1";

/// `ACT1`, record count and `d_model` (u32 LE), then per record: problem id
/// (u32), layer (u16), label (u8), `d_model` f32 values.
pub fn write_activation_store<W: Write>(mut w: W, records: &[ActivationRecord]) -> Result<()> {
    let d = records.first().map_or(0, |r| r.vector.len());
    w.write_all(ACT_MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for r in records {
        if r.vector.len() != d {
            return Err(Error::InvalidArgument("records have mixed widths".into()));
        }
        let id = u32::try_from(r.problem_id)
            .map_err(|_| Error::InvalidArgument(format!("problem id {} exceeds u32", r.problem_id)))?;
        let layer = u16::try_from(r.layer)
            .map_err(|_| Error::InvalidArgument(format!("layer {} exceeds u16", r.layer)))?;
        w.write_all(&id.to_le_bytes())?;
        w.write_all(&layer.to_le_bytes())?;
        w.write_all(&[r.label.code()])?;
        for &v in r.vector.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_activation_store<R: Read>(mut r: R) -> Result<Vec<ActivationRecord>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ACT_MAGIC {
        return Err(Error::Format("activation store: bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let d = u32::from_le_bytes(u32buf) as usize;
    let mut out = Vec::with_capacity(n);
    let mut vec_buf = vec![0u8; 4 * d];
    for _ in 0..n {
        let mut head = [0u8; 7];
        r.read_exact(&mut head)?;
        let id = u32::from_le_bytes([head[0], head[1], head[2], head[3]]);
        let layer = u16::from_le_bytes([head[4], head[5]]);
        let label = Label::from_code(head[6])?;
        r.read_exact(&mut vec_buf)?;
        let vector = vec_buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        out.push(ActivationRecord {
            problem_id: u64::from(id),
            layer: usize::from(layer),
            vector,
            label,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("activation store: trailing bytes".into()));
    }
    Ok(out)
}
