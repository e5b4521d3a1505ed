use ndarray::Array1;
use rand::Rng;

use super::forward::{Decoder, HookSpec};
use super::params::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::vocab::EOS;
use crate::harness::{PromptBundle, TokenId};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// 0 selects greedy decoding.
    pub temperature: f64,
    pub max_new: usize,
    /// Seed of the sampling stream; ignored when greedy.
    pub seed: u64,
}

impl SamplingConfig {
    pub fn greedy(max_new: usize) -> Self {
        Self {
            temperature: 0.0,
            max_new,
            seed: 0,
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample<R: Rng>(logits: &Array1<f64>, temperature: f64, rng: &mut R) -> usize {
    let scaled = logits.mapv(|l| l / temperature);
    let max = scaled.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let probs = scaled.mapv(|l| (l - max).exp());
    let total = probs.sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

/// Continues `prompt` until `<eos>` (not included in the output), `max_new`
/// tokens, or the context limit.
pub fn generate(
    ckpt: &Checkpoint,
    prompt: &PromptBundle,
    sampling: SamplingConfig,
    hooks: &[HookSpec],
) -> Result<Vec<TokenId>> {
    if sampling.temperature < 0.0 || !sampling.temperature.is_finite() {
        return Err(Error::InvalidArgument("temperature must be finite and >= 0".into()));
    }
    if prompt.tokens.is_empty() {
        return Err(Error::InvalidArgument("empty prompt".into()));
    }
    if prompt.tokens.len() > ckpt.config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: prompt.tokens.len(),
            max: ckpt.config.max_seq_len,
        });
    }
    let mut out = Vec::new();
    if sampling.max_new == 0 {
        return Ok(out);
    }
    let mut dec = Decoder::new(ckpt, hooks, prompt.final_index())?;
    let mut resid = Array1::zeros(0);
    for &t in &prompt.tokens {
        resid = dec.push(t)?;
    }
    let mut rng = rng::rng_from(sampling.seed);
    loop {
        let logits = dec.logits(&resid);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits during generation".into()));
        }
        let next = if sampling.temperature == 0.0 {
            argmax(&logits)
        } else {
            sample(&logits, sampling.temperature, &mut rng)
        } as TokenId;
        if next == EOS {
            break;
        }
        out.push(next);
        if out.len() >= sampling.max_new || dec.position() >= ckpt.config.max_seq_len {
            break;
        }
        resid = dec.push(next)?;
    }
    Ok(out)
}
