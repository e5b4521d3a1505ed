//! Inference: a causal decoder that processes one position at a time over a
//! key/value cache, with residual-stream hooks after each block.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::ops::{gelu, layer_norm_row, softmax_inplace};
use super::params::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub enum HookKind {
    Identity,
    /// `x <- x + alpha * direction`.
    AddDirection { direction: Array1<f64>, alpha: f64 },
    Capture,
}

/// Which positions a hook touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookPositions {
    #[default]
    All,
    FinalPromptToken,
}

/// A position-wise, stateless transform on the residual stream after block `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct HookSpec {
    pub layer: usize,
    pub kind: HookKind,
    pub positions: HookPositions,
}

impl HookSpec {
    pub fn identity(layer: usize) -> Self {
        Self {
            layer,
            kind: HookKind::Identity,
            positions: HookPositions::All,
        }
    }

    pub fn capture(layer: usize) -> Self {
        Self {
            layer,
            kind: HookKind::Capture,
            positions: HookPositions::All,
        }
    }

    pub fn add_direction(layer: usize, direction: Array1<f64>, alpha: f64) -> Self {
        Self {
            layer,
            kind: HookKind::AddDirection { direction, alpha },
            positions: HookPositions::All,
        }
    }

    pub fn at(mut self, positions: HookPositions) -> Self {
        self.positions = positions;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    /// Index of the capturing hook in the hook list.
    pub hook: usize,
    pub layer: usize,
    pub position: usize,
    pub vector: Array1<f64>,
}

/// Post-softmax attention of every head for one query position.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layer: usize,
    pub query_position: usize,
    /// `n_heads x (query_position + 1)`; each row sums to one.
    pub weights: Array2<f64>,
}

struct LayerCache {
    keys: Vec<f64>,
    values: Vec<f64>,
}

pub struct Decoder<'a> {
    ckpt: &'a Checkpoint,
    hooks: &'a [HookSpec],
    final_prompt_index: usize,
    cache: Vec<LayerCache>,
    pos: usize,
    attention_probe: Option<usize>,
    captures: Vec<Capture>,
    attention: Option<AttentionTrace>,
}

fn validate_hooks(ckpt: &Checkpoint, hooks: &[HookSpec]) -> Result<()> {
    for h in hooks {
        if h.layer >= ckpt.config.n_layers {
            return Err(Error::InvalidArgument(format!(
                "hook layer {} out of range (n_layers = {})",
                h.layer, ckpt.config.n_layers
            )));
        }
        if let HookKind::AddDirection { direction, alpha } = &h.kind {
            if direction.len() != ckpt.config.d_model || !alpha.is_finite() {
                return Err(Error::InvalidArgument(
                    "steering direction must have length d_model and finite alpha".into(),
                ));
            }
        }
    }
    Ok(())
}

impl<'a> Decoder<'a> {
    /// `final_prompt_index` is the position that `FinalPromptToken` hooks and
    /// the attention probe refer to.
    pub fn new(ckpt: &'a Checkpoint, hooks: &'a [HookSpec], final_prompt_index: usize) -> Result<Self> {
        validate_hooks(ckpt, hooks)?;
        let n = ckpt.config.max_seq_len * ckpt.config.d_model;
        Ok(Self {
            ckpt,
            hooks,
            final_prompt_index,
            cache: (0..ckpt.config.n_layers)
                .map(|_| LayerCache {
                    keys: Vec::with_capacity(n),
                    values: Vec::with_capacity(n),
                })
                .collect(),
            pos: 0,
            attention_probe: None,
            captures: Vec::new(),
            attention: None,
        })
    }

    /// Records the attention pattern of `layer` at the final prompt position.
    pub fn probe_attention(&mut self, layer: usize) -> Result<()> {
        if layer >= self.ckpt.config.n_layers {
            return Err(Error::InvalidArgument(format!("attention layer {layer} out of range")));
        }
        self.attention_probe = Some(layer);
        Ok(())
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds one token and returns the residual stream after the last block.
    pub fn push(&mut self, token: TokenId) -> Result<Array1<f64>> {
        let cfg = &self.ckpt.config;
        let w = &self.ckpt.weights;
        if self.pos >= cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.pos + 1,
                max: cfg.max_seq_len,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::InvalidArgument(format!("token id {token} out of vocabulary")));
        }
        let p = self.pos;
        let d = cfg.d_model;
        let dh = cfg.d_head();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = &w.tok_emb.row(token as usize) + &w.pos_emb.row(p);
        for (l, b) in w.blocks.iter().enumerate() {
            let (a, _, _) = layer_norm_row(x.view(), &b.ln1_gain, &b.ln1_bias);
            let q = a.dot(&b.w_q) + &b.b_q;
            let k = a.dot(&b.w_k) + &b.b_k;
            let v = a.dot(&b.w_v) + &b.b_v;
            let cache = &mut self.cache[l];
            cache.keys.extend(k.iter());
            cache.values.extend(v.iter());
            let n_ctx = p + 1;
            let keys = ndarray::ArrayView2::from_shape((n_ctx, d), &cache.keys).expect("cache shape");
            let values =
                ndarray::ArrayView2::from_shape((n_ctx, d), &cache.values).expect("cache shape");

            let record = self.attention_probe == Some(l) && p == self.final_prompt_index;
            let mut trace = record.then(|| Array2::zeros((cfg.n_heads, n_ctx)));
            let mut o = Array1::zeros(d);
            for h in 0..cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(s![h * dh..(h + 1) * dh]);
                let mut scores = keys.slice(cols).dot(&qh) * scale;
                softmax_inplace(scores.view_mut());
                o.slice_mut(s![h * dh..(h + 1) * dh])
                    .assign(&scores.dot(&values.slice(cols)));
                if let Some(t) = trace.as_mut() {
                    t.row_mut(h).assign(&scores);
                }
            }
            if let Some(weights) = trace {
                self.attention = Some(AttentionTrace {
                    layer: l,
                    query_position: p,
                    weights,
                });
            }
            x = x + o.dot(&b.w_o) + &b.b_o;
            let (m, _, _) = layer_norm_row(x.view(), &b.ln2_gain, &b.ln2_bias);
            let hidden = (m.dot(&b.w_in) + &b.b_in).mapv(gelu);
            x = x + hidden.dot(&b.w_out) + &b.b_out;

            for (i, hook) in self.hooks.iter().enumerate() {
                if hook.layer != l {
                    continue;
                }
                if hook.positions == HookPositions::FinalPromptToken && p != self.final_prompt_index
                {
                    continue;
                }
                match &hook.kind {
                    HookKind::Identity => {}
                    HookKind::AddDirection { direction, alpha } => {
                        x.scaled_add(*alpha, direction);
                    }
                    HookKind::Capture => self.captures.push(Capture {
                        hook: i,
                        layer: l,
                        position: p,
                        vector: x.clone(),
                    }),
                }
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("residual stream at position {p}")));
        }
        self.pos += 1;
        Ok(x)
    }

    pub fn logits(&self, resid: &Array1<f64>) -> Array1<f64> {
        let w = &self.ckpt.weights;
        let (y, _, _) = layer_norm_row(resid.view(), &w.lnf_gain, &w.lnf_bias);
        y.dot(&w.unembed)
    }

    /// Captures in hook order, then position order.
    pub fn take_captures(&mut self) -> Vec<Capture> {
        let mut caps = std::mem::take(&mut self.captures);
        caps.sort_by_key(|c| (c.hook, c.position));
        caps
    }

    pub fn take_attention(&mut self) -> Option<AttentionTrace> {
        self.attention.take()
    }
}

pub struct ForwardOutput {
    /// `seq_len x vocab_size`.
    pub logits: Array2<f64>,
    pub captures: Vec<Capture>,
}

/// Full causal pass over `tokens`; the last token counts as the final prompt token.
pub fn forward(ckpt: &Checkpoint, tokens: &[TokenId], hooks: &[HookSpec]) -> Result<ForwardOutput> {
    if tokens.len() > ckpt.config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: ckpt.config.max_seq_len,
        });
    }
    let mut dec = Decoder::new(ckpt, hooks, tokens.len().saturating_sub(1))?;
    let mut logits = Array2::zeros((tokens.len(), ckpt.config.vocab_size));
    for (i, &t) in tokens.iter().enumerate() {
        let resid = dec.push(t)?;
        let row = dec.logits(&resid);
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("logits at position {i}")));
        }
        logits.row_mut(i).assign(&row);
    }
    Ok(ForwardOutput {
        logits,
        captures: dec.take_captures(),
    })
}

/// Attention of every head at `layer` for the query at the last token of `tokens`.
pub fn attention_weights(
    ckpt: &Checkpoint,
    tokens: &[TokenId],
    layer: usize,
    hooks: &[HookSpec],
) -> Result<AttentionTrace> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty prompt".into()));
    }
    let mut dec = Decoder::new(ckpt, hooks, tokens.len() - 1)?;
    dec.probe_attention(layer)?;
    for &t in tokens {
        dec.push(t)?;
    }
    Ok(dec.take_attention().expect("probe fires at the final position"))
}
