//! Next-token training with hand-written backpropagation and Adam.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{gelu, gelu_grad, LN_EPS};
use super::params::{Checkpoint, ModelConfig, Provenance, Weights};
use crate::error::{Error, Result};
use crate::harness::TokenId;
use crate::rng;

/// One training sequence. Positions `< loss_start` are context only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSequence {
    pub tokens: Vec<TokenId>,
    /// Index of the first token that is a prediction target (>= 1).
    pub loss_start: usize,
}

impl TrainingSequence {
    pub fn full(tokens: Vec<TokenId>) -> Self {
        Self {
            tokens,
            loss_start: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 3e-3,
            batch_size: 16,
            warmup_steps: 50,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-token loss of each step's batch.
    pub losses: Vec<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rr = *r;
        row.mapv_inplace(|v| (v - mean) * rr);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / n;
        let mean_gx = g.dot(&xh) / n;
        let r = cache.rstd[i];
        dx.row_mut(i)
            .assign(&((&g - mean_g - &(&xh * mean_gx)) * r));
    }
    dx
}

struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    m: Array2<f64>,
    hpre: Array2<f64>,
    hact: Array2<f64>,
}

fn add_row_bias(mut x: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x += b;
    x
}

/// Forward pass over one sequence keeping everything needed for backprop.
/// Returns the final residual stream and the block caches.
fn forward_train(w: &Weights, cfg: &ModelConfig, tokens: &[TokenId]) -> (Array2<f64>, Vec<BlockCache>) {
    let t = tokens.len();
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = Array2::zeros((t, d));
    for (i, &tok) in tokens.iter().enumerate() {
        x.row_mut(i)
            .assign(&(&w.tok_emb.row(tok as usize) + &w.pos_emb.row(i)));
    }
    let mut caches = Vec::with_capacity(w.blocks.len());
    for b in &w.blocks {
        let (a, ln1) = ln_forward(&x, &b.ln1_gain, &b.ln1_bias);
        let q = add_row_bias(a.dot(&b.w_q), &b.b_q);
        let k = add_row_bias(a.dot(&b.w_k), &b.b_k);
        let v = add_row_bias(a.dot(&b.w_v), &b.b_v);
        let mut o = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for i in 0..t {
                let mut row = sc.row_mut(i);
                for j in (i + 1)..t {
                    row[j] = f64::NEG_INFINITY;
                }
                super::ops::softmax_inplace(row);
            }
            o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        x = x + add_row_bias(o.dot(&b.w_o), &b.b_o);
        let (m, ln2) = ln_forward(&x, &b.ln2_gain, &b.ln2_bias);
        let hpre = add_row_bias(m.dot(&b.w_in), &b.b_in);
        let hact = hpre.mapv(gelu);
        x = x + add_row_bias(hact.dot(&b.w_out), &b.b_out);
        caches.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            m,
            hpre,
            hact,
        });
    }
    (x, caches)
}

/// Adds the gradient of the summed token loss of `seq` into `grads` and
/// returns `(summed loss, number of target tokens)`.
pub fn accumulate_gradients(
    w: &Weights,
    cfg: &ModelConfig,
    seq: &TrainingSequence,
    grads: &mut Weights,
) -> (f64, usize) {
    let tokens = &seq.tokens;
    let t = tokens.len();
    let dh = cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let (x_final, caches) = forward_train(w, cfg, tokens);
    let (y, lnf) = ln_forward(&x_final, &w.lnf_gain, &w.lnf_bias);
    let logits = y.dot(&w.unembed);

    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut count = 0;
    for i in seq.loss_start.max(1).saturating_sub(1)..t.saturating_sub(1) {
        let target = tokens[i + 1] as usize;
        let row = logits.row(i);
        let lse = super::ops::log_sum_exp(row);
        loss += lse - row[target];
        count += 1;
        let mut drow = dlogits.row_mut(i);
        drow.assign(&row.mapv(|l| (l - lse).exp()));
        drow[target] -= 1.0;
    }

    grads.unembed += &y.t().dot(&dlogits);
    let dy = dlogits.dot(&w.unembed.t());
    let mut dx = ln_backward(&dy, &lnf, &w.lnf_gain, &mut grads.lnf_gain, &mut grads.lnf_bias);

    for (l, (b, c)) in w.blocks.iter().zip(&caches).enumerate().rev() {
        let g = &mut grads.blocks[l];
        // MLP
        g.w_out += &c.hact.t().dot(&dx);
        g.b_out += &dx.sum_axis(Axis(0));
        let dhact = dx.dot(&b.w_out.t());
        let dhpre = &dhact * &c.hpre.mapv(gelu_grad);
        g.w_in += &c.m.t().dot(&dhpre);
        g.b_in += &dhpre.sum_axis(Axis(0));
        let dm = dhpre.dot(&b.w_in.t());
        let dx_mid = &dx + &ln_backward(&dm, &c.ln2, &b.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);

        // attention
        g.w_o += &c.o.t().dot(&dx_mid);
        g.b_o += &dx_mid.sum_axis(Axis(0));
        let d_o = dx_mid.dot(&b.w_o.t());
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &c.probs[h];
            let doh = d_o.slice(cols);
            let dp = doh.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&doh));
            let row_dot = (&dp * p).sum_axis(Axis(1));
            let mut ds = dp;
            for i in 0..t {
                let rd = row_dot[i];
                let pr = p.row(i);
                ds.row_mut(i).zip_mut_with(&pr, |g, &pv| *g = pv * (*g - rd));
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        g.w_q += &c.a.t().dot(&dq);
        g.b_q += &dq.sum_axis(Axis(0));
        g.w_k += &c.a.t().dot(&dk);
        g.b_k += &dk.sum_axis(Axis(0));
        g.w_v += &c.a.t().dot(&dv);
        g.b_v += &dv.sum_axis(Axis(0));
        let da = dq.dot(&b.w_q.t()) + dk.dot(&b.w_k.t()) + dv.dot(&b.w_v.t());
        dx = &dx_mid + &ln_backward(&da, &c.ln1, &b.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    }

    for (i, &tok) in tokens.iter().enumerate() {
        let row = dx.row(i);
        let mut te = grads.tok_emb.row_mut(tok as usize);
        te += &row;
        let mut pe = grads.pos_emb.row_mut(i);
        pe += &row;
    }
    (loss, count)
}

/// Mean per-token loss over `batch` (no gradient).
pub fn batch_loss(w: &Weights, cfg: &ModelConfig, batch: &[TrainingSequence]) -> f64 {
    let mut scratch = Weights::zeros(cfg);
    let (total, count) = batch.iter().fold((0.0, 0usize), |(l, c), seq| {
        let (sl, sc) = accumulate_gradients(w, cfg, seq, &mut scratch);
        (l + sl, c + sc)
    });
    total / count.max(1) as f64
}

/// Mean per-token loss and its gradient over `batch`.
pub fn batch_loss_and_grad(
    w: &Weights,
    cfg: &ModelConfig,
    batch: &[TrainingSequence],
) -> (f64, Weights) {
    let mut grads = Weights::zeros(cfg);
    let (total, count) = batch.iter().fold((0.0, 0usize), |(l, c), seq| {
        let (sl, sc) = accumulate_gradients(w, cfg, seq, &mut grads);
        (l + sl, c + sc)
    });
    let inv = 1.0 / count.max(1) as f64;
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|g| *g *= inv);
    }
    (total * inv, grads)
}

/// Adam with bias correction.
pub(crate) struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub(crate) fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    pub(crate) fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

fn run_training(
    mut weights: Weights,
    cfg: &ModelConfig,
    corpus: &[TrainingSequence],
    opts: &TrainOptions,
    stream: &str,
) -> Result<(Weights, TrainLog)> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if let Some(seq) = corpus.iter().find(|s| s.tokens.len() > cfg.max_seq_len || s.tokens.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "training sequence of length {} outside [2, {}]",
            seq.tokens.len(),
            cfg.max_seq_len
        )));
    }
    let shapes: Vec<usize> = weights.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(&shapes);
    let mut rng = rng::rng_from(rng::substream(opts.seed, stream));
    let mut log = TrainLog::default();
    for step in 0..opts.steps {
        let batch: Vec<TrainingSequence> = (0..opts.batch_size.max(1))
            .map(|_| corpus[rng.gen_range(0..corpus.len())].clone())
            .collect();
        let (loss, mut grads) = batch_loss_and_grad(&weights, cfg, &batch);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if opts.grad_clip > 0.0 {
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::Divergence { step, loss: norm });
            }
            if norm > opts.grad_clip {
                let f = opts.grad_clip / norm;
                for t in grads.tensors_mut() {
                    t.iter_mut().for_each(|g| *g *= f);
                }
            }
        }
        let warm = if opts.warmup_steps > 0 {
            ((step + 1) as f64 / opts.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let decay = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / opts.steps as f64).cos());
        let lr = opts.lr * warm * (0.1 + 0.9 * decay);
        adam.update(weights.tensors_mut(), grads.tensors(), lr);
        log.losses.push(loss);
        if step % 100 == 0 {
            log::debug!("{stream} step {step} loss {loss:.4}");
        }
    }
    weights.snap_to_f32();
    if !weights.all_finite() {
        return Err(Error::Divergence {
            step: opts.steps,
            loss: f64::NAN,
        });
    }
    Ok((weights, log))
}

/// Trains a fresh model on `corpus`; the result has `base` provenance.
pub fn train(
    config: ModelConfig,
    corpus: &[TrainingSequence],
    opts: &TrainOptions,
) -> Result<(Checkpoint, TrainLog)> {
    let ckpt = Checkpoint::init(config)?;
    let (weights, log) = run_training(ckpt.weights, &config, corpus, opts, "lm-train")?;
    Ok((
        Checkpoint {
            config,
            weights,
            provenance: Provenance::Base { seed: config.rng_seed },
        },
        log,
    ))
}

/// Continues training a base checkpoint; `steps = 0` returns identical weights.
pub fn fine_tune(
    ckpt: &Checkpoint,
    corpus: &[TrainingSequence],
    opts: &TrainOptions,
) -> Result<(Checkpoint, TrainLog)> {
    if !ckpt.provenance.is_base() {
        return Err(Error::InvalidArgument(format!(
            "fine-tuning expects a base checkpoint, got {}",
            ckpt.provenance.label()
        )));
    }
    let (weights, log) = if opts.steps == 0 {
        (ckpt.weights.clone(), TrainLog::default())
    } else {
        run_training(ckpt.weights.clone(), &ckpt.config, corpus, opts, "lm-fine-tune")?
    };
    Ok((
        Checkpoint {
            config: ckpt.config,
            weights,
            provenance: Provenance::FineTuned {
                base_seed: ckpt.provenance.base_seed(),
                steps: opts.steps,
                parent: Box::new(ckpt.provenance.clone()),
            },
        },
        log,
    ))
}
