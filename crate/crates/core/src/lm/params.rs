use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            vocab_size: crate::harness::vocab::vocab_size(),
            max_seq_len: 96,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_mlp(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.vocab_size,
            self.max_seq_len,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("all model dimensions must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Base {
        seed: u64,
    },
    FineTuned {
        base_seed: u64,
        steps: usize,
        parent: Box<Provenance>,
    },
    Orthogonalized {
        direction_id: String,
        parent: Box<Provenance>,
    },
}

impl Provenance {
    /// Seed of the base training run at the root of the chain.
    pub fn base_seed(&self) -> u64 {
        match self {
            Provenance::Base { seed } => *seed,
            Provenance::FineTuned { parent, .. } | Provenance::Orthogonalized { parent, .. } => {
                parent.base_seed()
            }
        }
    }

    pub fn is_base(&self) -> bool {
        matches!(self, Provenance::Base { .. })
    }

    pub fn is_fine_tuned(&self) -> bool {
        matches!(self, Provenance::FineTuned { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Provenance::Base { .. } => "base".into(),
            Provenance::FineTuned { .. } => "fine_tuned".into(),
            Provenance::Orthogonalized { direction_id, .. } => {
                format!("orthogonalized({direction_id})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    /// Attention output projection, `d_model x d_model`; rows live in residual space.
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    /// MLP output projection, `d_mlp x d_model`.
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

/// All trainable tensors. Matrices multiply from the right (`y = x W`), so
/// every matrix that writes into the residual stream has rows of length
/// `d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_gain: Array1<f64>,
    pub lnf_bias: Array1<f64>,
    pub unembed: Array2<f64>,
}

fn slice(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are contiguous")
}

fn slice_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are contiguous")
}

macro_rules! block_tensors {
    ($b:expr, $one:ident, $two:ident) => {
        [
            $one(&$b.ln1_gain),
            $one(&$b.ln1_bias),
            $two(&$b.w_q),
            $one(&$b.b_q),
            $two(&$b.w_k),
            $one(&$b.b_k),
            $two(&$b.w_v),
            $one(&$b.b_v),
            $two(&$b.w_o),
            $one(&$b.b_o),
            $one(&$b.ln2_gain),
            $one(&$b.ln2_bias),
            $two(&$b.w_in),
            $one(&$b.b_in),
            $two(&$b.w_out),
            $one(&$b.b_out),
        ]
    };
}

macro_rules! block_tensors_mut {
    ($b:expr) => {
        [
            slice_mut(&mut $b.ln1_gain),
            slice_mut(&mut $b.ln1_bias),
            slice2_mut(&mut $b.w_q),
            slice_mut(&mut $b.b_q),
            slice2_mut(&mut $b.w_k),
            slice_mut(&mut $b.b_k),
            slice2_mut(&mut $b.w_v),
            slice_mut(&mut $b.b_v),
            slice2_mut(&mut $b.w_o),
            slice_mut(&mut $b.b_o),
            slice_mut(&mut $b.ln2_gain),
            slice_mut(&mut $b.ln2_bias),
            slice2_mut(&mut $b.w_in),
            slice_mut(&mut $b.b_in),
            slice2_mut(&mut $b.w_out),
            slice_mut(&mut $b.b_out),
        ]
    };
}

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let m = cfg.d_mlp();
        let z1 = |n| Array1::zeros(n);
        let z2 = |r, c| Array2::zeros((r, c));
        Self {
            tok_emb: z2(cfg.vocab_size, d),
            pos_emb: z2(cfg.max_seq_len, d),
            blocks: (0..cfg.n_layers)
                .map(|_| Block {
                    ln1_gain: z1(d),
                    ln1_bias: z1(d),
                    w_q: z2(d, d),
                    b_q: z1(d),
                    w_k: z2(d, d),
                    b_k: z1(d),
                    w_v: z2(d, d),
                    b_v: z1(d),
                    w_o: z2(d, d),
                    b_o: z1(d),
                    ln2_gain: z1(d),
                    ln2_bias: z1(d),
                    w_in: z2(d, m),
                    b_in: z1(m),
                    w_out: z2(m, d),
                    b_out: z1(d),
                })
                .collect(),
            lnf_gain: z1(d),
            lnf_bias: z1(d),
            unembed: z2(d, cfg.vocab_size),
        }
    }

    /// Random initialization: unit-variance embeddings, fan-in scaled
    /// projections, residual-output projections further scaled by
    /// `1/sqrt(2 n_layers)`, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut w = Self::zeros(cfg);
        let mut rng = rng::rng_from(rng::substream(cfg.rng_seed, "lm-init"));
        let d = cfg.d_model as f64;
        let m = cfg.d_mlp() as f64;
        let resid_scale = 1.0 / (2.0 * cfg.n_layers as f64).sqrt();
        fill_normal(&mut w.tok_emb, 1.0, &mut rng);
        fill_normal(&mut w.pos_emb, 1.0, &mut rng);
        for b in &mut w.blocks {
            b.ln1_gain.fill(1.0);
            b.ln2_gain.fill(1.0);
            fill_normal(&mut b.w_q, 1.0 / d.sqrt(), &mut rng);
            fill_normal(&mut b.w_k, 1.0 / d.sqrt(), &mut rng);
            fill_normal(&mut b.w_v, 1.0 / d.sqrt(), &mut rng);
            fill_normal(&mut b.w_o, resid_scale / d.sqrt(), &mut rng);
            fill_normal(&mut b.w_in, 1.0 / d.sqrt(), &mut rng);
            fill_normal(&mut b.w_out, resid_scale / m.sqrt(), &mut rng);
        }
        w.lnf_gain.fill(1.0);
        fill_normal(&mut w.unembed, 1.0 / d.sqrt(), &mut rng);
        w.snap_to_f32();
        w
    }

    /// Every tensor in declared (serialization) order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![slice2(&self.tok_emb), slice2(&self.pos_emb)];
        for b in &self.blocks {
            out.extend(block_tensors!(b, slice, slice2));
        }
        out.extend([
            slice(&self.lnf_gain),
            slice(&self.lnf_bias),
            slice2(&self.unembed),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![slice2_mut(&mut self.tok_emb), slice2_mut(&mut self.pos_emb)];
        for b in &mut self.blocks {
            out.extend(block_tensors_mut!(b));
        }
        out.extend([
            slice_mut(&mut self.lnf_gain),
            slice_mut(&mut self.lnf_bias),
            slice2_mut(&mut self.unembed),
        ]);
        out
    }

    /// Matrices (and output biases, as single rows) that write into the
    /// residual stream, each flattened row-major with rows of length `d_model`.
    pub fn residual_writers_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = vec![
            ("tok_emb".to_string(), slice2_mut(&mut self.tok_emb)),
            ("pos_emb".to_string(), slice2_mut(&mut self.pos_emb)),
        ];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("blocks.{l}.w_o"), slice2_mut(&mut b.w_o)));
            out.push((format!("blocks.{l}.b_o"), slice_mut(&mut b.b_o)));
            out.push((format!("blocks.{l}.w_out"), slice2_mut(&mut b.w_out)));
            out.push((format!("blocks.{l}.b_out"), slice_mut(&mut b.b_out)));
        }
        out
    }

    pub fn residual_writers(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![
            ("tok_emb".to_string(), slice2(&self.tok_emb)),
            ("pos_emb".to_string(), slice2(&self.pos_emb)),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{l}.w_o"), slice2(&b.w_o)));
            out.push((format!("blocks.{l}.b_o"), slice(&b.b_o)));
            out.push((format!("blocks.{l}.w_out"), slice2(&b.w_out)));
            out.push((format!("blocks.{l}.b_out"), slice(&b.b_out)));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rounds every parameter to the nearest f32 so that binary checkpoints
    /// round-trip exactly.
    pub fn snap_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn fill_normal<R: Rng>(a: &mut Array2<f64>, std: f64, rng: &mut R) {
    let dist = Normal::new(0.0, std).expect("finite std");
    a.mapv_inplace(|_| dist.sample(rng));
}

/// A model: configuration, weights and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: Weights,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            weights: Weights::init(&config),
            provenance: Provenance::Base {
                seed: config.rng_seed,
            },
            config,
        })
    }
}
