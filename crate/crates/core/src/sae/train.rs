//! JumpReLU SAE training. Thresholds receive straight-through gradients
//! through a rectangle kernel of width `epsilon` centred on `theta`; the step
//! function contributes no gradient to the pre-activations.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::{encode_batch, SaeParams, EXPANSION};
use crate::error::{Error, Result};
use crate::lm::train::Adam;
use crate::lm::ActivationRecord;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeTrainConfig {
    /// Weight of the L0 term.
    pub lambda: f64,
    /// Straight-through bandwidth. `None` means `bandwidth_scale` times the
    /// RMS activation scale of the training data.
    pub epsilon: Option<f64>,
    pub bandwidth_scale: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub theta_init: f64,
    pub expansion: usize,
    /// Multiply `lambda` by the mean centered squared norm of the training
    /// data, making the sparsity weight independent of activation scale.
    pub relative_lambda: bool,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            epsilon: None,
            bandwidth_scale: 0.001,
            lr: 1e-3,
            steps: 2000,
            batch: 256,
            seed: 0,
            theta_init: 0.001,
            expansion: EXPANSION,
            relative_lambda: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaeTrainLog {
    pub recon: Vec<f64>,
    pub l0: Vec<f64>,
    pub epsilon: f64,
    /// The sparsity weight actually used.
    pub lambda: f64,
}

/// Gradient holder with the same shapes as [`SaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads {
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    pub theta: Array1<f64>,
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Mean squared reconstruction error per sample.
    pub recon: f64,
    /// Mean number of active latents per sample.
    pub l0: f64,
}

/// Mean batch loss `recon + lambda * l0` and its straight-through gradient.
pub fn loss_and_grads(
    x: ArrayView2<f64>,
    sae: &SaeParams,
    lambda: f64,
    epsilon: f64,
) -> (BatchStats, SaeGrads) {
    let n = x.nrows() as f64;
    let (z, a) = encode_batch(x, sae);
    let mut r = a.dot(&sae.w_dec);
    r += &sae.b_dec;
    r -= &x;
    let recon = r.iter().map(|v| v * v).sum::<f64>() / n;
    let l0 = a.iter().filter(|&&v| v != 0.0).count() as f64 / n;

    let dxhat = r * (2.0 / n);
    let w_dec = a.t().dot(&dxhat);
    let b_dec = dxhat.sum_axis(Axis(0));
    let da = dxhat.dot(&sae.w_dec.t());
    let mut dz = da.clone();
    let mut theta = Array1::zeros(sae.d_sae());
    let half = 0.5 * epsilon;
    for ((dz_row, z_row), da_row) in dz
        .axis_iter_mut(Axis(0))
        .zip(z.axis_iter(Axis(0)))
        .zip(da.axis_iter(Axis(0)))
    {
        for (j, ((g, &zj), &daj)) in dz_row.into_iter().zip(z_row).zip(da_row).enumerate() {
            let th = sae.theta[j];
            if !(zj > th) {
                *g = 0.0;
            }
            if (zj - th).abs() < half {
                theta[j] += -(daj * zj + lambda / n) / epsilon;
            }
        }
    }
    let w_enc = x.t().dot(&dz);
    let b_enc = dz.sum_axis(Axis(0));
    (
        BatchStats { recon, l0 },
        SaeGrads {
            w_enc,
            b_enc,
            theta,
            w_dec,
            b_dec,
        },
    )
}

fn stack(records: &[ActivationRecord]) -> Array2<f64> {
    let d = records[0].vector.len();
    let mut x = Array2::zeros((records.len(), d));
    for (mut row, r) in x.rows_mut().into_iter().zip(records) {
        row.assign(&r.vector);
    }
    x
}

/// Mean squared distance of the rows from their mean.
pub fn centered_power(x: ArrayView2<f64>) -> f64 {
    let mean = x.mean_axis(Axis(0)).expect("non-empty data");
    x.rows()
        .into_iter()
        .map(|r| (&r - &mean).mapv(|v| v * v).sum())
        .sum::<f64>()
        / x.nrows() as f64
}

/// Root-mean-square activation per coordinate.
pub fn activation_scale(x: ArrayView2<f64>) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Symmetric initialization: random unit decoder rows, `W_enc = W_dec^T`,
/// zero encoder bias, constant thresholds, `b_dec` = data mean.
pub fn init_params(x: ArrayView2<f64>, layer: usize, config: &SaeTrainConfig) -> SaeParams {
    let d = x.ncols();
    let s = d * config.expansion;
    let mut rng = rng::rng_from(rng::substream(config.seed, "sae-init"));
    let mut sae = SaeParams::zeros(layer, d, s);
    sae.w_dec.mapv_inplace(|_| StandardNormal.sample(&mut rng));
    sae.normalize_decoder_rows();
    sae.w_enc = sae.w_dec.t().as_standard_layout().into_owned();
    sae.theta.fill(config.theta_init);
    sae.b_dec = x.mean_axis(Axis(0)).expect("non-empty data");
    sae
}

/// Trains on a matrix of activations (one row per sample).
pub fn train_sae_matrix(
    x: ArrayView2<f64>,
    layer: usize,
    config: &SaeTrainConfig,
) -> Result<(SaeParams, SaeTrainLog)> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("SAE training needs at least one sample".into()));
    }
    if config.lambda < 0.0 || config.expansion == 0 {
        return Err(Error::InvalidArgument("lambda must be >= 0 and expansion >= 1".into()));
    }
    let epsilon = config
        .epsilon
        .unwrap_or_else(|| config.bandwidth_scale * activation_scale(x));
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0 (got {epsilon})")));
    }
    let lambda = if config.relative_lambda {
        config.lambda * centered_power(x)
    } else {
        config.lambda
    };
    let mut sae = init_params(x, layer, config);
    let d = sae.d_model();
    let s = sae.d_sae();
    let mut adam = Adam::new(&[d * s, s, s, s * d, d]);
    let mut rng = rng::rng_from(rng::substream(config.seed, "sae-batches"));
    let mut log = SaeTrainLog {
        epsilon,
        lambda,
        ..Default::default()
    };
    let batch = config.batch.max(1);
    let mut xb = Array2::zeros((batch, d));
    for step in 0..config.steps {
        for mut row in xb.rows_mut() {
            row.assign(&x.row(rng.gen_range(0..x.nrows())));
        }
        let (stats, g) = loss_and_grads(xb.view(), &sae, lambda, epsilon);
        if !(stats.recon.is_finite()) {
            return Err(Error::Divergence {
                step,
                loss: stats.recon,
            });
        }
        log.recon.push(stats.recon);
        log.l0.push(stats.l0);
        adam.update(
            vec![
                sae.w_enc.as_slice_mut().expect("contiguous"),
                sae.b_enc.as_slice_mut().expect("contiguous"),
                sae.theta.as_slice_mut().expect("contiguous"),
                sae.w_dec.as_slice_mut().expect("contiguous"),
                sae.b_dec.as_slice_mut().expect("contiguous"),
            ],
            vec![
                g.w_enc.as_slice().expect("contiguous"),
                g.b_enc.as_slice().expect("contiguous"),
                g.theta.as_slice().expect("contiguous"),
                g.w_dec.as_slice().expect("contiguous"),
                g.b_dec.as_slice().expect("contiguous"),
            ],
            config.lr,
        );
        sae.theta.mapv_inplace(|t| t.max(0.0));
        sae.normalize_decoder_rows();
    }
    sae.snap_to_f32();
    sae.validate()?;
    Ok((sae, log))
}

/// Trains an SAE on activation records, which must all come from one layer.
pub fn train_sae(records: &[ActivationRecord], config: &SaeTrainConfig) -> Result<(SaeParams, SaeTrainLog)> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("SAE training needs at least one record".into()))?;
    if records.iter().any(|r| r.layer != first.layer) {
        return Err(Error::InvalidArgument("SAE records span several layers".into()));
    }
    train_sae_matrix(stack(records).view(), first.layer, config)
}
