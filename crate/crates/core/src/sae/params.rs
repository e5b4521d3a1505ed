use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Expansion factor between residual width and dictionary size.
pub const EXPANSION: usize = 8;

/// JumpReLU sparse autoencoder for one layer.
///
/// `a(x) = JumpReLU_theta(x W_enc + b_enc)`, `x_hat = a(x) W_dec + b_dec`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    pub layer: usize,
    /// `d_model x d_sae`.
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    /// Per-latent thresholds, all `>= 0`.
    pub theta: Array1<f64>,
    /// `d_sae x d_model`; row `j` is latent `j`'s direction.
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

impl SaeParams {
    pub fn d_model(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn d_sae(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn zeros(layer: usize, d_model: usize, d_sae: usize) -> Self {
        Self {
            layer,
            w_enc: Array2::zeros((d_model, d_sae)),
            b_enc: Array1::zeros(d_sae),
            theta: Array1::zeros(d_sae),
            w_dec: Array2::zeros((d_sae, d_model)),
            b_dec: Array1::zeros(d_model),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, s) = (self.d_model(), self.d_sae());
        let ok = self.b_enc.len() == s
            && self.theta.len() == s
            && self.w_dec.dim() == (s, d)
            && self.b_dec.len() == d;
        if !ok {
            return Err(Error::InvalidArgument("inconsistent SAE shapes".into()));
        }
        if self.theta.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::InvalidArgument("SAE thresholds must be >= 0".into()));
        }
        Ok(())
    }

    /// Unit-normalized decoder row of latent `j`.
    pub fn direction(&self, j: usize) -> Result<Array1<f64>> {
        if j >= self.d_sae() {
            return Err(Error::InvalidArgument(format!("latent {j} out of range")));
        }
        let row = self.w_dec.row(j);
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument(format!("latent {j} has a degenerate decoder row")));
        }
        Ok(row.mapv(|v| v / norm))
    }

    pub fn normalize_decoder_rows(&mut self) {
        for mut row in self.w_dec.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }

    pub fn snap_to_f32(&mut self) {
        let snap = |v: &mut f64| *v = f64::from(*v as f32);
        self.w_enc.iter_mut().for_each(snap);
        self.b_enc.iter_mut().for_each(snap);
        self.theta.iter_mut().for_each(snap);
        self.w_dec.iter_mut().for_each(snap);
        self.b_dec.iter_mut().for_each(snap);
    }
}

/// `z_i` where `z_i > theta_i`, else 0 (the step function is 0 at 0).
pub fn jumprelu(z: ArrayView1<f64>, theta: ArrayView1<f64>) -> Array1<f64> {
    ndarray::Zip::from(z)
        .and(theta)
        .map_collect(|&zi, &ti| if zi > ti { zi } else { 0.0 })
}

/// Encoder pre-activations `x W_enc + b_enc`.
pub fn pre_activations(x: ArrayView1<f64>, sae: &SaeParams) -> Array1<f64> {
    x.dot(&sae.w_enc) + &sae.b_enc
}

pub fn encode(x: ArrayView1<f64>, sae: &SaeParams) -> Array1<f64> {
    jumprelu(pre_activations(x, sae).view(), sae.theta.view())
}

pub fn decode(a: ArrayView1<f64>, sae: &SaeParams) -> Array1<f64> {
    a.dot(&sae.w_dec) + &sae.b_dec
}

/// Encodes every row of `x`; returns `(pre-activations, activations)`.
pub fn encode_batch(x: ArrayView2<f64>, sae: &SaeParams) -> (Array2<f64>, Array2<f64>) {
    let mut z = x.dot(&sae.w_enc);
    z += &sae.b_enc;
    let mut a = z.clone();
    for mut row in a.axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut row)
            .and(&sae.theta)
            .for_each(|v, &t| {
                if !(*v > t) {
                    *v = 0.0;
                }
            });
    }
    (z, a)
}

pub fn decode_batch(a: ArrayView2<f64>, sae: &SaeParams) -> Array2<f64> {
    let mut x = a.dot(&sae.w_dec);
    x += &sae.b_dec;
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeLoss {
    pub total: f64,
    /// Squared reconstruction error.
    pub recon: f64,
    /// Number of active latents.
    pub l0: f64,
}

/// `||x - decode(encode(x))||^2 + lambda ||a(x)||_0` for one input.
pub fn sae_loss(x: ArrayView1<f64>, sae: &SaeParams, lambda: f64) -> SaeLoss {
    let a = encode(x, sae);
    let r = &x - &decode(a.view(), sae);
    let recon = r.dot(&r);
    let l0 = a.iter().filter(|&&v| v != 0.0).count() as f64;
    SaeLoss {
        total: recon + lambda * l0,
        recon,
        l0,
    }
}
