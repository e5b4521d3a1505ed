//! Reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use latent_scalpel::lm::Label;
use latent_scalpel::sae::*;
use latent_scalpel::select::{
    background_filter_activations, layer_stats, select_features, LayerActivationDataset, TStatCounts, BACKGROUND_THRESHOLD,
};
use ndarray::Array2;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_sae(rng: &mut ChaCha8Rng, d: usize, s: usize) -> SaeParams {
    let mut sae = SaeParams::zeros(0, d, s);
    sae.w_enc.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    sae.b_enc.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    sae.theta.mapv_inplace(|_| rng.gen_range(0.0..0.6));
    sae.w_dec.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    sae.b_dec.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    sae
}

/// Scalar-loop reference for the JumpReLU forward pass and loss.
pub fn sae_oracle(x: &[f64], sae: &SaeParams, lambda: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let (d, s) = (sae.d_model(), sae.d_sae());
    let mut a = vec![0.0; s];
    for j in 0..s {
        let mut z = sae.b_enc[j];
        for i in 0..d {
            z += x[i] * sae.w_enc[[i, j]];
        }
        a[j] = if z > sae.theta[j] { z } else { 0.0 };
    }
    let mut r = vec![0.0; d];
    for k in 0..d {
        r[k] = sae.b_dec[k];
        for j in 0..s {
            r[k] += a[j] * sae.w_dec[[j, k]];
        }
    }
    let recon: f64 = (0..d).map(|k| (x[k] - r[k]).powi(2)).sum();
    let l0 = a.iter().filter(|&&v| v != 0.0).count() as f64;
    (a, r, recon + lambda * l0)
}

/// Reference t with the one-pass sum-of-squares variance.
pub fn t_oracle(ds: &LayerActivationDataset, j: usize, counts: TStatCounts) -> Option<f64> {
    let pick = |class: Label| -> Vec<f64> {
        (0..ds.labels.len())
            .filter(|&i| ds.labels[i] == class && ds.activations[[i, j]] > 0.0)
            .map(|i| ds.activations[[i, j]])
            .collect()
    };
    let (c, w) = (pick(Label::Correct), pick(Label::Incorrect));
    if c.len() < 2 || w.len() < 2 {
        return None;
    }
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let s: f64 = v.iter().sum();
        let ss: f64 = v.iter().map(|x| x * x).sum();
        let m = s / n;
        (m, ((ss - n * m * m) / (n - 1.0)).max(0.0))
    };
    let ((mc, vc), (mw, vw)) = (moments(&c), moments(&w));
    let (nc, nw) = match counts {
        TStatCounts::Total => (ds.n_correct as f64, ds.n_incorrect as f64),
        TStatCounts::Nonzero => (c.len() as f64, w.len() as f64),
    };
    let den = (vc / nc + vw / nw).sqrt();
    (den > 1e-12).then(|| (mc - mw) / den)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, latents: usize, density: f64) -> LayerActivationDataset {
    let mut labels: Vec<Label> = (0..n)
        .map(|_| if rng.gen_bool(0.5) { Label::Correct } else { Label::Incorrect })
        .collect();
    labels[0] = Label::Correct;
    labels[1] = Label::Incorrect;
    let acts = Array2::from_shape_fn((n, latents), |_| {
        if rng.gen_bool(density) {
            rng.gen_range(0.01..5.0)
        } else {
            0.0
        }
    });
    LayerActivationDataset::new(3, (0..n as u64).collect(), acts, labels).unwrap()
}

/// Exact upper tail `P(X >= k)` for `X ~ Binomial(n, a/b)`.
pub fn binomial_tail_exact(k: usize, n: usize, a: u64, b: u64) -> f64 {
    let p = BigRational::new(BigInt::from(a), BigInt::from(b));
    let q = BigRational::one() - &p;
    let mut total = BigRational::zero();
    let mut choose = BigInt::one();
    for i in 0..=n {
        if i > 0 {
            choose = choose * BigInt::from(n - i + 1) / BigInt::from(i);
        }
        if i >= k {
            let term = BigRational::from_integer(choose.clone()) * num_traits::pow(p.clone(), i) * num_traits::pow(q.clone(), n - i);
            total += term;
        }
    }
    total.to_f64().unwrap()
}

pub fn sae_batch_loss(x: &Array2<f64>, sae: &SaeParams, lambda: f64) -> (f64, f64) {
    let (stats, _) = loss_and_grads(x.view(), sae, lambda, 0.1);
    (stats.recon + lambda * stats.l0, stats.l0)
}

/// Central-difference check of every SAE parameter gradient at `d_model = 8`.
/// Panics on a mismatch; returns `(checked, total)`, skipping entries whose
/// perturbation moves an activation across its threshold.
pub fn sae_gradient_check(seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, s, lambda) = (8, 16, 0.3);
    let sae = random_sae(&mut rng, d, s);
    let x = Array2::from_shape_fn((12, d), |_| rng.gen_range(-2.0..2.0));
    let (_, g) = loss_and_grads(x.view(), &sae, lambda, 0.1);
    let (_, l0) = sae_batch_loss(&x, &sae, lambda);
    let h = 1e-6;
    let mut checked = 0;
    type Pick = fn(&mut SaeParams) -> &mut [f64];
    let params: [(&str, Pick, Vec<f64>); 4] = [
        ("w_enc", |p| p.w_enc.as_slice_mut().unwrap(), g.w_enc.iter().copied().collect()),
        ("b_enc", |p| p.b_enc.as_slice_mut().unwrap(), g.b_enc.to_vec()),
        ("w_dec", |p| p.w_dec.as_slice_mut().unwrap(), g.w_dec.iter().copied().collect()),
        ("b_dec", |p| p.b_dec.as_slice_mut().unwrap(), g.b_dec.to_vec()),
    ];
    let total = params.iter().map(|p| p.2.len()).sum();
    for (name, pick, grad) in params {
        for k in 0..grad.len() {
            let mut plus = sae.clone();
            pick(&mut plus)[k] += h;
            let mut minus = sae.clone();
            pick(&mut minus)[k] -= h;
            let (lp, l0p) = sae_batch_loss(&x, &plus, lambda);
            let (lm, l0m) = sae_batch_loss(&x, &minus, lambda);
            if l0p != l0 || l0m != l0 {
                // The perturbation crossed a threshold, where the loss jumps.
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let an = grad[k];
            let scale = fd.abs().max(an.abs());
            if scale > 1e-7 {
                assert!((fd - an).abs() / scale < 1e-3, "{name}[{k}]: fd {fd} analytic {an}");
            } else {
                assert!((fd - an).abs() < 1e-7, "{name}[{k}]: fd {fd} analytic {an}");
            }
            checked += 1;
        }
    }
    (checked, total)
}

pub fn planted_setup() -> (PlantedDictionary, SaeParams) {
    let dict = PlantedDictionary::random(32, 16, 3.0 / 32.0, Magnitude::Uniform { lo: 1.0, hi: 2.0 }, 11).with_snr_db(30.0);
    let (x, _) = generate_superposition_data(&dict, 20_000, 12).unwrap();
    let cfg = SaeTrainConfig {
        lambda: 0.2,
        bandwidth_scale: 0.05,
        steps: 4000,
        lr: 3e-3,
        batch: 256,
        seed: 3,
        ..Default::default()
    };
    let (sae, _) = train_sae_matrix(x.view(), 0, &cfg).unwrap();
    (dict, sae)
}

/// Samples from `dict` with feature 0 forced on (`Some(true)`), off, or left random.
pub fn sample_with(dict: &PlantedDictionary, n: usize, seed: u64, f0: Option<bool>, others: f64) -> Array2<f64> {
    let mut d = dict.clone();
    d.firing_prob = vec![others; d.n_true()];
    d.firing_prob[0] = match f0 {
        Some(true) => 1.0,
        Some(false) => 0.0,
        None => others,
    };
    generate_superposition_data(&d, n, seed).unwrap().0
}

pub struct PlantedOutcome {
    pub mean_abs_cosine: f64,
    /// Learned latent matched to the planted correctness feature.
    pub planted: usize,
    /// Latent chosen as the correct-steering feature.
    pub selected: usize,
    /// Separation score gap between the selection and the best other kept latent.
    pub margin: f64,
}

/// Labels samples by the planted feature 0 and runs background filtering and selection.
pub fn planted_selection(dict: &PlantedDictionary, sae: &SaeParams) -> PlantedOutcome {
    let m = match_features(sae, dict).unwrap();
    let planted = m.learned_for(0).unwrap().learned_index;

    let p = 3.0 / 32.0;
    let correct = sample_with(dict, 300, 21, Some(true), p);
    let incorrect = sample_with(dict, 300, 22, Some(false), p);
    let background = sample_with(dict, 5000, 23, Some(false), 0.01);
    let x = ndarray::concatenate![ndarray::Axis(0), correct, incorrect];
    let (_, a) = encode_batch(x.view(), sae);
    let labels: Vec<Label> = (0..600).map(|i| if i < 300 { Label::Correct } else { Label::Incorrect }).collect();
    let ds = LayerActivationDataset::new(0, (0..600).collect(), a, labels).unwrap();
    let (_, bg) = encode_batch(background.view(), sae);
    let mask = background_filter_activations(bg.view(), BACKGROUND_THRESHOLD).unwrap();
    let stats = layer_stats(&ds, &mask, TStatCounts::Total).unwrap();
    let sel = select_features(&stats).unwrap();
    let runner_up = stats
        .iter()
        .filter(|s| s.kept && s.index != planted)
        .map(|s| s.s_correct)
        .fold(f64::NEG_INFINITY, f64::max);
    PlantedOutcome {
        mean_abs_cosine: m.mean_abs_cosine,
        planted,
        selected: sel.correct_steering.index,
        margin: sel.correct_steering.metric - runner_up,
    }
}
