//! Planted-feature superposition data and dictionary matching, used to check
//! that SAE training and feature selection recover known structure.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::SaeParams;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Magnitude {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
}

impl Magnitude {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Magnitude::Constant(v) => v,
            Magnitude::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        }
    }

    fn mean_square(&self) -> f64 {
        match *self {
            Magnitude::Constant(v) => v * v,
            Magnitude::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
        }
    }
}

/// Ground-truth features (unit rows) with firing probabilities and magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDictionary {
    pub features: Array2<f64>,
    pub firing_prob: Vec<f64>,
    pub magnitude: Magnitude,
    /// Standard deviation of isotropic Gaussian noise per coordinate.
    pub noise_std: f64,
}

impl PlantedDictionary {
    /// `n_true` random unit features in `R^d_model`, all with the same firing
    /// probability.
    pub fn random(n_true: usize, d_model: usize, firing_prob: f64, magnitude: Magnitude, seed: u64) -> Self {
        let mut rng = rng::rng_from(rng::substream(seed, "planted-dictionary"));
        let mut features = Array2::zeros((n_true, d_model));
        features.mapv_inplace(|_: f64| StandardNormal.sample(&mut rng));
        for mut row in features.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / n);
        }
        Self {
            features,
            firing_prob: vec![firing_prob; n_true],
            magnitude,
            noise_std: 0.0,
        }
    }

    /// Noise level giving the requested signal-to-noise ratio (in dB) for the
    /// expected signal power.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        let d = self.features.ncols() as f64;
        let signal: f64 = self.firing_prob.iter().sum::<f64>() * self.magnitude.mean_square();
        let noise_power = signal / 10f64.powf(snr_db / 10.0);
        self.noise_std = (noise_power / d).sqrt();
        self
    }

    pub fn n_true(&self) -> usize {
        self.features.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.firing_prob.len() != self.n_true() {
            return Err(Error::InvalidArgument("one firing probability per feature".into()));
        }
        for row in self.features.rows() {
            if (row.dot(&row).sqrt() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument("planted features must be unit norm".into()));
            }
        }
        Ok(())
    }
}

/// Samples `n` activations and their true sparse codes.
pub fn generate_superposition_data(
    dict: &PlantedDictionary,
    n: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 samples".into()));
    }
    dict.validate()?;
    let mut rng = rng::rng_from(rng::substream(seed, "superposition"));
    let k = dict.n_true();
    let mut codes = Array2::zeros((n, k));
    for mut row in codes.rows_mut() {
        for (j, c) in row.iter_mut().enumerate() {
            let p = dict.firing_prob[j];
            if p > 0.0 && rng.gen_bool(p.min(1.0)) {
                *c = dict.magnitude.sample(&mut rng);
            }
        }
    }
    let mut x = codes.dot(&dict.features);
    if dict.noise_std > 0.0 {
        x.mapv_inplace(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + dict.noise_std * e
        });
    }
    Ok((x, codes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub true_index: usize,
    pub learned_index: usize,
    pub abs_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub mean_abs_cosine: f64,
    /// One entry per true feature, sorted by true index.
    pub assignments: Vec<FeatureMatch>,
}

impl MatchResult {
    pub fn learned_for(&self, true_index: usize) -> Option<&FeatureMatch> {
        self.assignments.iter().find(|m| m.true_index == true_index)
    }
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    out
}

/// Greedy one-to-one matching by largest |cosine| between learned directions
/// (rows) and true features (rows).
pub fn match_dictionaries(learned: &Array2<f64>, truth: &Array2<f64>) -> Result<MatchResult> {
    if learned.nrows() == 0 || truth.nrows() == 0 {
        return Err(Error::InvalidArgument("dictionaries must be non-empty".into()));
    }
    if learned.ncols() != truth.ncols() {
        return Err(Error::InvalidArgument("dictionary widths differ".into()));
    }
    let cos = unit_rows(truth).dot(&unit_rows(learned).t()).mapv(f64::abs);
    let mut pairs: Vec<(usize, usize)> = (0..cos.nrows())
        .flat_map(|i| (0..cos.ncols()).map(move |j| (i, j)))
        .collect();
    pairs.sort_by(|a, b| cos[[b.0, b.1]].total_cmp(&cos[[a.0, a.1]]).then(a.cmp(b)));
    let mut true_used = vec![false; cos.nrows()];
    let mut learned_used = vec![false; cos.ncols()];
    let mut assignments = Vec::new();
    for (i, j) in pairs {
        if true_used[i] || learned_used[j] {
            continue;
        }
        true_used[i] = true;
        learned_used[j] = true;
        assignments.push(FeatureMatch {
            true_index: i,
            learned_index: j,
            abs_cosine: cos[[i, j]],
        });
    }
    assignments.sort_by_key(|m| m.true_index);
    // True features left over when the learned dictionary is smaller score 0.
    let mean_abs_cosine = assignments.iter().map(|m| m.abs_cosine).sum::<f64>() / cos.nrows() as f64;
    Ok(MatchResult {
        mean_abs_cosine,
        assignments,
    })
}

pub fn match_features(learned: &SaeParams, dict: &PlantedDictionary) -> Result<MatchResult> {
    match_dictionaries(&learned.w_dec, &dict.features)
}

/// Fraction of energy of `x` (rows) lying outside the row span of `basis`,
/// computed through a least-squares projection.
pub fn energy_outside_span(x: &Array2<f64>, basis: &Array2<f64>) -> f64 {
    // Gram-Schmidt orthonormal basis of the span.
    let mut q: Vec<Array1<f64>> = Vec::new();
    for row in basis.rows() {
        let mut v = row.to_owned();
        for u in &q {
            let c = v.dot(u);
            v.scaled_add(-c, u);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-10 {
            q.push(v / n);
        }
    }
    let total: f64 = x.iter().map(|v| v * v).sum();
    let mut outside = 0.0;
    for row in x.rows() {
        let mut r = row.to_owned();
        for u in &q {
            let c = r.dot(u);
            r.scaled_add(-c, u);
        }
        outside += r.dot(&r);
    }
    if total == 0.0 {
        0.0
    } else {
        outside / total
    }
}
