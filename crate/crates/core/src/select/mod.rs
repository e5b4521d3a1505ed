//! Per-latent statistics over labeled final-token activations and the
//! selection of predictor and steering latents across layers.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{ActivationRecord, Label};
use crate::sae::{encode_batch, SaeParams};

pub const BACKGROUND_THRESHOLD: f64 = 0.02;

/// Latent activations of one layer with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivationDataset {
    pub layer: usize,
    pub problem_ids: Vec<u64>,
    /// `n_samples x d_sae`, all entries >= 0.
    pub activations: Array2<f64>,
    pub labels: Vec<Label>,
    pub n_correct: usize,
    pub n_incorrect: usize,
}

impl LayerActivationDataset {
    pub fn new(layer: usize, problem_ids: Vec<u64>, activations: Array2<f64>, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != activations.nrows() || problem_ids.len() != labels.len() {
            return Err(Error::InvalidArgument("labels, ids and rows must align".into()));
        }
        if labels.iter().any(|&l| l == Label::Unlabeled) {
            return Err(Error::InvalidArgument("dataset rows must be labeled".into()));
        }
        if activations.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::InvalidArgument("latent activations must be >= 0".into()));
        }
        let n_correct = labels.iter().filter(|&&l| l == Label::Correct).count();
        Ok(Self {
            layer,
            problem_ids,
            n_incorrect: labels.len() - n_correct,
            n_correct,
            activations,
            labels,
        })
    }

    pub fn n_latents(&self) -> usize {
        self.activations.ncols()
    }

    fn class_values(&self, j: usize, class: Label) -> impl Iterator<Item = f64> + '_ {
        self.activations
            .column(j)
            .into_iter()
            .zip(&self.labels)
            .filter(move |(_, &l)| l == class)
            .map(|(&a, _)| a)
    }

    /// Same data with correct/incorrect swapped.
    pub fn with_swapped_labels(&self) -> Self {
        let labels = self
            .labels
            .iter()
            .map(|l| match l {
                Label::Correct => Label::Incorrect,
                Label::Incorrect => Label::Correct,
                Label::Unlabeled => Label::Unlabeled,
            })
            .collect();
        Self {
            labels,
            n_correct: self.n_incorrect,
            n_incorrect: self.n_correct,
            ..self.clone()
        }
    }
}

/// Encodes each record with `sae`; labels are looked up by problem id.
pub fn build_dataset(
    records: &[ActivationRecord],
    sae: &SaeParams,
    labels: &BTreeMap<u64, Label>,
) -> Result<LayerActivationDataset> {
    if let Some(r) = records.iter().find(|r| r.layer != sae.layer) {
        return Err(Error::InvalidArgument(format!(
            "record from layer {} does not match SAE layer {}",
            r.layer, sae.layer
        )));
    }
    let mut x = Array2::zeros((records.len(), sae.d_model()));
    for (mut row, r) in x.rows_mut().into_iter().zip(records) {
        row.assign(&r.vector);
    }
    let (_, a) = encode_batch(x.view(), sae);
    let row_labels = records
        .iter()
        .map(|r| {
            labels
                .get(&r.problem_id)
                .copied()
                .filter(|&l| l != Label::Unlabeled)
                .ok_or_else(|| Error::InvalidArgument(format!("missing label for problem {}", r.problem_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    LayerActivationDataset::new(sae.layer, records.iter().map(|r| r.problem_id).collect(), a, row_labels)
}

/// Per-latent fraction of background tokens with a nonzero activation and
/// the keep decision (`rate <= threshold`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundMask {
    pub rates: Vec<f64>,
    pub keep: Vec<bool>,
    pub threshold: f64,
}

pub fn background_filter_activations(latents: ArrayView2<f64>, threshold: f64) -> Result<BackgroundMask> {
    if latents.nrows() == 0 {
        return Err(Error::InvalidArgument("background corpus is empty".into()));
    }
    let n = latents.nrows() as f64;
    let rates: Vec<f64> = latents
        .columns()
        .into_iter()
        .map(|c| c.iter().filter(|&&a| a > 0.0).count() as f64 / n)
        .collect();
    let keep = rates.iter().map(|&r| r <= threshold).collect();
    Ok(BackgroundMask {
        rates,
        keep,
        threshold,
    })
}

/// Excludes latents that fire on more than `threshold` of background tokens.
pub fn background_filter(sae: &SaeParams, corpus_activations: &[ActivationRecord], threshold: f64) -> Result<BackgroundMask> {
    if corpus_activations.is_empty() {
        return Err(Error::InvalidArgument("background corpus is empty".into()));
    }
    if corpus_activations.iter().any(|r| r.layer != sae.layer) {
        return Err(Error::InvalidArgument("background activations come from another layer".into()));
    }
    let mut x = Array2::zeros((corpus_activations.len(), sae.d_model()));
    for (mut row, r) in x.rows_mut().into_iter().zip(corpus_activations) {
        row.assign(&r.vector);
    }
    let (_, a) = encode_batch(x.view(), sae);
    background_filter_activations(a.view(), threshold)
}

/// Denominator convention for the t-statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TStatCounts {
    /// Total class sample counts `N_correct`, `N_incorrect`.
    #[default]
    Total,
    /// Number of nonzero activations per class (classical Welch).
    Nonzero,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `(t_correct, t_incorrect)` for latent `j`, with mean and (n-1) standard
/// deviation taken over nonzero activations only. `None` when either class
/// has fewer than two nonzero activations or the denominator vanishes.
pub fn welch_t(ds: &LayerActivationDataset, j: usize, counts: TStatCounts) -> Option<(f64, f64)> {
    let correct: Vec<f64> = ds.class_values(j, Label::Correct).filter(|&a| a > 0.0).collect();
    let incorrect: Vec<f64> = ds.class_values(j, Label::Incorrect).filter(|&a| a > 0.0).collect();
    if correct.len() < 2 || incorrect.len() < 2 {
        return None;
    }
    let (mc, sc) = mean_std(&correct);
    let (mi, si) = mean_std(&incorrect);
    let (nc, ni) = match counts {
        TStatCounts::Total => (ds.n_correct as f64, ds.n_incorrect as f64),
        TStatCounts::Nonzero => (correct.len() as f64, incorrect.len() as f64),
    };
    let denom = (sc * sc / nc + si * si / ni).sqrt();
    if !(denom > 0.0) || !denom.is_finite() {
        return None;
    }
    let t = (mc - mi) / denom;
    Some((t, -t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub f_correct: f64,
    pub f_incorrect: f64,
    pub s_correct: f64,
    pub s_incorrect: f64,
}

/// Class firing frequencies `f` and separation scores `s = f_this - f_other`.
pub fn frequencies_and_separation(ds: &LayerActivationDataset, j: usize) -> Result<Separation> {
    if ds.n_correct == 0 || ds.n_incorrect == 0 {
        return Err(Error::InvalidArgument("both classes must be non-empty".into()));
    }
    let fires = |class| ds.class_values(j, class).filter(|&a| a > 0.0).count() as f64;
    let f_correct = fires(Label::Correct) / ds.n_correct as f64;
    let f_incorrect = fires(Label::Incorrect) / ds.n_incorrect as f64;
    let s_correct = f_correct - f_incorrect;
    Ok(Separation {
        f_correct,
        f_incorrect,
        s_correct,
        s_incorrect: -s_correct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub layer: usize,
    pub index: usize,
    pub t_correct: Option<f64>,
    pub t_incorrect: Option<f64>,
    pub f_correct: f64,
    pub f_incorrect: f64,
    pub s_correct: f64,
    pub s_incorrect: f64,
    pub background_rate: f64,
    /// Passes the background-frequency filter.
    pub kept: bool,
    /// Fraction of all samples (both classes) on which the latent fires.
    pub prompt_rate: f64,
}

impl FeatureStats {
    /// The t-statistic is defined for this latent.
    pub fn valid(&self) -> bool {
        self.t_correct.is_some()
    }
}

pub fn layer_stats(
    ds: &LayerActivationDataset,
    mask: &BackgroundMask,
    counts: TStatCounts,
) -> Result<Vec<FeatureStats>> {
    if mask.keep.len() != ds.n_latents() {
        return Err(Error::InvalidArgument("background mask width differs from dataset".into()));
    }
    let n = ds.labels.len() as f64;
    (0..ds.n_latents())
        .map(|j| {
            let sep = frequencies_and_separation(ds, j)?;
            let t = welch_t(ds, j, counts);
            let fires = ds.activations.column(j).iter().filter(|&&a| a > 0.0).count() as f64;
            Ok(FeatureStats {
                layer: ds.layer,
                index: j,
                t_correct: t.map(|t| t.0),
                t_incorrect: t.map(|t| t.1),
                f_correct: sep.f_correct,
                f_incorrect: sep.f_incorrect,
                s_correct: sep.s_correct,
                s_incorrect: sep.s_incorrect,
                background_rate: mask.rates[j],
                kept: mask.keep[j],
                prompt_rate: fires / n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    CorrectPredicting,
    IncorrectPredicting,
    CorrectSteering,
    IncorrectSteering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    TStat,
    Separation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub role: FeatureRole,
    pub layer: usize,
    pub index: usize,
    pub metric: f64,
    pub metric_kind: MetricKind,
}

/// Four chosen latents: two predictors (max t) and two steering latents (max s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub correct_predicting: SelectedFeature,
    pub incorrect_predicting: SelectedFeature,
    pub correct_steering: SelectedFeature,
    pub incorrect_steering: SelectedFeature,
}

impl SelectionResult {
    pub fn rows(&self) -> [&SelectedFeature; 4] {
        [
            &self.correct_predicting,
            &self.incorrect_predicting,
            &self.correct_steering,
            &self.incorrect_steering,
        ]
    }
}

fn argmax_by(
    stats: &[FeatureStats],
    role: FeatureRole,
    kind: MetricKind,
    metric: impl Fn(&FeatureStats) -> Option<f64>,
) -> Result<SelectedFeature> {
    let mut best: Option<(&FeatureStats, f64)> = None;
    for s in stats.iter().filter(|s| s.kept) {
        let Some(v) = metric(s).filter(|v| v.is_finite()) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((b, bv)) => v > bv || (v == bv && (s.layer, s.index) < (b.layer, b.index)),
        };
        if better {
            best = Some((s, v));
        }
    }
    let (s, v) = best.ok_or_else(|| {
        Error::InvalidArgument(format!("no valid candidate for {role:?}"))
    })?;
    Ok(SelectedFeature {
        role,
        layer: s.layer,
        index: s.index,
        metric: v,
        metric_kind: kind,
    })
}

/// Argmax of each metric over all layers' latents that pass the background
/// filter. Ties go to the lowest layer, then the lowest index.
pub fn select_features(all_layer_stats: &[FeatureStats]) -> Result<SelectionResult> {
    Ok(SelectionResult {
        correct_predicting: argmax_by(all_layer_stats, FeatureRole::CorrectPredicting, MetricKind::TStat, |s| s.t_correct)?,
        incorrect_predicting: argmax_by(all_layer_stats, FeatureRole::IncorrectPredicting, MetricKind::TStat, |s| s.t_incorrect)?,
        correct_steering: argmax_by(all_layer_stats, FeatureRole::CorrectSteering, MetricKind::Separation, |s| Some(s.s_correct))?,
        incorrect_steering: argmax_by(all_layer_stats, FeatureRole::IncorrectSteering, MetricKind::Separation, |s| Some(s.s_incorrect))?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub const STATS_CSV_HEADER: [&str; 10] = [
    "layer",
    "index",
    "t_correct",
    "t_incorrect",
    "f_correct",
    "f_incorrect",
    "s_correct",
    "s_incorrect",
    "background_rate",
    "valid",
];

/// CSV export; undefined t-statistics are empty fields.
pub fn write_stats_csv<W: Write>(w: W, stats: &[FeatureStats]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(STATS_CSV_HEADER).map_err(to_io)?;
    for s in stats {
        out.write_record([
            s.layer.to_string(),
            s.index.to_string(),
            opt(s.t_correct),
            opt(s.t_incorrect),
            s.f_correct.to_string(),
            s.f_incorrect.to_string(),
            s.s_correct.to_string(),
            s.s_incorrect.to_string(),
            s.background_rate.to_string(),
            s.valid().to_string(),
        ])
        .map_err(to_io)?;
    }
    out.flush()?;
    Ok(())
}
