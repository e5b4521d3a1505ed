//! Latent activations as classifiers of pass/fail, temperature robustness,
//! logit-lens token rankings and transfer to a fine-tuned checkpoint.

mod metrics;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use metrics::{
    auroc, calibrate_threshold, candidate_thresholds, classification_metrics, confusion, extended_f64, f1_score,
    Confusion, DetectionReport, ScoredSample,
};

use crate::error::{Error, Result};
use crate::harness::{render_prompt, vocab, LabeledSample, ProblemSpec, TokenId};
use crate::intervene::label_problems;
use crate::lm::{capture_final_token_residuals, ActivationRecord, Checkpoint, Label};
use crate::sae::{encode, SaeParams};

/// Default sweep: 0.0, 0.2, ..., 1.4.
pub fn default_temperatures() -> Vec<f64> {
    (0..8).map(|i| i as f64 / 5.0).collect()
}

/// Latent `index` of `sae` on each record, labeled from `labels`.
pub fn score_records(
    records: &[ActivationRecord],
    sae: &SaeParams,
    index: usize,
    labels: &BTreeMap<u64, Label>,
) -> Result<Vec<ScoredSample>> {
    if index >= sae.d_sae() {
        return Err(Error::InvalidArgument(format!("latent {index} out of range")));
    }
    records
        .iter()
        .map(|r| {
            if r.layer != sae.layer {
                return Err(Error::InvalidArgument("record layer differs from SAE layer".into()));
            }
            let label = labels
                .get(&r.problem_id)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("missing label for problem {}", r.problem_id)))?;
            Ok(ScoredSample {
                problem_id: r.problem_id,
                score: encode(r.vector.view(), sae)[index],
                label,
            })
        })
        .collect()
}

/// Final-token residuals at `layer`, rounded to single precision as if they
/// had passed through an activation store.
pub fn capture_records(ckpt: &Checkpoint, problems: &[ProblemSpec], layer: usize) -> Result<Vec<ActivationRecord>> {
    let prompts: Vec<_> = problems.iter().map(render_prompt).collect();
    let mut recs = capture_final_token_residuals(ckpt, &prompts, layer)?;
    for r in &mut recs {
        r.vector.mapv_inplace(|v| v as f32 as f64);
    }
    Ok(recs)
}

pub fn labels_of(samples: &[LabeledSample]) -> BTreeMap<u64, Label> {
    samples
        .iter()
        .map(|s| (s.problem_id, Label::from_passed(s.passed)))
        .collect()
}

/// A predictor latent with its calibrated decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenPredictor {
    pub layer: usize,
    pub index: usize,
    pub positive_class: Label,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

impl FrozenPredictor {
    pub fn report(&self, samples: &[ScoredSample]) -> DetectionReport {
        let mut r = classification_metrics(samples, self.threshold, self.positive_class);
        r.layer = self.layer;
        r.index = self.index;
        r
    }
}

/// Scores are prompt-side and fixed; labels are regenerated at each
/// temperature with per-problem seeds and shared by all predictors.
/// Thresholds stay frozen. Output is ordered by temperature, then predictor.
pub fn temperature_sweep(
    ckpt: &Checkpoint,
    problems: &[ProblemSpec],
    predictors: &[(FrozenPredictor, BTreeMap<u64, f64>)],
    temperatures: &[f64],
    seed: u64,
    max_new: usize,
) -> Result<Vec<DetectionReport>> {
    let mut out = Vec::with_capacity(temperatures.len() * predictors.len());
    for (i, &t) in temperatures.iter().enumerate() {
        let labeled = label_problems(ckpt, problems, &[], t, crate::rng::keyed(seed, &[i as u64]), max_new)?;
        for (predictor, scores) in predictors {
            let samples = labeled
                .iter()
                .map(|l| {
                    let score = *scores
                        .get(&l.problem_id)
                        .ok_or_else(|| Error::InvalidArgument(format!("no score for problem {}", l.problem_id)))?;
                    Ok(ScoredSample {
                        problem_id: l.problem_id,
                        score,
                        label: Label::from_passed(l.passed),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut r = predictor.report(&samples);
            r.temperature = Some(t);
            r.provenance = Some(ckpt.provenance.label());
            out.push(r);
        }
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(w: W, reports: &[DetectionReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["positive_class", "temperature", "auroc", "f1", "precision", "recall"])
        .map_err(to_io)?;
    for r in reports {
        out.write_record([
            match r.positive_class {
                Label::Correct => "correct".to_string(),
                _ => "incorrect".to_string(),
            },
            r.temperature.map_or_else(String::new, |t| t.to_string()),
            r.auroc.map_or_else(String::new, |a| a.to_string()),
            r.f1.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
        ])
        .map_err(to_io)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitLensEntry {
    pub token_id: TokenId,
    pub token: String,
    pub logit_increase: f64,
}

/// Unit decoder row `index` projected through the unembedding (final norm
/// ignored); top `k` tokens, ties to the lower id.
pub fn logit_lens(ckpt: &Checkpoint, sae: &SaeParams, index: usize, k: usize) -> Result<Vec<LogitLensEntry>> {
    let d = sae.direction(index)?;
    if d.len() != ckpt.config.d_model {
        return Err(Error::InvalidArgument("SAE width differs from model width".into()));
    }
    let inc = d.dot(&ckpt.weights.unembed);
    let mut order: Vec<usize> = (0..inc.len()).collect();
    order.sort_by(|&a, &b| inc[b].total_cmp(&inc[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|t| LogitLensEntry {
            token_id: t as TokenId,
            token: vocab::text(t as TokenId).unwrap_or("?").to_string(),
            logit_increase: inc[t],
        })
        .collect())
}
