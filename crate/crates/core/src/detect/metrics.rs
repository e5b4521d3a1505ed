//! Threshold classifiers over scalar scores.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lm::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub problem_id: u64,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// 1 when nothing was predicted and nothing was positive; 0 when
    /// nothing was predicted but positives existed.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            if self.tp + self.fn_ == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// 1 when there are no positives.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn confusion(samples: &[ScoredSample], tau: f64, positive: Label) -> Confusion {
    let mut c = Confusion::default();
    for s in samples {
        match (s.score > tau, s.label == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

fn check_two_classes(samples: &[ScoredSample], positive: Label) -> Result<()> {
    let pos = samples.iter().filter(|s| s.label == positive).count();
    if pos == 0 || pos == samples.len() {
        return Err(Error::InvalidArgument("both classes must be present".into()));
    }
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite("detection score".into()));
    }
    Ok(())
}

/// Candidate thresholds: -inf, midpoints between consecutive distinct scores, +inf.
pub fn candidate_thresholds(samples: &[ScoredSample]) -> Vec<f64> {
    let mut scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut out = Vec::with_capacity(scores.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(scores.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Threshold with the highest F1 on `samples`; ties go to the smallest threshold.
pub fn calibrate_threshold(samples: &[ScoredSample], positive: Label) -> Result<f64> {
    check_two_classes(samples, positive)?;
    let mut best = (f64::NEG_INFINITY, -1.0);
    for tau in candidate_thresholds(samples) {
        let f1 = confusion(samples, tau, positive).f1();
        if f1 > best.1 {
            best = (tau, f1);
        }
    }
    Ok(best.0)
}

/// Mann-Whitney probability that a positive outscores a negative, ties counting one half.
pub fn auroc(samples: &[ScoredSample], positive: Label) -> Result<f64> {
    check_two_classes(samples, positive)?;
    // Rank-sum with midranks for ties.
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].score == sorted[i].score {
            j += 1;
        }
        // Twice the midrank of positions i..=j (1-based), kept integral.
        let twice_mid = (i + j + 2) as f64;
        let pos_in_group = sorted[i..=j].iter().filter(|s| s.label == positive).count();
        rank_sum_pos += twice_mid * pos_in_group as f64;
        i = j + 1;
    }
    let n_pos = samples.iter().filter(|s| s.label == positive).count() as f64;
    let n_neg = samples.len() as f64 - n_pos;
    let u2 = rank_sum_pos - n_pos * (n_pos + 1.0);
    Ok(u2 / (2.0 * n_pos * n_neg))
}

/// `serde_json` cannot carry infinities; they travel as the strings `"inf"` and `"-inf"`.
pub mod extended_f64 {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub layer: usize,
    pub index: usize,
    pub positive_class: Label,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Undefined when the evaluated set has a single class.
    pub auroc: Option<f64>,
    pub confusion: Confusion,
    pub n_samples: usize,
    pub temperature: Option<f64>,
    pub provenance: Option<String>,
}

/// Metrics of the rule `score > tau` on `samples`.
pub fn classification_metrics(samples: &[ScoredSample], tau: f64, positive: Label) -> DetectionReport {
    let c = confusion(samples, tau, positive);
    DetectionReport {
        layer: 0,
        index: 0,
        positive_class: positive,
        threshold: tau,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        auroc: auroc(samples, positive).ok(),
        confusion: c,
        n_samples: samples.len(),
        temperature: None,
        provenance: None,
    }
}
