//! Attention mass over the description, tests and initiator sections of a
//! prompt, and its shift under steering.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{render_prompt, ProblemSpec, PromptSpans};
use crate::lm::{attention_weights, AttentionTrace, Checkpoint, HookSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionShares {
    pub description_pct: f64,
    pub tests_pct: f64,
    pub initiator_pct: f64,
}

impl SectionShares {
    pub fn as_array(&self) -> [f64; 3] {
        [self.description_pct, self.tests_pct, self.initiator_pct]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            description_pct: a[0],
            tests_pct: a[1],
            initiator_pct: a[2],
        }
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// Head-averaged attention summed per section and normalized to percentages.
/// Positions outside the three spans (the BOS token) are ignored.
pub fn section_shares(trace: &AttentionTrace, spans: &PromptSpans) -> Result<SectionShares> {
    let ctx = trace.weights.ncols();
    let heads = trace.weights.nrows();
    if heads == 0 {
        return Err(Error::InvalidArgument("attention trace has no heads".into()));
    }
    let mean = trace.weights.sum_axis(ndarray::Axis(0)) / heads as f64;
    let mut sums = [0.0; 3];
    for (k, span) in [spans.description, spans.tests, spans.initiator].iter().enumerate() {
        if span.end > ctx {
            return Err(Error::InvalidArgument(format!("span ends at {} beyond context {ctx}", span.end)));
        }
        sums[k] = mean.slice(ndarray::s![span.start..span.end]).sum();
    }
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NonFinite("no attention mass on prompt sections".into()));
    }
    Ok(SectionShares::from_array(sums.map(|s| 100.0 * s / total)))
}

/// Mean over problems of steered minus baseline shares, paired by problem id.
pub fn attention_delta(baseline: &[(u64, SectionShares)], steered: &[(u64, SectionShares)]) -> Result<SectionShares> {
    if baseline.is_empty() || baseline.len() != steered.len() {
        return Err(Error::InvalidArgument("share lists must be non-empty and paired".into()));
    }
    let base: BTreeMap<u64, &SectionShares> = baseline.iter().map(|(id, s)| (*id, s)).collect();
    let mut acc = [0.0; 3];
    for (id, s) in steered {
        let b = base
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("problem {id} has no baseline shares")))?;
        for (a, (x, y)) in acc.iter_mut().zip(s.as_array().iter().zip(b.as_array())) {
            *a += x - y;
        }
    }
    let n = steered.len() as f64;
    Ok(SectionShares::from_array(acc.map(|a| a / n)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemShares {
    pub problem_id: u64,
    pub baseline: SectionShares,
    pub steered: SectionShares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub condition: String,
    pub steering_layer: usize,
    pub read_layer: usize,
    pub alpha: f64,
    pub baseline_mean: SectionShares,
    pub steered_mean: SectionShares,
    pub delta: SectionShares,
    pub per_problem: Vec<ProblemShares>,
}

fn mean_shares(v: &[(u64, SectionShares)]) -> SectionShares {
    let mut acc = [0.0; 3];
    for (_, s) in v {
        for (a, x) in acc.iter_mut().zip(s.as_array()) {
            *a += x;
        }
    }
    SectionShares::from_array(acc.map(|a| a / v.len() as f64))
}

/// Attention at `read_layer` from the final prompt token, with and without
/// the `steer` hook.
pub fn run_attention_experiment(
    ckpt: &Checkpoint,
    steer: &HookSpec,
    read_layer: usize,
    problems: &[ProblemSpec],
    condition: &str,
) -> Result<AttentionReport> {
    let alpha = match &steer.kind {
        crate::lm::HookKind::AddDirection { alpha, .. } => *alpha,
        _ => return Err(Error::InvalidArgument("attention experiment needs a steering hook".into())),
    };
    let mut base = Vec::with_capacity(problems.len());
    let mut steered = Vec::with_capacity(problems.len());
    let hooks = std::slice::from_ref(steer);
    for p in problems {
        let prompt = render_prompt(p);
        let b = attention_weights(ckpt, &prompt.tokens, read_layer, &[])?;
        let s = attention_weights(ckpt, &prompt.tokens, read_layer, hooks)?;
        base.push((p.id, section_shares(&b, &prompt.spans)?));
        steered.push((p.id, section_shares(&s, &prompt.spans)?));
    }
    let delta = attention_delta(&base, &steered)?;
    Ok(AttentionReport {
        condition: condition.to_string(),
        steering_layer: steer.layer,
        read_layer,
        alpha,
        baseline_mean: mean_shares(&base),
        steered_mean: mean_shares(&steered),
        delta,
        per_problem: base
            .iter()
            .zip(&steered)
            .map(|((id, b), (_, s))| ProblemShares {
                problem_id: *id,
                baseline: *b,
                steered: *s,
            })
            .collect(),
    })
}

pub fn write_shares_csv<W: Write>(w: W, reports: &[AttentionReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["problem_id", "condition", "description_pct", "tests_pct", "initiator_pct"])
        .map_err(to_io)?;
    for r in reports {
        for p in &r.per_problem {
            for (cond, s) in [("baseline".to_string(), p.baseline), (r.condition.clone(), p.steered)] {
                out.write_record([
                    p.problem_id.to_string(),
                    cond,
                    s.description_pct.to_string(),
                    s.tests_pct.to_string(),
                    s.initiator_pct.to_string(),
                ])
                .map_err(to_io)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
