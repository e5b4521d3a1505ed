//! Causal experiments: steering, orthogonalization, control latents,
//! coefficient search and one-tailed binomial tests.

mod search;
mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

pub use search::{coefficient_search, grid, Evaluation, SearchConfig, SearchOutcome, INV_PHI};
pub use stats::{binomial_test_greater, token_similarity};

use crate::error::{Error, Result};
use crate::harness::{evaluate_generation, render_prompt, LabeledSample, ProblemSpec};
use crate::lm::{generate, orthogonalize_checkpoint, Checkpoint, HookPositions, HookSpec, SamplingConfig};
use crate::rng::keyed;
use crate::select::FeatureStats;

pub const CONTROL_MIN_PROMPT_RATE: f64 = 0.10;

/// Generates one completion per problem and scores it against the tests.
/// Sampling seeds are derived per problem so results do not depend on order.
pub fn label_problems(
    ckpt: &Checkpoint,
    problems: &[ProblemSpec],
    hooks: &[HookSpec],
    temperature: f64,
    seed: u64,
    max_new: usize,
) -> Result<Vec<LabeledSample>> {
    problems
        .iter()
        .map(|p| {
            let sampling = SamplingConfig {
                temperature,
                max_new,
                seed: keyed(seed, &[p.id]),
            };
            let out = generate(ckpt, &render_prompt(p), sampling, hooks)?;
            Ok(evaluate_generation(p, &out))
        })
        .collect()
}

/// Steering hook adding `alpha * direction` after block `layer`.
pub fn make_steer_hook(layer: usize, direction: &Array1<f64>, alpha: f64, positions: HookPositions) -> Result<HookSpec> {
    crate::lm::check_unit(direction)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument("alpha must be finite".into()));
    }
    Ok(HookSpec::add_direction(layer, direction.clone(), alpha).at(positions))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Steer,
    Orthogonalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub layer: usize,
    pub index: usize,
    pub direction: Vec<f64>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub positions: HookPositions,
}

impl InterventionSpec {
    pub fn steer(layer: usize, index: usize, direction: &Array1<f64>, alpha: f64) -> Self {
        Self {
            kind: InterventionKind::Steer,
            layer,
            index,
            direction: direction.to_vec(),
            alpha: Some(alpha),
            positions: HookPositions::All,
        }
    }

    pub fn orthogonalize(layer: usize, index: usize, direction: &Array1<f64>) -> Self {
        Self {
            kind: InterventionKind::Orthogonalize,
            layer,
            index,
            direction: direction.to_vec(),
            alpha: None,
            positions: HookPositions::All,
        }
    }

    pub fn direction(&self) -> Array1<f64> {
        Array1::from(self.direction.clone())
    }

    pub fn id(&self) -> String {
        format!("L{}-{}", self.layer, self.index)
    }

    /// Hooks and, for orthogonalization, the modified checkpoint to generate with.
    pub fn apply(&self, ckpt: &Checkpoint) -> Result<(Option<Checkpoint>, Vec<HookSpec>)> {
        let d = self.direction();
        match self.kind {
            InterventionKind::Steer => {
                let alpha = self
                    .alpha
                    .ok_or_else(|| Error::InvalidArgument("steering spec needs alpha".into()))?;
                Ok((None, vec![make_steer_hook(self.layer, &d, alpha, self.positions)?]))
            }
            InterventionKind::Orthogonalize => Ok((Some(orthogonalize_checkpoint(ckpt, &d, &self.id())?), Vec::new())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub correction: f64,
    pub corruption: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub condition: String,
    pub intervention: Option<InterventionSpec>,
    pub correction_rate: f64,
    pub corruption_rate: f64,
    pub n_initially_correct: usize,
    pub n_initially_incorrect: usize,
    pub n_corrected: usize,
    pub n_corrupted: usize,
    pub mean_token_similarity: f64,
    pub p_vs_baseline: Option<PValues>,
    pub p_vs_control: Option<PValues>,
}

impl ExperimentReport {
    pub fn p_values_against(&self, other: &ExperimentReport) -> PValues {
        PValues {
            correction: binomial_test_greater(self.n_corrected, self.n_initially_incorrect, other.correction_rate),
            corruption: binomial_test_greater(self.n_corrupted, self.n_initially_correct, other.corruption_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub problem_id: u64,
    pub passed_before: bool,
    pub passed_after: bool,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRun {
    pub report: ExperimentReport,
    pub outcomes: Vec<ProblemOutcome>,
}

fn safe_rate(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// Compares greedy generations under `spec` against `baseline` labels of the same problems.
pub fn run_condition(
    ckpt: &Checkpoint,
    problems: &[ProblemSpec],
    baseline: &[LabeledSample],
    spec: Option<&InterventionSpec>,
    condition: &str,
    max_new: usize,
) -> Result<ConditionRun> {
    if problems.len() != baseline.len() || problems.iter().zip(baseline).any(|(p, b)| p.id != b.problem_id) {
        return Err(Error::InvalidArgument("baseline labels must align with problems".into()));
    }
    let after = match spec {
        None => baseline.to_vec(),
        Some(s) => {
            let (modified, hooks) = s.apply(ckpt)?;
            label_problems(modified.as_ref().unwrap_or(ckpt), problems, &hooks, 0.0, 0, max_new)?
        }
    };
    let outcomes: Vec<ProblemOutcome> = baseline
        .iter()
        .zip(&after)
        .map(|(b, a)| ProblemOutcome {
            problem_id: b.problem_id,
            passed_before: b.passed,
            passed_after: a.passed,
            similarity: token_similarity(&b.generated_tokens, &a.generated_tokens),
        })
        .collect();
    Ok(ConditionRun {
        report: summarize(condition, spec.cloned(), &outcomes),
        outcomes,
    })
}

pub fn summarize(condition: &str, intervention: Option<InterventionSpec>, outcomes: &[ProblemOutcome]) -> ExperimentReport {
    let n_ok = outcomes.iter().filter(|o| o.passed_before).count();
    let n_bad = outcomes.len() - n_ok;
    let corrected = outcomes.iter().filter(|o| !o.passed_before && o.passed_after).count();
    let corrupted = outcomes.iter().filter(|o| o.passed_before && !o.passed_after).count();
    let similarity = if outcomes.is_empty() {
        100.0
    } else {
        outcomes.iter().map(|o| o.similarity).sum::<f64>() / outcomes.len() as f64
    };
    ExperimentReport {
        condition: condition.to_string(),
        intervention,
        correction_rate: safe_rate(corrected, n_bad),
        corruption_rate: safe_rate(corrupted, n_ok),
        n_initially_correct: n_ok,
        n_initially_incorrect: n_bad,
        n_corrected: corrected,
        n_corrupted: corrupted,
        mean_token_similarity: similarity,
        p_vs_baseline: None,
        p_vs_control: None,
    }
}

pub fn objective_correct(r: &ExperimentReport) -> f64 {
    r.correction_rate
}

pub fn objective_incorrect(r: &ExperimentReport) -> f64 {
    0.5 * (r.corruption_rate + r.mean_token_similarity / 100.0)
}

/// Non-discriminative latent: passes the background filter, fires on at
/// least 10% of prompts, minimal |s| then minimal |t| (undefined t ranks
/// last), then lowest layer and index.
pub fn select_control_feature(stats: &[FeatureStats]) -> Result<(usize, usize)> {
    let key = |s: &FeatureStats| (s.s_correct.abs(), s.t_correct.map_or(f64::INFINITY, f64::abs), s.layer, s.index);
    stats
        .iter()
        .filter(|s| s.kept && s.prompt_rate >= CONTROL_MIN_PROMPT_RATE)
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
                .then(ka.3.cmp(&kb.3))
        })
        .map(|s| (s.layer, s.index))
        .ok_or_else(|| Error::InvalidArgument("no eligible control latent".into()))
}

/// One arm of a comparison: the selected direction and the control at matching settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub direction: ExperimentReport,
    pub control: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSuite {
    pub kind: InterventionKind,
    pub baseline: ExperimentReport,
    pub arms: Vec<Arm>,
}

pub struct ArmInput {
    pub name: String,
    pub direction: InterventionSpec,
    pub control: InterventionSpec,
}

/// Runs baseline plus each arm's direction and control on `problems`, then
/// attaches one-tailed p-values (null rate = the comparison condition's
/// observed rate). Returns per-condition outcomes keyed by condition name.
pub fn run_suite(
    ckpt: &Checkpoint,
    problems: &[ProblemSpec],
    baseline: &[LabeledSample],
    kind: InterventionKind,
    arms: &[ArmInput],
    max_new: usize,
) -> Result<(ExperimentSuite, BTreeMap<String, Vec<ProblemOutcome>>)> {
    let base = run_condition(ckpt, problems, baseline, None, "baseline", max_new)?;
    let mut outcomes = BTreeMap::new();
    outcomes.insert("baseline".to_string(), base.outcomes);
    let mut out_arms = Vec::new();
    for arm in arms {
        if arm.direction.kind != kind || arm.control.kind != kind {
            return Err(Error::InvalidArgument("arm kind differs from suite kind".into()));
        }
        if arm.direction.alpha != arm.control.alpha {
            return Err(Error::InvalidArgument("control must use the direction's coefficient".into()));
        }
        let dname = arm.name.clone();
        let cname = format!("control_for_{}", arm.name);
        let mut d = run_condition(ckpt, problems, baseline, Some(&arm.direction), &dname, max_new)?;
        let mut c = run_condition(ckpt, problems, baseline, Some(&arm.control), &cname, max_new)?;
        d.report.p_vs_baseline = Some(d.report.p_values_against(&base.report));
        d.report.p_vs_control = Some(d.report.p_values_against(&c.report));
        c.report.p_vs_baseline = Some(c.report.p_values_against(&base.report));
        outcomes.insert(dname, d.outcomes);
        outcomes.insert(cname, c.outcomes);
        out_arms.push(Arm {
            name: arm.name.clone(),
            direction: d.report,
            control: c.report,
        });
    }
    Ok((
        ExperimentSuite {
            kind,
            baseline: base.report,
            arms: out_arms,
        },
        outcomes,
    ))
}

/// Steering comparison: each arm steers with the searched coefficient and
/// the control latent is steered with the same coefficient.
pub fn run_steering_experiment(
    ckpt: &Checkpoint,
    problems: &[ProblemSpec],
    baseline: &[LabeledSample],
    arms: &[ArmInput],
    max_new: usize,
) -> Result<(ExperimentSuite, BTreeMap<String, Vec<ProblemOutcome>>)> {
    if arms.iter().any(|a| a.direction.alpha.is_none()) {
        return Err(Error::InvalidArgument("missing steering coefficient".into()));
    }
    run_suite(ckpt, problems, baseline, InterventionKind::Steer, arms, max_new)
}

pub fn run_orthogonalization_experiment(
    ckpt: &Checkpoint,
    problems: &[ProblemSpec],
    baseline: &[LabeledSample],
    arms: &[ArmInput],
    max_new: usize,
) -> Result<(ExperimentSuite, BTreeMap<String, Vec<ProblemOutcome>>)> {
    run_suite(ckpt, problems, baseline, InterventionKind::Orthogonalize, arms, max_new)
}

/// Per-problem before/after CSV for auditing.
pub fn write_outcomes_csv<W: Write>(w: W, outcomes: &BTreeMap<String, Vec<ProblemOutcome>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["condition", "problem_id", "passed_before", "passed_after", "similarity"])
        .map_err(to_io)?;
    for (cond, rows) in outcomes {
        for o in rows {
            out.write_record([
                cond.clone(),
                o.problem_id.to_string(),
                o.passed_before.to_string(),
                o.passed_after.to_string(),
                o.similarity.to_string(),
            ])
            .map_err(to_io)?;
        }
    }
    out.flush()?;
    Ok(())
}
