//! Aggregates whatever stages have run into one summary; absent stages are
//! marked rather than failing the report.

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::stages::{
    AttentionFile, CoefficientFile, DetectionFile, LabelFile, SelectionFile, SuiteFile, TransferFile, COMMANDS,
};
use super::store::RunDir;
use super::svg;
use crate::error::Result;
use crate::intervene::ExperimentReport;

pub const REPORT: &str = "report.json";
pub const MISSING: &str = "stage missing";

fn missing() -> Value {
    json!({ "status": MISSING })
}

fn load<T: DeserializeOwned>(run: &RunDir, name: &str) -> Result<Option<T>> {
    if run.has(name) {
        run.read_json(name).map(Some)
    } else {
        Ok(None)
    }
}

fn condition_row(r: &ExperimentReport) -> Value {
    json!({
        "condition": r.condition,
        "alpha": r.intervention.as_ref().and_then(|i| i.alpha),
        "feature": r.intervention.as_ref().map(|i| i.id()),
        "correction_rate": r.correction_rate,
        "corruption_rate": r.corruption_rate,
        "n_corrected": r.n_corrected,
        "n_initially_incorrect": r.n_initially_incorrect,
        "n_corrupted": r.n_corrupted,
        "n_initially_correct": r.n_initially_correct,
        "mean_token_similarity": r.mean_token_similarity,
    })
}

fn suite_summary(s: &SuiteFile) -> Value {
    let mut rows = vec![condition_row(&s.suite.baseline)];
    let mut p_table = Vec::new();
    for arm in &s.suite.arms {
        rows.push(condition_row(&arm.direction));
        rows.push(condition_row(&arm.control));
        p_table.push(json!({
            "arm": arm.name,
            "vs_baseline": arm.direction.p_vs_baseline,
            "vs_control": arm.direction.p_vs_control,
        }));
    }
    json!({ "provenance": s.provenance, "split": s.split, "conditions": rows, "p_values": p_table })
}

fn rate_chart(title: &str, s: &SuiteFile) -> String {
    let mut groups = vec![(
        "baseline".to_string(),
        vec![
            ("correction".to_string(), s.suite.baseline.correction_rate),
            ("corruption".to_string(), s.suite.baseline.corruption_rate),
        ],
    )];
    for arm in &s.suite.arms {
        for r in [&arm.direction, &arm.control] {
            groups.push((
                r.condition.clone(),
                vec![
                    ("correction".to_string(), r.correction_rate),
                    ("corruption".to_string(), r.corruption_rate),
                ],
            ));
        }
    }
    svg::bar_chart(title, &groups)
}

pub(super) fn report(_cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "report";
    let stages: serde_json::Map<String, Value> = COMMANDS
        .iter()
        .filter(|c| **c != STAGE)
        .map(|c| {
            let status = if run.manifest.stages.contains_key(*c) { "complete" } else { MISSING };
            (c.to_string(), json!(status))
        })
        .collect();

    let labels: Option<LabelFile> = load(run, "labels.json")?;
    let selection: Option<SelectionFile> = load(run, "selection.json")?;
    let detection: Option<DetectionFile> = load(run, "detection.json")?;
    let coeffs: Option<CoefficientFile> = load(run, "coefficients.json")?;
    let steering: Option<SuiteFile> = load(run, "steering.json")?;
    let ortho: Option<SuiteFile> = load(run, "ortho.json")?;
    let attention: Option<AttentionFile> = load(run, "attention.json")?;
    let transfer: Option<TransferFile> = load(run, "transfer.json")?;

    let features = selection.as_ref().map_or_else(missing, |s| {
        json!({
            "key_features": s.selection.rows().iter().map(|f| json!({
                "role": f.role, "layer": f.layer, "index": f.index,
                "metric": f.metric_kind, "value": f.metric,
            })).collect::<Vec<_>>(),
            "control": s.control,
            "n_correct": s.n_correct,
            "n_incorrect": s.n_incorrect,
            "latents_kept": s.n_latents_kept,
            "latents_total": s.n_latents_total,
        })
    });
    let detect = detection.as_ref().map_or_else(missing, |d| {
        json!({
            "analysis": d.analysis,
            "sweep": d.sweep.iter().map(|r| json!({
                "positive_class": r.positive_class, "temperature": r.temperature,
                "auroc": r.auroc, "f1": r.f1, "precision": r.precision, "recall": r.recall,
            })).collect::<Vec<_>>(),
            "logit_lens": d.logit_lens,
        })
    });
    let coefficients = coeffs.as_ref().map_or_else(missing, |c| {
        json!({
            "correct": { "alpha": c.correct.alpha, "objective": c.correct.objective, "flat": c.correct.flat },
            "incorrect": { "alpha": c.incorrect.alpha, "objective": c.incorrect.objective, "flat": c.incorrect.flat },
        })
    });
    let attn = attention.as_ref().map_or_else(missing, |a| {
        json!(a.reports.iter().map(|r| json!({
            "condition": r.condition, "steering_layer": r.steering_layer, "read_layer": r.read_layer,
            "alpha": r.alpha, "baseline": r.baseline_mean, "steered": r.steered_mean, "delta_pp": r.delta,
        })).collect::<Vec<_>>())
    });
    let xfer = transfer.as_ref().map_or_else(missing, |t| {
        json!({
            "base_provenance": t.base_provenance,
            "tuned_provenance": t.tuned_provenance,
            "frozen": t.frozen,
            "pass_rate": { "base": t.base_pass_rates.overall, "tuned": t.tuned_pass_rates.overall },
            "detection": { "base": t.base_detection, "tuned": t.tuned_detection },
            "steering": {
                "base": t.base_steering.arms.iter().map(|a| condition_row(&a.direction)).collect::<Vec<_>>(),
                "tuned": t.tuned_steering.arms.iter().map(|a| condition_row(&a.direction)).collect::<Vec<_>>(),
            },
        })
    });

    let summary = json!({
        "stages": stages,
        "pass_rates": labels.as_ref().map_or_else(missing, |l| json!(l.pass_rates)),
        "features": features,
        "detection": detect,
        "coefficients": coefficients,
        "steering": steering.as_ref().map_or_else(missing, suite_summary),
        "orthogonalization": ortho.as_ref().map_or_else(missing, suite_summary),
        "attention": attn,
        "transfer": xfer,
    });
    run.write_json(REPORT, &summary, STAGE)?;

    if let Some(d) = &detection {
        for (metric, name) in [("auroc", "detection_auroc.svg"), ("f1", "detection_f1.svg")] {
            let series: Vec<(String, Vec<(f64, f64)>)> = d
                .predictors
                .iter()
                .map(|p| {
                    let pts = d
                        .sweep
                        .iter()
                        .filter(|r| r.layer == p.layer && r.index == p.index && r.positive_class == p.positive_class)
                        .filter_map(|r| {
                            let y = if metric == "auroc" { r.auroc? } else { r.f1 };
                            Some((r.temperature?, y))
                        })
                        .collect();
                    (format!("L{}-{} ({:?})", p.layer, p.index, p.positive_class), pts)
                })
                .collect();
            run.write_untracked(name, svg::line_chart(&format!("{metric} vs temperature"), &series, 0.0, 1.0).as_bytes())?;
        }
    }
    if let Some(s) = &steering {
        run.write_untracked("steering_rates.svg", rate_chart("Steering: correction and corruption", s).as_bytes())?;
    }
    if let Some(s) = &ortho {
        run.write_untracked("ortho_rates.svg", rate_chart("Orthogonalization", s).as_bytes())?;
    }
    if let Some(a) = &attention {
        let groups: Vec<(String, Vec<(String, f64)>)> = ["description", "tests", "initiator"]
            .iter()
            .enumerate()
            .map(|(k, sec)| {
                (
                    sec.to_string(),
                    a.reports.iter().map(|r| (r.condition.clone(), r.delta.as_array()[k])).collect(),
                )
            })
            .collect();
        run.write_untracked("attention_delta.svg", svg::bar_chart("Attention change (pp)", &groups).as_bytes())?;
    }
    Ok(())
}
