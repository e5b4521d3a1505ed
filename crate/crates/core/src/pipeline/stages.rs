//! One function per pipeline command.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::store::RunDir;
use crate::attention::{run_attention_experiment, write_shares_csv, AttentionReport};
use crate::detect::{
    calibrate_threshold, capture_records, labels_of, logit_lens, score_records, temperature_sweep, write_sweep_csv,
    DetectionReport, FrozenPredictor, LogitLensEntry,
};
use crate::error::{Error, Result};
use crate::harness::{
    buggy_solution, build_background_corpus, generate_problem, render_prompt, split_dataset, training_sequence,
    vocab, LabeledSample, ProblemSpec, Split, SplitAssignment, Style, TokenId,
};
use crate::intervene::{
    coefficient_search, label_problems, make_steer_hook, objective_correct, objective_incorrect,
    run_condition, run_orthogonalization_experiment, run_steering_experiment, select_control_feature,
    write_outcomes_csv, ArmInput, ExperimentSuite, InterventionSpec, SearchOutcome,
};
use crate::lm::{
    capture_all_positions, capture_final_token_residuals_multi, fine_tune, read_activation_store,
    read_checkpoint, train, write_activation_store, write_checkpoint, ActivationRecord, Checkpoint, Label,
    ModelConfig, TrainingSequence,
};
use crate::rng::{keyed, substream};
use crate::sae::{read_sae, train_sae, write_sae, SaeParams, SaeSidecar};
use crate::select::{
    background_filter, build_dataset, layer_stats, select_features, write_stats_csv, FeatureStats, SelectionResult,
};

pub const COMMANDS: [&str; 13] = [
    "gen-data",
    "train-lm",
    "fine-tune",
    "label",
    "capture",
    "train-sae",
    "select",
    "detect",
    "steer",
    "ortho",
    "attention",
    "transfer",
    "report",
];

pub(super) fn run_stage(name: &str, cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    match name {
        "gen-data" => gen_data(cfg, run),
        "train-lm" => train_lm(cfg, run),
        "fine-tune" => fine_tune_stage(cfg, run),
        "label" => label(cfg, run),
        "capture" => capture(cfg, run),
        "train-sae" => train_sae_stage(cfg, run),
        "select" => select(cfg, run),
        "detect" => detect(cfg, run),
        "steer" => steer(cfg, run),
        "ortho" => ortho(cfg, run),
        "attention" => attention(cfg, run),
        "transfer" => transfer(cfg, run),
        "report" => super::report::report(cfg, run),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }?;
    run.finish_stage(name)
}

fn layers(cfg: &RunConfig) -> Vec<usize> {
    (0..cfg.model.n_layers).collect()
}

fn difficulty(cfg: &RunConfig, i: u64) -> u8 {
    cfg.data.difficulties[(i % cfg.data.difficulties.len() as u64) as usize]
}

// Artifact names.
const PROBLEMS: &str = "problems.json";
const SPLITS: &str = "splits.json";
const CORPUS: &str = "corpus.json";
const TUNE_CORPUS: &str = "tune_corpus.json";
const BACKGROUND: &str = "background.json";
const LM: &str = "lm.bin";
const LM_TUNED: &str = "lm_tuned.bin";
const LABELS: &str = "labels.json";
const SELECTION: &str = "selection.json";
const DETECTION: &str = "detection.json";
const COEFFICIENTS: &str = "coefficients.json";
const STEERING: &str = "steering.json";
const ORTHO: &str = "ortho.json";
const ATTENTION: &str = "attention.json";
const TRANSFER: &str = "transfer.json";

fn acts_final(l: usize) -> String {
    format!("acts/final_L{l}.bin")
}
fn acts_sae(l: usize) -> String {
    format!("acts/sae_data_L{l}.bin")
}
fn acts_bg(l: usize) -> String {
    format!("acts/background_L{l}.bin")
}
fn sae_file(l: usize) -> String {
    format!("sae/sae_L{l}.bin")
}
fn sae_sidecar(l: usize) -> String {
    format!("sae/sae_L{l}.json")
}

fn gen_data(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "gen-data";
    let pseed = substream(cfg.seed, "problems");
    let problems: Vec<ProblemSpec> = (0..cfg.data.n_problems as u64)
        .map(|i| generate_problem(pseed, i, difficulty(cfg, i)))
        .collect();
    let ids: Vec<u64> = problems.iter().map(|p| p.id).collect();
    let splits = split_dataset(&ids, substream(cfg.seed, "split"))?;

    // The base corpus pairs hastily-worded tasks with a buggy reference
    // solution; the fine-tuning corpus is all clean.
    let corpus_of = |stream: &str, n: usize, clean: bool| -> Vec<TrainingSequence> {
        let seed = substream(cfg.seed, stream);
        (0..n as u64)
            .map(|i| {
                let spec = generate_problem(seed, i, difficulty(cfg, i));
                let sol = if !clean && spec.style == Style::Hastily {
                    buggy_solution(&spec)
                } else {
                    spec.target.clone()
                };
                let (tokens, loss_start) = training_sequence(&spec, &sol);
                TrainingSequence { tokens, loss_start }
            })
            .collect()
    };
    let corpus = corpus_of("corpus", cfg.data.n_corpus, false);
    let tune = corpus_of("tune-corpus", cfg.data.n_tune_corpus, true);
    let background = build_background_corpus(substream(cfg.seed, "background"), cfg.data.background_tokens)?;

    run.write_json(PROBLEMS, &problems, STAGE)?;
    run.write_json(SPLITS, &splits, STAGE)?;
    run.write_json(CORPUS, &corpus, STAGE)?;
    run.write_json(TUNE_CORPUS, &tune, STAGE)?;
    run.write_json(BACKGROUND, &background, STAGE)?;
    run.write("vocab.json", vocab::to_json().as_bytes(), STAGE, None)
}

fn read_ckpt(run: &RunDir, name: &str) -> Result<Checkpoint> {
    read_checkpoint(run.read(name)?.as_slice())
}

fn write_ckpt(run: &mut RunDir, name: &str, ckpt: &Checkpoint, stage: &str) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, ckpt)?;
    run.write(name, &bytes, stage, Some(ckpt.provenance.label()))
}

#[derive(Serialize)]
struct LossLog<'a> {
    steps: usize,
    losses: &'a [f64],
}

fn train_lm(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "train-lm";
    run.require_stage("gen-data", STAGE)?;
    let corpus: Vec<TrainingSequence> = run.read_json(CORPUS)?;
    let model = ModelConfig {
        vocab_size: vocab::vocab_size(),
        rng_seed: substream(cfg.seed, "lm-init"),
        ..cfg.model
    };
    let mut opts = cfg.lm_train;
    opts.seed = substream(cfg.seed, "lm-train");
    let (ckpt, log) = train(model, &corpus, &opts)?;
    write_ckpt(run, LM, &ckpt, STAGE)?;
    run.write_json(
        "lm_train_log.json",
        &LossLog {
            steps: opts.steps,
            losses: &log.losses,
        },
        STAGE,
    )
}

fn fine_tune_stage(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "fine-tune";
    run.require_stage("train-lm", STAGE)?;
    let base = read_ckpt(run, LM)?;
    let corpus: Vec<TrainingSequence> = run.read_json(TUNE_CORPUS)?;
    let mut opts = cfg.fine_tune;
    opts.seed = substream(cfg.seed, "fine-tune");
    let (tuned, log) = fine_tune(&base, &corpus, &opts)?;
    write_ckpt(run, LM_TUNED, &tuned, STAGE)?;
    run.write_json(
        "fine_tune_log.json",
        &LossLog {
            steps: opts.steps,
            losses: &log.losses,
        },
        STAGE,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRates {
    /// `(difficulty, passed, total)`.
    pub by_difficulty: Vec<(u8, usize, usize)>,
    /// `(split, passed, total)`.
    pub by_split: Vec<(String, usize, usize)>,
    pub overall: f64,
}

pub fn pass_rates(problems: &[ProblemSpec], labels: &[LabeledSample], splits: &SplitAssignment) -> PassRates {
    let mut by_d: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    let mut by_s: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, l) in problems.iter().zip(labels) {
        let e = by_d.entry(p.difficulty).or_default();
        e.0 += l.passed as usize;
        e.1 += 1;
        let split = match splits.split_of(p.id) {
            Some(Split::Selection) => "selection",
            Some(Split::Calibration) => "calibration",
            Some(Split::Analysis) => "analysis",
            None => "none",
        };
        let e = by_s.entry(split.to_string()).or_default();
        e.0 += l.passed as usize;
        e.1 += 1;
    }
    let passed = labels.iter().filter(|l| l.passed).count();
    PassRates {
        by_difficulty: by_d.into_iter().map(|(d, (p, n))| (d, p, n)).collect(),
        by_split: by_s.into_iter().map(|(s, (p, n))| (s, p, n)).collect(),
        overall: passed as f64 / labels.len().max(1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub temperature: f64,
    pub provenance: String,
    pub pass_rates: PassRates,
    pub samples: Vec<LabeledSample>,
}

fn label(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "label";
    run.require_stage("train-lm", STAGE)?;
    let ckpt = read_ckpt(run, LM)?;
    let problems: Vec<ProblemSpec> = run.read_json(PROBLEMS)?;
    let splits: SplitAssignment = run.read_json(SPLITS)?;
    let samples = label_problems(&ckpt, &problems, &[], 0.0, 0, cfg.max_new)?;
    let file = LabelFile {
        temperature: 0.0,
        provenance: ckpt.provenance.label(),
        pass_rates: pass_rates(&problems, &samples, &splits),
        samples,
    };
    run.write_json(LABELS, &file, STAGE)
}

fn store_bytes(records: &[ActivationRecord]) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    write_activation_store(&mut b, records)?;
    Ok(b)
}

fn read_store(run: &RunDir, name: &str) -> Result<Vec<ActivationRecord>> {
    read_activation_store(run.read(name)?.as_slice())
}

/// Background text cut into BOS-prefixed windows that fit the context.
fn background_windows(tokens: &[TokenId], max_seq_len: usize) -> Vec<(u64, Vec<TokenId>)> {
    tokens
        .chunks(max_seq_len - 1)
        .enumerate()
        .map(|(i, c)| {
            let mut w = vec![vocab::BOS];
            w.extend_from_slice(c);
            (i as u64, w)
        })
        .collect()
}

fn subset<'a>(problems: &'a [ProblemSpec], ids: &[u64]) -> Vec<&'a ProblemSpec> {
    let by_id: BTreeMap<u64, &ProblemSpec> = problems.iter().map(|p| (p.id, p)).collect();
    ids.iter().filter_map(|id| by_id.get(id).copied()).collect()
}

fn owned_subset(problems: &[ProblemSpec], ids: &[u64]) -> Vec<ProblemSpec> {
    subset(problems, ids).into_iter().cloned().collect()
}

fn capture(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "capture";
    run.require_stage("label", STAGE)?;
    let ckpt = read_ckpt(run, LM)?;
    let problems: Vec<ProblemSpec> = run.read_json(PROBLEMS)?;
    let splits: SplitAssignment = run.read_json(SPLITS)?;
    let labels = labels_of(&run.read_json::<LabelFile>(LABELS)?.samples);
    let background: Vec<TokenId> = run.read_json(BACKGROUND)?;
    let layers = layers(cfg);

    let prompts: Vec<_> = problems.iter().map(render_prompt).collect();
    let finals = capture_final_token_residuals_multi(&ckpt, &prompts, &layers)?;
    let selection: Vec<(u64, Vec<TokenId>)> = subset(&problems, &splits.selection_ids)
        .into_iter()
        .map(|p| (p.id, render_prompt(p).tokens))
        .collect();
    let sae_data = capture_all_positions(&ckpt, &selection, &layers)?;
    let bg = capture_all_positions(&ckpt, &background_windows(&background, ckpt.config.max_seq_len), &layers)?;
    for (slot, &l) in layers.iter().enumerate() {
        let mut recs = finals[slot].clone();
        for r in &mut recs {
            r.label = *labels
                .get(&r.problem_id)
                .ok_or_else(|| Error::MissingArtifact(format!("no label for problem {}", r.problem_id)))?;
        }
        run.write(&acts_final(l), &store_bytes(&recs)?, STAGE, None)?;
        run.write(&acts_sae(l), &store_bytes(&sae_data[slot])?, STAGE, None)?;
        run.write(&acts_bg(l), &store_bytes(&bg[slot])?, STAGE, None)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeMetrics {
    pub layer: usize,
    pub n_train: usize,
    pub epsilon: f64,
    /// Mean over the last 10% of steps.
    pub final_recon: f64,
    pub final_l0: f64,
}

fn tail_mean(v: &[f64]) -> f64 {
    let k = (v.len() / 10).max(1).min(v.len());
    if k == 0 {
        return f64::NAN;
    }
    v[v.len() - k..].iter().sum::<f64>() / k as f64
}

fn train_sae_stage(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "train-sae";
    run.require_stage("capture", STAGE)?;
    let mut metrics = Vec::new();
    for l in layers(cfg) {
        let mut data = read_store(run, &acts_sae(l))?;
        data.extend(read_store(run, &acts_bg(l))?);
        let mut sc = cfg.sae;
        sc.seed = keyed(substream(cfg.seed, "sae"), &[l as u64]);
        let (sae, log) = train_sae(&data, &sc)?;
        let mut bytes = Vec::new();
        write_sae(&mut bytes, &sae)?;
        run.write(&sae_file(l), &bytes, STAGE, Some(format!("layer {l}")))?;
        let side = SaeSidecar {
            layer: l,
            lambda: log.lambda,
            epsilon: log.epsilon,
            seed: sc.seed,
            steps: sc.steps,
        };
        run.write_json(&sae_sidecar(l), &side, STAGE)?;
        metrics.push(SaeMetrics {
            layer: l,
            n_train: data.len(),
            epsilon: log.epsilon,
            final_recon: tail_mean(&log.recon),
            final_l0: tail_mean(&log.l0),
        });
    }
    run.write_json("sae/metrics.json", &metrics, STAGE)
}

fn load_sae(run: &RunDir, l: usize) -> Result<SaeParams> {
    let side: SaeSidecar = run.read_json(&sae_sidecar(l))?;
    if side.layer != l {
        return Err(Error::Format(format!("sidecar for layer {l} names layer {}", side.layer)));
    }
    read_sae(run.read(&sae_file(l))?.as_slice(), l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFeature {
    pub layer: usize,
    pub index: usize,
    pub s_correct: f64,
    pub t_correct: Option<f64>,
    pub prompt_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub selection: SelectionResult,
    pub control: ControlFeature,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub n_latents_kept: usize,
    pub n_latents_total: usize,
}

fn select(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "select";
    run.require_stage("train-sae", STAGE)?;
    let splits: SplitAssignment = run.read_json(SPLITS)?;
    let labels = labels_of(&run.read_json::<LabelFile>(LABELS)?.samples);
    let sel_ids: std::collections::BTreeSet<u64> = splits.selection_ids.iter().copied().collect();
    let mut all: Vec<FeatureStats> = Vec::new();
    let (mut n_correct, mut n_incorrect) = (0, 0);
    for l in layers(cfg) {
        let sae = load_sae(run, l)?;
        let recs: Vec<ActivationRecord> = read_store(run, &acts_final(l))?
            .into_iter()
            .filter(|r| sel_ids.contains(&r.problem_id))
            .collect();
        let ds = build_dataset(&recs, &sae, &labels)?;
        if ds.n_correct == 0 || ds.n_incorrect == 0 {
            return Err(Error::InvalidArgument(format!(
                "selection split has {} correct and {} incorrect samples; both classes are needed",
                ds.n_correct, ds.n_incorrect
            )));
        }
        (n_correct, n_incorrect) = (ds.n_correct, ds.n_incorrect);
        let mask = background_filter(&sae, &read_store(run, &acts_bg(l))?, cfg.background_threshold)?;
        all.extend(layer_stats(&ds, &mask, cfg.t_stat_counts)?);
    }
    let mut csv = Vec::new();
    write_stats_csv(&mut csv, &all)?;
    run.write("stats.csv", &csv, STAGE, None)?;
    let selection = select_features(&all)?;
    let (cl, ci) = select_control_feature(&all)?;
    let c = all
        .iter()
        .find(|s| s.layer == cl && s.index == ci)
        .expect("control comes from the stats");
    let file = SelectionFile {
        selection,
        control: ControlFeature {
            layer: cl,
            index: ci,
            s_correct: c.s_correct,
            t_correct: c.t_correct,
            prompt_rate: c.prompt_rate,
        },
        n_correct,
        n_incorrect,
        n_latents_kept: all.iter().filter(|s| s.kept).count(),
        n_latents_total: all.len(),
    };
    run.write_json(SELECTION, &file, STAGE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensFile {
    pub layer: usize,
    pub index: usize,
    pub positive_class: Label,
    pub top_tokens: Vec<LogitLensEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub predictors: Vec<FrozenPredictor>,
    pub calibration: Vec<DetectionReport>,
    pub analysis: Vec<DetectionReport>,
    pub sweep: Vec<DetectionReport>,
    pub logit_lens: Vec<LensFile>,
}

fn split_records(recs: Vec<ActivationRecord>, ids: &[u64]) -> Vec<ActivationRecord> {
    let keep: std::collections::BTreeSet<u64> = ids.iter().copied().collect();
    recs.into_iter().filter(|r| keep.contains(&r.problem_id)).collect()
}

fn detect(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "detect";
    run.require_stage("select", STAGE)?;
    let ckpt = read_ckpt(run, LM)?;
    let problems: Vec<ProblemSpec> = run.read_json(PROBLEMS)?;
    let splits: SplitAssignment = run.read_json(SPLITS)?;
    let labels = labels_of(&run.read_json::<LabelFile>(LABELS)?.samples);
    let sel: SelectionFile = run.read_json(SELECTION)?;
    let mut file = DetectionFile {
        predictors: Vec::new(),
        calibration: Vec::new(),
        analysis: Vec::new(),
        sweep: Vec::new(),
        logit_lens: Vec::new(),
    };
    let mut sweep_inputs = Vec::new();
    for (feat, positive) in [
        (&sel.selection.correct_predicting, Label::Correct),
        (&sel.selection.incorrect_predicting, Label::Incorrect),
    ] {
        let sae = load_sae(run, feat.layer)?;
        let recs = read_store(run, &acts_final(feat.layer))?;
        let calib = score_records(&split_records(recs.clone(), &splits.calibration_ids), &sae, feat.index, &labels)?;
        let analysis = score_records(&split_records(recs, &splits.analysis_ids), &sae, feat.index, &labels)?;
        let predictor = FrozenPredictor {
            layer: feat.layer,
            index: feat.index,
            positive_class: positive,
            threshold: calibrate_threshold(&calib, positive)?,
        };
        let mut rc = predictor.report(&calib);
        rc.provenance = Some(ckpt.provenance.label());
        let mut ra = predictor.report(&analysis);
        ra.provenance = Some(ckpt.provenance.label());
        file.calibration.push(rc);
        file.analysis.push(ra);
        file.logit_lens.push(LensFile {
            layer: feat.layer,
            index: feat.index,
            positive_class: positive,
            top_tokens: logit_lens(&ckpt, &sae, feat.index, 10)?,
        });
        sweep_inputs.push((predictor.clone(), analysis.iter().map(|s| (s.problem_id, s.score)).collect()));
        file.predictors.push(predictor);
    }
    let analysis_problems = owned_subset(&problems, &splits.analysis_ids);
    file.sweep = temperature_sweep(
        &ckpt,
        &analysis_problems,
        &sweep_inputs,
        &cfg.temperatures,
        substream(cfg.seed, "temperature-sweep"),
        cfg.max_new,
    )?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &file.sweep)?;
    run.write("sweep.csv", &csv, STAGE, None)?;
    run.write_json(DETECTION, &file, STAGE)
}

fn labeled_subset(labels: &[LabeledSample], problems: &[ProblemSpec]) -> Result<Vec<LabeledSample>> {
    let by_id: BTreeMap<u64, &LabeledSample> = labels.iter().map(|l| (l.problem_id, l)).collect();
    problems
        .iter()
        .map(|p| {
            by_id
                .get(&p.id)
                .map(|l| (*l).clone())
                .ok_or_else(|| Error::MissingArtifact(format!("no label for problem {}", p.id)))
        })
        .collect()
}

/// Steering specs for the selected and control latents, without coefficients.
struct Directions {
    correct: InterventionSpec,
    incorrect: InterventionSpec,
    control: InterventionSpec,
}

fn directions(cfg: &RunConfig, run: &RunDir, sel: &SelectionFile) -> Result<Directions> {
    let spec = |layer: usize, index: usize| -> Result<InterventionSpec> {
        let sae = load_sae(run, layer)?;
        let mut s = InterventionSpec::steer(layer, index, &sae.direction(index)?, 0.0);
        s.positions = cfg.steer_positions;
        Ok(s)
    };
    Ok(Directions {
        correct: spec(sel.selection.correct_steering.layer, sel.selection.correct_steering.index)?,
        incorrect: spec(sel.selection.incorrect_steering.layer, sel.selection.incorrect_steering.index)?,
        control: spec(sel.control.layer, sel.control.index)?,
    })
}

fn with_alpha(s: &InterventionSpec, alpha: f64) -> InterventionSpec {
    InterventionSpec {
        alpha: Some(alpha),
        ..s.clone()
    }
}

fn as_orthogonalization(s: &InterventionSpec) -> InterventionSpec {
    InterventionSpec::orthogonalize(s.layer, s.index, &s.direction())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFile {
    pub correct: SearchOutcome,
    pub incorrect: SearchOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFile {
    pub provenance: String,
    pub split: String,
    pub suite: ExperimentSuite,
}

fn steering_arms(d: &Directions, coeffs: &CoefficientFile) -> Vec<ArmInput> {
    vec![
        ArmInput {
            name: "correct_steering".into(),
            direction: with_alpha(&d.correct, coeffs.correct.alpha),
            control: with_alpha(&d.control, coeffs.correct.alpha),
        },
        ArmInput {
            name: "incorrect_steering".into(),
            direction: with_alpha(&d.incorrect, coeffs.incorrect.alpha),
            control: with_alpha(&d.control, coeffs.incorrect.alpha),
        },
    ]
}

struct Common {
    ckpt: Checkpoint,
    problems: Vec<ProblemSpec>,
    splits: SplitAssignment,
    labels: Vec<LabeledSample>,
    sel: SelectionFile,
}

fn common(run: &RunDir) -> Result<Common> {
    Ok(Common {
        ckpt: read_ckpt(run, LM)?,
        problems: run.read_json(PROBLEMS)?,
        splits: run.read_json(SPLITS)?,
        labels: run.read_json::<LabelFile>(LABELS)?.samples,
        sel: run.read_json(SELECTION)?,
    })
}

fn steer(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "steer";
    run.require_stage("select", STAGE)?;
    let c = common(run)?;
    let d = directions(cfg, run, &c.sel)?;
    let calib = owned_subset(&c.problems, &c.splits.calibration_ids);
    let calib_labels = labeled_subset(&c.labels, &calib)?;
    let search = |spec: &InterventionSpec, objective: fn(&crate::intervene::ExperimentReport) -> f64| {
        coefficient_search(
            |alpha| {
                let r = run_condition(&c.ckpt, &calib, &calib_labels, Some(&with_alpha(spec, alpha)), "search", cfg.max_new)?;
                Ok(objective(&r.report))
            },
            &cfg.search,
        )
    };
    let coeffs = CoefficientFile {
        correct: search(&d.correct, objective_correct)?,
        incorrect: search(&d.incorrect, objective_incorrect)?,
    };
    run.write_json(COEFFICIENTS, &coeffs, STAGE)?;

    let analysis = owned_subset(&c.problems, &c.splits.analysis_ids);
    let base = labeled_subset(&c.labels, &analysis)?;
    let (suite, outcomes) = run_steering_experiment(&c.ckpt, &analysis, &base, &steering_arms(&d, &coeffs), cfg.max_new)?;
    let mut csv = Vec::new();
    write_outcomes_csv(&mut csv, &outcomes)?;
    run.write("steering_outcomes.csv", &csv, STAGE, None)?;
    run.write_json(
        STEERING,
        &SuiteFile {
            provenance: c.ckpt.provenance.label(),
            split: "analysis".into(),
            suite,
        },
        STAGE,
    )
}

fn ortho(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "ortho";
    run.require_stage("select", STAGE)?;
    let c = common(run)?;
    let d = directions(cfg, run, &c.sel)?;
    let analysis = owned_subset(&c.problems, &c.splits.analysis_ids);
    let base = labeled_subset(&c.labels, &analysis)?;
    let control = as_orthogonalization(&d.control);
    let arms = vec![
        ArmInput {
            name: "correct_orthogonalization".into(),
            direction: as_orthogonalization(&d.correct),
            control: control.clone(),
        },
        ArmInput {
            name: "incorrect_orthogonalization".into(),
            direction: as_orthogonalization(&d.incorrect),
            control,
        },
    ];
    let (suite, outcomes) = run_orthogonalization_experiment(&c.ckpt, &analysis, &base, &arms, cfg.max_new)?;
    let mut csv = Vec::new();
    write_outcomes_csv(&mut csv, &outcomes)?;
    run.write("ortho_outcomes.csv", &csv, STAGE, None)?;
    run.write_json(
        ORTHO,
        &SuiteFile {
            provenance: c.ckpt.provenance.label(),
            split: "analysis".into(),
            suite,
        },
        STAGE,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionFile {
    pub reports: Vec<AttentionReport>,
}

fn attention(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "attention";
    run.require_stage("steer", STAGE)?;
    let c = common(run)?;
    let d = directions(cfg, run, &c.sel)?;
    let coeffs: CoefficientFile = run.read_json(COEFFICIENTS)?;
    let analysis = owned_subset(&c.problems, &c.splits.analysis_ids);
    let last = c.ckpt.config.n_layers - 1;
    let mut reports = Vec::new();
    for (name, spec, alpha) in [
        ("correct_steering", &d.correct, coeffs.correct.alpha),
        ("incorrect_steering", &d.incorrect, coeffs.incorrect.alpha),
    ] {
        let hook = make_steer_hook(spec.layer, &spec.direction(), alpha, spec.positions)?;
        let read = (spec.layer + cfg.attention_read_offset).min(last);
        reports.push(run_attention_experiment(&c.ckpt, &hook, read, &analysis, name)?);
    }
    let mut csv = Vec::new();
    write_shares_csv(&mut csv, &reports)?;
    run.write("attention.csv", &csv, STAGE, None)?;
    run.write_json(ATTENTION, &AttentionFile { reports }, STAGE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frozen {
    pub predictors: Vec<FrozenPredictor>,
    pub alphas: Vec<(String, f64)>,
    pub recalibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFile {
    pub base_provenance: String,
    pub tuned_provenance: String,
    pub frozen: Frozen,
    pub base_pass_rates: PassRates,
    pub tuned_pass_rates: PassRates,
    pub base_detection: Vec<DetectionReport>,
    pub tuned_detection: Vec<DetectionReport>,
    pub base_steering: ExperimentSuite,
    pub tuned_steering: ExperimentSuite,
}

fn transfer(cfg: &RunConfig, run: &mut RunDir) -> Result<()> {
    const STAGE: &str = "transfer";
    for s in ["fine-tune", "detect", "steer"] {
        run.require_stage(s, STAGE)?;
    }
    let c = common(run)?;
    let tuned = read_ckpt(run, LM_TUNED)?;
    if !tuned.provenance.is_fine_tuned() {
        return Err(Error::InvalidArgument(format!(
            "transfer expects a fine-tuned checkpoint, got {}",
            tuned.provenance.label()
        )));
    }
    if tuned.config != c.ckpt.config {
        return Err(Error::Config("fine-tuned checkpoint config differs from base".into()));
    }
    let det: DetectionFile = run.read_json(DETECTION)?;
    let coeffs: CoefficientFile = run.read_json(COEFFICIENTS)?;
    let base_steer: SuiteFile = run.read_json(STEERING)?;
    let d = directions(cfg, run, &c.sel)?;

    let analysis = owned_subset(&c.problems, &c.splits.analysis_ids);
    let tuned_all = label_problems(&tuned, &c.problems, &[], 0.0, 0, cfg.max_new)?;
    let tuned_labels = labels_of(&tuned_all);
    let mut tuned_detection = Vec::new();
    for p in &det.predictors {
        let sae = load_sae(run, p.layer)?;
        let recs = capture_records(&tuned, &analysis, p.layer)?;
        let mut r = p.report(&score_records(&recs, &sae, p.index, &tuned_labels)?);
        r.provenance = Some(tuned.provenance.label());
        tuned_detection.push(r);
    }
    let tuned_base = labeled_subset(&tuned_all, &analysis)?;
    let arms = steering_arms(&d, &coeffs);
    let (tuned_suite, _) = run_steering_experiment(&tuned, &analysis, &tuned_base, &arms, cfg.max_new)?;
    let file = TransferFile {
        base_provenance: c.ckpt.provenance.label(),
        tuned_provenance: tuned.provenance.label(),
        frozen: Frozen {
            predictors: det.predictors.clone(),
            alphas: arms
                .iter()
                .map(|a| (a.name.clone(), a.direction.alpha.expect("steering arm")))
                .collect(),
            recalibrated: false,
        },
        base_pass_rates: pass_rates(&c.problems, &c.labels, &c.splits),
        tuned_pass_rates: pass_rates(&c.problems, &tuned_all, &c.splits),
        base_detection: det.analysis,
        tuned_detection,
        base_steering: base_steer.suite,
        tuned_steering: tuned_suite,
    };
    run.write_json(TRANSFER, &file, STAGE)
}
