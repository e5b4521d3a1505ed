use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::intervene::SearchConfig;
use crate::lm::{HookPositions, ModelConfig, TrainOptions};
use crate::sae::SaeTrainConfig;
use crate::select::{TStatCounts, BACKGROUND_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Evaluation problems, split 50/10/40.
    pub n_problems: usize,
    /// Problems in the base training corpus.
    pub n_corpus: usize,
    /// Problems in the fine-tuning corpus.
    pub n_tune_corpus: usize,
    /// Tokens of general background text.
    pub background_tokens: usize,
    /// Difficulties cycled over problem ids.
    pub difficulties: Vec<u8>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_problems: 400,
            n_corpus: 4000,
            n_tune_corpus: 1000,
            background_tokens: 6000,
            difficulties: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub selection: f64,
    pub calibration: f64,
    pub analysis: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            selection: 0.5,
            calibration: 0.1,
            analysis: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub lm_train: TrainOptions,
    pub fine_tune: TrainOptions,
    pub sae: SaeTrainConfig,
    pub split: SplitRatios,
    pub background_threshold: f64,
    pub t_stat_counts: TStatCounts,
    pub temperatures: Vec<f64>,
    pub search: SearchConfig,
    /// Generation budget per completion.
    pub max_new: usize,
    pub steer_positions: HookPositions,
    /// Attention is read at `steering layer + offset` (clamped to the last layer).
    pub attention_read_offset: usize,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            lm_train: TrainOptions {
                steps: 800,
                lr: 5e-3,
                ..Default::default()
            },
            fine_tune: TrainOptions {
                steps: 100,
                lr: 1e-3,
                warmup_steps: 10,
                ..Default::default()
            },
            sae: SaeTrainConfig {
                lambda: 0.02,
                relative_lambda: true,
                bandwidth_scale: 0.05,
                lr: 3e-3,
                steps: 2000,
                batch: 128,
                ..Default::default()
            },
            split: SplitRatios::default(),
            background_threshold: BACKGROUND_THRESHOLD,
            t_stat_counts: TStatCounts::Total,
            temperatures: crate::detect::default_temperatures(),
            search: SearchConfig::default(),
            max_new: 20,
            steer_positions: HookPositions::All,
            attention_read_offset: 1,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses a partial config. Fields left out, including fields of nested
    /// sections, keep the pipeline defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Config(e.to_string());
        let overrides: Value = serde_json::from_str(text).map_err(bad)?;
        let mut merged = serde_json::to_value(Self::default()).expect("default config serializes");
        merge(&mut merged, overrides);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(bad)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        let r = self.split;
        if (r.selection, r.calibration, r.analysis) != (0.5, 0.1, 0.4) {
            return bad("split ratios are fixed at 0.5 / 0.1 / 0.4");
        }
        if self.data.n_problems < 10 || self.data.n_corpus == 0 || self.data.background_tokens == 0 {
            return bad("need n_problems >= 10, n_corpus >= 1 and background_tokens >= 1");
        }
        if self.data.difficulties.is_empty() || self.data.difficulties.iter().any(|d| !(1..=4).contains(d)) {
            return bad("difficulties must be a non-empty list drawn from 1..=4");
        }
        if !(0.0..=1.0).contains(&self.background_threshold) {
            return bad("background_threshold must lie in [0, 1]");
        }
        if self.temperatures.is_empty() || self.temperatures.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return bad("temperatures must be a non-empty list of finite values >= 0");
        }
        if self.temperatures[0] != 0.0 {
            return bad("the temperature grid must start at 0");
        }
        if !(self.search.alpha_max > self.search.grid_step) || !(self.search.grid_step > 0.0) {
            return bad("search needs alpha_max > grid_step > 0");
        }
        if self.max_new == 0 {
            return bad("max_new must be >= 1");
        }
        if self.lm_train.steps == 0 {
            return bad("lm_train.steps must be >= 1");
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
