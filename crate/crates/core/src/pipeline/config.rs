//! Flat pipeline configuration with a `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! input = data/bladder1.csv
//! workdir = out
//! models = lstm,transformer,ssm
//! epochs = 100
//! lime_kernel_width = auto
//! ```
//!
//! Lists are comma-separated; optional numbers accept `auto`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::classical::{ExpandOptions, ModelKind, Timescale};
use crate::data::{default_feature_names, EventMapping, DEFAULT_STEPS};
use crate::embed::EmbedConfig;
use crate::encoders::{EncoderKind, TargetKind, TrainConfig};
use crate::error::{Error, Result};
use crate::explain::LimeConfig;
use crate::simulate::{EventProcess, SimConfig};
use crate::survival::{CoxOptions, Ties};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Read the record table from `input`.
    File,
    /// Generate a table with the simulator.
    Simulate,
}

/// How the patient-level outcome is derived from the interval table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeRule {
    /// `first_event` for simulated tables, `last_status` otherwise.
    Auto,
    /// Total follow-up; event from the status of the last interval.
    LastStatus,
    /// Time to the first event.
    FirstEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub source: Source,
    pub input: Option<PathBuf>,
    pub workdir: PathBuf,
    pub seed: u64,

    pub steps: usize,
    pub features: Vec<String>,
    pub event_codes: Vec<u8>,
    pub outcome: OutcomeRule,
    /// Fraction of patients in the training split.
    pub train_fraction: f64,

    pub models: Vec<EncoderKind>,
    pub hidden: Option<usize>,
    pub output_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub target: TargetKind,
    pub validation_fraction: f64,
    pub positional_encoding: bool,

    pub ties: Ties,
    pub cox_tol: f64,
    pub cox_max_iter: usize,
    pub ridge: f64,

    pub classical: Vec<ModelKind>,
    pub classical_covariates: Vec<String>,
    pub pwp_timescale: Timescale,
    pub wlw_k: usize,

    pub explain_model: EncoderKind,
    pub lime_samples: usize,
    pub lime_kernel_width: Option<f64>,
    pub lime_ridge: f64,
    pub lime_top_k: usize,

    pub tsne_perplexity: f64,
    pub tsne_iterations: usize,
    pub tsne_learning_rate: f64,

    pub sim_patients: usize,
    pub sim_shape: f64,
    pub sim_scale: f64,
    pub sim_beta_continuous: f64,
    pub sim_beta_binary: f64,
    pub sim_binary_prob: f64,
    pub sim_followup_mean: f64,
    pub sim_followup_sd: f64,
    pub sim_target_censoring: f64,
    pub sim_process: EventProcess,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let cox = CoxOptions::default();
        let lime = LimeConfig::default();
        let tsne = EmbedConfig::default();
        let sim = SimConfig::default();
        Self {
            source: Source::File,
            input: None,
            workdir: PathBuf::from("out"),
            seed: 42,
            steps: DEFAULT_STEPS,
            features: default_feature_names(),
            event_codes: EventMapping::default().event_codes,
            outcome: OutcomeRule::Auto,
            train_fraction: 0.8,
            models: EncoderKind::ALL.to_vec(),
            hidden: None,
            output_dim: 8,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            dropout: train.dropout_p,
            target: train.target_kind,
            validation_fraction: train.validation_fraction,
            positional_encoding: true,
            ties: cox.ties,
            cox_tol: cox.tol,
            cox_max_iter: cox.max_iter,
            ridge: cox.ridge,
            classical: ModelKind::ALL.to_vec(),
            classical_covariates: crate::classical::CLASSICAL_COVARIATES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            pwp_timescale: Timescale::Total,
            wlw_k: ExpandOptions::default().wlw_k,
            explain_model: EncoderKind::Lstm,
            lime_samples: lime.n_samples,
            lime_kernel_width: lime.kernel_width,
            lime_ridge: lime.ridge_lambda,
            lime_top_k: 4,
            tsne_perplexity: tsne.perplexity,
            tsne_iterations: tsne.iterations,
            tsne_learning_rate: tsne.learning_rate,
            sim_patients: sim.n_patients,
            sim_shape: sim.weibull_shape,
            sim_scale: sim.weibull_scale,
            sim_beta_continuous: sim.beta[0],
            sim_beta_binary: sim.beta[1],
            sim_binary_prob: sim.binary_prob,
            sim_followup_mean: sim.followup_mean,
            sim_followup_sd: sim.followup_sd,
            sim_target_censoring: sim.target_censoring,
            sim_process: sim.process,
        }
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

/// Converts a raw text value to JSON guided by the type of the current value.
fn typed_value(key: &str, raw: &str, current: &Value) -> Result<Value> {
    let raw = raw.trim();
    let bad = || Error::invalid(format!("invalid value `{raw}` for `{key}`"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(match raw.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => true,
            "false" | "no" | "0" | "off" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_f64() => serde_json::Number::from_f64(raw.parse::<f64>().map_err(|_| bad())?)
            .map(Value::Number)
            .ok_or_else(bad)?,
        Value::Number(_) => Value::Number(raw.parse::<u64>().map_err(|_| bad())?.into()),
        Value::Array(items) => {
            let template = items.first().cloned().unwrap_or(Value::String(String::new()));
            let parts: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if parts.len() == 1 && parts[0].eq_ignore_ascii_case("none") {
                Value::Array(Vec::new())
            } else {
                Value::Array(
                    parts
                        .iter()
                        .map(|p| typed_value(key, p, &template))
                        .collect::<Result<_>>()?,
                )
            }
        }
        Value::Null => {
            if raw.eq_ignore_ascii_case("auto") || raw.eq_ignore_ascii_case("none") || raw.is_empty() {
                Value::Null
            } else if let Ok(u) = raw.parse::<u64>() {
                Value::Number(u.into())
            } else if let Ok(f) = raw.parse::<f64>() {
                serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)?
            } else {
                Value::String(raw.to_string())
            }
        }
        Value::String(_) => Value::String(raw.to_ascii_lowercase().replace('-', "_")),
        Value::Object(_) => return Err(bad()),
    })
}

fn normalise_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl PipelineConfig {
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Applies `key = value` assignments in order.
    pub fn with_overrides<'a, I>(&self, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let Value::Object(mut map) = serde_json::to_value(self)? else {
            unreachable!("config serialises to an object")
        };
        let defaults = match serde_json::to_value(Self::default())? {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        for (key, raw) in pairs {
            let key = normalise_key(key);
            let template = defaults
                .get(&key)
                .ok_or_else(|| Error::invalid(format!("unknown config key `{key}`")))?;
            let value = match (key.as_str(), template) {
                // Paths keep their case.
                ("input" | "workdir", _) => {
                    if raw.trim().is_empty() || raw.trim().eq_ignore_ascii_case("none") {
                        Value::Null
                    } else {
                        Value::String(raw.trim().to_string())
                    }
                }
                _ => typed_value(&key, raw, template)?,
            };
            map.insert(key, value);
        }
        let cfg: Self = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::invalid(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Splits config text into `(key, value)` pairs without interpreting them.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = strip_comment(line);
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = Self::parse_pairs(text)?;
        Self::default().with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Renders every key in the text format, readable by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let Ok(Value::Object(map)) = serde_json::to_value(self) else {
            return String::new();
        };
        let mut out = String::new();
        for (k, v) in map {
            let text = match v {
                Value::Null => "none".to_string(),
                Value::String(s) => s,
                Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {text}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == Source::File && self.input.is_none() {
            return Err(Error::invalid("`input` is required when source = file"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid("train_fraction must be in (0, 1]"));
        }
        if self.steps == 0 || self.features.is_empty() {
            return Err(Error::invalid("steps and features must be nonempty"));
        }
        self.train_config().validate()?;
        self.sim_config().validate()?;
        Ok(())
    }

    pub fn event_mapping(&self) -> EventMapping {
        EventMapping {
            event_codes: self.event_codes.clone(),
        }
    }

    pub fn outcome_rule(&self) -> OutcomeRule {
        match (self.outcome, self.source) {
            (OutcomeRule::Auto, Source::Simulate) => OutcomeRule::FirstEvent,
            (OutcomeRule::Auto, Source::File) => OutcomeRule::LastStatus,
            (rule, _) => rule,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            dropout_p: self.dropout,
            seed: self.seed,
            target_kind: self.target,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn cox_options(&self) -> CoxOptions {
        CoxOptions {
            ties: self.ties,
            tol: self.cox_tol,
            max_iter: self.cox_max_iter,
            ridge: self.ridge,
            ..CoxOptions::default()
        }
    }

    pub fn expand_options(&self) -> ExpandOptions {
        ExpandOptions {
            timescale: self.pwp_timescale,
            wlw_k: self.wlw_k,
        }
    }

    pub fn lime_config(&self) -> LimeConfig {
        LimeConfig {
            n_samples: self.lime_samples,
            kernel_width: self.lime_kernel_width,
            ridge_lambda: self.lime_ridge,
            seed: self.seed,
        }
    }

    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig {
            perplexity: self.tsne_perplexity,
            iterations: self.tsne_iterations,
            learning_rate: self.tsne_learning_rate,
            seed: self.seed,
            ..EmbedConfig::default()
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_patients: self.sim_patients,
            weibull_shape: self.sim_shape,
            weibull_scale: self.sim_scale,
            beta: [self.sim_beta_continuous, self.sim_beta_binary],
            binary_prob: self.sim_binary_prob,
            followup_mean: self.sim_followup_mean,
            followup_sd: self.sim_followup_sd,
            target_censoring: self.sim_target_censoring,
            process: self.sim_process,
            seed: self.seed,
        }
    }
}
