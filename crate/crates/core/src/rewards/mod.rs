//! Execution-grounded reward: six components and their weighted sum.
//!
//! `R = 3·exec + 2·sim + 1·struct + 0.5·format + 1·len + 1·len_ratio`, with
//! disabled components left out of the sum entirely. `sim` and `len_ratio`
//! need the gold query and are only valid when it is available.

mod bleu;
mod components;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAInstance;
use crate::endpoint::{Backend, ExecStatus, QueryCache};
use crate::extraction::{extract_query, Completion};

pub use bleu::{count_query_tokens, query_tokens, r_sim, sentence_bleu, BLEU_MAX_ORDER, BLEU_SMOOTHING_EPS};
pub use components::{answer_f1, r_exec, r_format, r_len, r_len_ratio, r_struct};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Exec,
    Sim,
    Struct,
    Format,
    Len,
    LenRatio,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Exec,
        Component::Sim,
        Component::Struct,
        Component::Format,
        Component::Len,
        Component::LenRatio,
    ];

    pub fn needs_gold_query(self) -> bool {
        matches!(self, Component::Sim | Component::LenRatio)
    }
}

/// One value per reward component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerComponent<T> {
    pub exec: T,
    pub sim: T,
    #[serde(rename = "struct")]
    pub structure: T,
    pub format: T,
    pub len: T,
    pub len_ratio: T,
}

impl<T: Copy> PerComponent<T> {
    pub fn get(&self, c: Component) -> T {
        match c {
            Component::Exec => self.exec,
            Component::Sim => self.sim,
            Component::Struct => self.structure,
            Component::Format => self.format,
            Component::Len => self.len,
            Component::LenRatio => self.len_ratio,
        }
    }

    pub fn set(&mut self, c: Component, v: T) {
        let slot = match c {
            Component::Exec => &mut self.exec,
            Component::Sim => &mut self.sim,
            Component::Struct => &mut self.structure,
            Component::Format => &mut self.format,
            Component::Len => &mut self.len,
            Component::LenRatio => &mut self.len_ratio,
        };
        *slot = v;
    }
}

pub const DEFAULT_WEIGHTS: PerComponent<f64> = PerComponent {
    exec: 3.0,
    sim: 2.0,
    structure: 1.0,
    format: 0.5,
    len: 1.0,
    len_ratio: 1.0,
};

/// Names of the shipped presets, one per ablation row.
pub const PRESET_NAMES: [&str; 5] = [
    "exec",
    "exec+format",
    "exec+format+struct",
    "exec+format+struct+len",
    "full-with-gold",
];

#[derive(Debug, Error, PartialEq)]
pub enum RewardConfigError {
    #[error("unknown reward preset {0:?} (expected one of: {list})", list = PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("len_target ({n}) must be below len_max ({a})")]
    LengthWindow { n: usize, a: usize },
    #[error("component {0:?} needs the gold query but gold_available is false")]
    GoldRequired(Component),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("invalid reward config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: PerComponent<f64>,
    pub enabled: PerComponent<bool>,
    pub exec_failure_penalty: f64,
    pub len_target: usize,
    pub len_max: usize,
    pub len_ratio_alpha: f64,
    pub gold_available: bool,
}

impl Default for RewardConfig {
    /// The no-gold configuration used for the main results.
    fn default() -> Self {
        Self::preset("exec+format+struct+len").expect("shipped preset")
    }
}

impl RewardConfig {
    pub fn preset(name: &str) -> Result<Self, RewardConfigError> {
        let on: &[Component] = match name {
            "exec" => &[Component::Exec],
            "exec+format" => &[Component::Exec, Component::Format],
            "exec+format+struct" => &[Component::Exec, Component::Format, Component::Struct],
            "exec+format+struct+len" => &[
                Component::Exec,
                Component::Format,
                Component::Struct,
                Component::Len,
            ],
            "full-with-gold" => &Component::ALL,
            other => return Err(RewardConfigError::UnknownPreset(other.to_string())),
        };
        let mut enabled = PerComponent {
            exec: false,
            sim: false,
            structure: false,
            format: false,
            len: false,
            len_ratio: false,
        };
        for c in on {
            enabled.set(*c, true);
        }
        Ok(Self {
            weights: DEFAULT_WEIGHTS,
            enabled,
            exec_failure_penalty: -0.5,
            len_target: 768,
            len_max: 1024,
            len_ratio_alpha: 2.0,
            gold_available: name == "full-with-gold",
        })
    }

    /// The shipped preset with the same enabled components, if any.
    pub fn preset_name(&self) -> Option<&'static str> {
        PRESET_NAMES.into_iter().find(|name| {
            let p = Self::preset(name).expect("shipped preset");
            p.enabled == self.enabled && p.gold_available == self.gold_available
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RewardConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| RewardConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RewardConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("reward config serializes")
    }

    pub fn with_len_window(mut self, n: usize, a: usize) -> Self {
        self.len_target = n;
        self.len_max = a;
        self
    }

    pub fn validate(&self) -> Result<(), RewardConfigError> {
        if self.len_target >= self.len_max {
            return Err(RewardConfigError::LengthWindow {
                n: self.len_target,
                a: self.len_max,
            });
        }
        for c in Component::ALL {
            if self.enabled.get(c) && c.needs_gold_query() && !self.gold_available {
                return Err(RewardConfigError::GoldRequired(c));
            }
            if !self.weights.get(c).is_finite() {
                return Err(RewardConfigError::NonFinite("weight"));
            }
        }
        if !self.exec_failure_penalty.is_finite() || !self.len_ratio_alpha.is_finite() {
            return Err(RewardConfigError::NonFinite("penalty/alpha"));
        }
        Ok(())
    }

    pub fn enabled_components(&self) -> impl Iterator<Item = Component> + '_ {
        Component::ALL.into_iter().filter(|c| self.enabled.get(*c))
    }

    /// Largest total any completion can reach under this config.
    pub fn max_total(&self) -> f64 {
        self.enabled_components().map(|c| self.weights.get(c)).sum()
    }

    /// Smallest total: execution failure with every other component at 0.
    pub fn min_total(&self) -> f64 {
        if self.enabled.exec {
            self.weights.exec * self.exec_failure_penalty.min(0.0)
        } else {
            0.0
        }
    }
}

/// Component scores for one completion; `None` marks a disabled component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_exec: Option<f64>,
    pub r_sim: Option<f64>,
    pub r_struct: Option<f64>,
    pub r_format: Option<f64>,
    pub r_len: Option<f64>,
    pub r_len_ratio: Option<f64>,
    pub total: f64,
    pub execution_status: ExecStatus,
    pub query_text: String,
}

impl RewardBreakdown {
    pub fn get(&self, c: Component) -> Option<f64> {
        match c {
            Component::Exec => self.r_exec,
            Component::Sim => self.r_sim,
            Component::Struct => self.r_struct,
            Component::Format => self.r_format,
            Component::Len => self.r_len,
            Component::LenRatio => self.r_len_ratio,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("instance {0} has no materialized gold answers")]
    MissingGoldAnswers(String),
    #[error("instance {0} has no gold query but the config uses gold shaping")]
    MissingGoldQuery(String),
    #[error(transparent)]
    Config(#[from] RewardConfigError),
}

/// Score one completion with the default query tokenizer for length ratios.
pub fn score_completion(
    completion: &Completion,
    instance: &QAInstance,
    config: &RewardConfig,
    backend: &dyn Backend,
    cache: &QueryCache,
) -> Result<RewardBreakdown, RewardError> {
    score_completion_with(completion, instance, config, backend, cache, None, &count_query_tokens)
}

/// Score one completion. `count_tokens` measures generated and gold query
/// lengths for the length-ratio term; `completion.token_count` drives the
/// length term.
pub fn score_completion_with(
    completion: &Completion,
    instance: &QAInstance,
    config: &RewardConfig,
    backend: &dyn Backend,
    cache: &QueryCache,
    timeout: Option<Duration>,
    count_tokens: &dyn Fn(&str) -> usize,
) -> Result<RewardBreakdown, RewardError> {
    config.validate()?;
    let gold = instance
        .gold_answers
        .as_ref()
        .ok_or_else(|| RewardError::MissingGoldAnswers(instance.id.clone()))?;
    let gold_query = if config.enabled_components().any(Component::needs_gold_query) {
        Some(
            instance
                .gold_query
                .as_deref()
                .ok_or_else(|| RewardError::MissingGoldQuery(instance.id.clone()))?,
        )
    } else {
        None
    };

    let extraction = extract_query(completion);
    let query = extraction.query_text.as_str();
    let outcome = cache.execute(query, backend, timeout);

    let mut values = PerComponent {
        exec: None,
        sim: None,
        structure: None,
        format: None,
        len: None,
        len_ratio: None,
    };
    for c in config.enabled_components() {
        let v = match c {
            Component::Exec => r_exec(&outcome, gold, config.exec_failure_penalty),
            Component::Sim => r_sim(query, gold_query.expect("checked above")),
            Component::Struct => r_struct(query, &instance.entities, &instance.relations),
            Component::Format => r_format(completion),
            Component::Len => r_len(completion.token_count, config.len_target, config.len_max),
            Component::LenRatio => r_len_ratio(
                count_tokens(query),
                count_tokens(gold_query.expect("checked above")),
                config.len_ratio_alpha,
            ),
        };
        values.set(c, Some(v));
    }
    let total = config
        .enabled_components()
        .map(|c| config.weights.get(c) * values.get(c).expect("enabled"))
        .sum();
    Ok(RewardBreakdown {
        r_exec: values.exec,
        r_sim: values.sim,
        r_struct: values.structure,
        r_format: values.format,
        r_len: values.len,
        r_len_ratio: values.len_ratio,
        total,
        execution_status: outcome.status,
        query_text: extraction.query_text,
    })
}
