//! Pipeline configuration: one flat JSON document, overridable per key by
//! `LSMIX_`-prefixed environment variables, with CLI flags applied on top by
//! the binary (flags > env > file > defaults).

use std::collections::HashSet;
use std::num::NonZeroU64;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cot::MarkerLexicons;
use crate::error::{LsMixError, Result};
use crate::eval::{EvalConfig, LengthUnit};
use crate::mixture::ThinkingMode;
use crate::rewrite::{RewriteConfig, RewriteStrategy};
use crate::validate::Thresholds;

/// Prefix for environment overrides: config key `seed` ← `LSMIX_SEED`, etc.
pub const ENV_PREFIX: &str = "LSMIX_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // ---- artifacts & client ----
    /// Directory all artifacts are written under.
    pub out_dir: String,
    /// Chat endpoint base URL (or set `LSMIX_BASE_URL`). Mutually exclusive
    /// with `mock_fixture` at command time.
    pub base_url: Option<String>,
    /// Path to a mock-client script fixture (offline/deterministic runs).
    pub mock_fixture: Option<String>,
    /// Model name used for rewriting calls.
    pub rewriter_model: String,
    /// Model name used for evaluation calls.
    pub eval_model: String,

    // ---- generation & orchestration ----
    pub temperature: f64,
    pub context_budget_tokens: u64,
    pub chars_per_token: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub max_output_tokens: u64,
    pub retry_base_delay_ms: u64,

    // ---- validation thresholds ----
    pub min_fidelity: f64,
    pub min_retention: f64,
    pub ratio_lower: f64,
    pub ratio_upper: f64,
    pub require_final_answer: bool,
    /// When true, the rewrite stage drops pairs that fail validation.
    pub strict_validation: bool,

    // ---- structural markers ----
    pub transition_markers: Vec<String>,
    pub verification_markers: Vec<String>,
    pub conclusion_markers: Vec<String>,
    pub enumerators: Vec<String>,

    // ---- profiling ----
    pub stopwords: Vec<String>,
    pub top_k: usize,
    pub bucket_width: u64,

    // ---- mixture ----
    pub seed: u64,
    /// Long-only epoch budget the mixture budget is matched against.
    pub long_epochs: f64,

    // ---- evaluation ----
    pub mode: String,
    pub strategy: String,
    pub n_runs: u32,
    /// "chars" or "tokens" — unit for summaries and reports.
    pub length_unit: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let rewrite = RewriteConfig::default();
        let thresholds = Thresholds::default();
        let lexicons = MarkerLexicons::default();
        PipelineConfig {
            out_dir: "out".to_string(),
            base_url: None,
            mock_fixture: None,
            rewriter_model: rewrite.model.clone(),
            eval_model: EvalConfig::default().model,
            temperature: rewrite.temperature,
            context_budget_tokens: rewrite.context_budget_tokens,
            chars_per_token: rewrite.chars_per_token,
            max_retries: rewrite.max_retries,
            max_in_flight: rewrite.max_in_flight,
            max_output_tokens: rewrite.max_output_tokens,
            retry_base_delay_ms: rewrite.retry_base_delay_ms,
            min_fidelity: thresholds.min_fidelity,
            min_retention: thresholds.min_retention,
            ratio_lower: thresholds.ratio_bounds.0,
            ratio_upper: thresholds.ratio_bounds.1,
            require_final_answer: thresholds.require_final_answer,
            strict_validation: false,
            transition_markers: lexicons.transition.clone(),
            verification_markers: lexicons.verification.clone(),
            conclusion_markers: lexicons.conclusion.clone(),
            enumerators: lexicons.enumerators.clone(),
            stopwords: [
                "the", "a", "an", "and", "or", "to", "of", "in", "on", "is", "it", "we", "that",
                "this", "be", "as", "for", "with", "by",
            ]
            .into_iter()
            .map(str::to_string)
            .collect(),
            top_k: 50,
            bucket_width: 2000,
            seed: 0,
            long_epochs: 5.0,
            mode: "balanced".to_string(),
            strategy: "structure".to_string(),
            n_runs: 5,
            length_unit: "tokens".to_string(),
        }
    }
}

impl PipelineConfig {
    /// Read a config file (or defaults when `path` is `None`) and apply
    /// `LSMIX_*` environment overrides.
    pub fn load(path: Option<&Path>) -> Result<PipelineConfig> {
        let mut config = match path {
            None => PipelineConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| LsMixError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| {
                    LsMixError::Config(format!("{}: {e}", p.display()))
                })?
            }
        };
        config.apply_env()?;
        Ok(config)
    }

    /// Override any field from `LSMIX_<UPPERCASE_KEY>`. Values parse as JSON
    /// first (numbers, booleans, lists); unparsable values are taken as
    /// plain strings, which is what string-typed fields want anyway.
    pub fn apply_env(&mut self) -> Result<()> {
        let mut value =
            serde_json::to_value(&*self).expect("config serializes to a JSON object");
        let object = value.as_object_mut().expect("config is an object");
        for (key, slot) in object.iter_mut() {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            let Ok(raw) = std::env::var(&var) else {
                continue;
            };
            let parsed = match serde_json::from_str::<serde_json::Value>(&raw) {
                Ok(v) => coerce_env_value(key, slot, v, &raw),
                Err(_) => serde_json::Value::String(raw),
            };
            *slot = parsed;
        }
        *self = serde_json::from_value(value)
            .map_err(|e| LsMixError::Config(format!("environment override: {e}")))?;
        Ok(())
    }

    /// Check every field range and cross-field rule, naming offenders.
    pub fn validate(&self) -> Result<()> {
        self.rewrite_config().validate()?;
        self.eval_config().validate()?;
        self.thresholds().validate()?;
        self.lexicons().validate().map_err(LsMixError::Config)?;
        self.thinking_mode()?;
        self.rewrite_strategy()?;
        self.parsed_length_unit()?;
        self.bucket_width_checked()?;
        if self.n_runs == 0 {
            return Err(LsMixError::Config("n_runs must be at least 1".to_string()));
        }
        if self.top_k == 0 {
            return Err(LsMixError::Config("top_k must be at least 1".to_string()));
        }
        if !(self.long_epochs.is_finite() && self.long_epochs > 0.0) {
            return Err(LsMixError::Config(format!(
                "long_epochs {} must be positive",
                self.long_epochs
            )));
        }
        if self.base_url.is_some() && self.mock_fixture.is_some() {
            return Err(LsMixError::Config(
                "base_url and mock_fixture are mutually exclusive".to_string(),
            ));
        }
        Ok(())
    }

    pub fn rewrite_config(&self) -> RewriteConfig {
        RewriteConfig {
            model: self.rewriter_model.clone(),
            temperature: self.temperature,
            context_budget_tokens: self.context_budget_tokens,
            chars_per_token: self.chars_per_token,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            max_output_tokens: self.max_output_tokens,
            retry_base_delay_ms: self.retry_base_delay_ms,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            model: self.eval_model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            retry_base_delay_ms: self.retry_base_delay_ms,
            chars_per_token: self.chars_per_token,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            min_fidelity: self.min_fidelity,
            min_retention: self.min_retention,
            ratio_bounds: (self.ratio_lower, self.ratio_upper),
            require_final_answer: self.require_final_answer,
        }
    }

    pub fn lexicons(&self) -> MarkerLexicons {
        MarkerLexicons {
            transition: self.transition_markers.clone(),
            verification: self.verification_markers.clone(),
            conclusion: self.conclusion_markers.clone(),
            enumerators: self.enumerators.clone(),
        }
    }

    pub fn stopword_set(&self) -> HashSet<String> {
        self.stopwords.iter().map(|w| w.to_lowercase()).collect()
    }

    pub fn thinking_mode(&self) -> Result<ThinkingMode> {
        self.mode.parse().map_err(LsMixError::Config)
    }

    pub fn rewrite_strategy(&self) -> Result<RewriteStrategy> {
        self.strategy.parse().map_err(LsMixError::Config)
    }

    pub fn parsed_length_unit(&self) -> Result<LengthUnit> {
        self.length_unit.parse().map_err(LsMixError::Config)
    }

    pub fn bucket_width_checked(&self) -> Result<NonZeroU64> {
        NonZeroU64::new(self.bucket_width)
            .ok_or_else(|| LsMixError::Config("bucket_width must be positive".to_string()))
    }
}

/// A JSON-parsed env value may still be meant as a string: `LSMIX_MODE=brief`
/// parses as a string already, but a value like `5` for a string-typed field
/// (say a model named "5") must not switch types. Keep the parsed value when
/// the slot's current type matches (or is null); otherwise fall back to the
/// raw text for string slots.
fn coerce_env_value(
    _key: &str,
    slot: &serde_json::Value,
    parsed: serde_json::Value,
    raw: &str,
) -> serde_json::Value {
    let slot_is_string = slot.is_string();
    if slot_is_string && !parsed.is_string() {
        return serde_json::Value::String(raw.to_string());
    }
    parsed
}
