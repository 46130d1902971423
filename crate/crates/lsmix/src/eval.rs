//! Benchmark harness: drive a served model through question sets under a
//! thinking mode and compute efficiency metrics — median-of-n accuracy,
//! response lengths split by correctness, histograms, weighted
//! cross-benchmark averages, and reduction percentages.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroU64;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::{complete_with_retries, ChatClient, ChatMessage, GenerationSettings};
use crate::cot;
use crate::error::{LsMixError, Result};
use crate::mixture::{render_mode_prompt, ThinkingMode};
use crate::parallel::parallel_map;
use crate::rewrite::estimate_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    /// Free-form math; the answer is read from the last `\boxed{...}`.
    BoxedMath,
    /// Single letter A–D.
    MultipleChoiceLetter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub answer_kind: AnswerKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkSpec {
    pub name: String,
    pub items: Vec<BenchmarkItem>,
}

impl BenchmarkSpec {
    pub fn size(&self) -> u64 {
        self.items.len() as u64
    }
}

/// Load a benchmark: JSONL of `{"id", "question", "gold_answer",
/// "answer_kind"}`. Errors name 1-based line numbers.
pub fn load_benchmark(path: &Path, name: &str) -> Result<BenchmarkSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| LsMixError::io(path, e))?;
    let mut items: Vec<BenchmarkItem> = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let record_err = |reason: String| LsMixError::Record {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        if line.trim().is_empty() {
            return Err(record_err("blank line inside benchmark file".to_string()));
        }
        let item: BenchmarkItem =
            serde_json::from_str(line).map_err(|source| LsMixError::Jsonl {
                path: path.to_path_buf(),
                line: lineno,
                source,
            })?;
        if item.id.is_empty() || item.question.is_empty() {
            return Err(record_err("id and question must be non-empty".to_string()));
        }
        if item.gold_answer.is_empty() {
            return Err(record_err(format!("item {} has an empty gold answer", item.id)));
        }
        if !seen.insert(item.id.clone()) {
            return Err(record_err(format!("duplicate item id {}", item.id)));
        }
        items.push(item);
    }
    Ok(BenchmarkSpec { name: name.to_string(), items })
}

/// Generation and orchestration settings for benchmark runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub retry_base_delay_ms: u64,
    /// Heuristic ratio for estimated-token lengths.
    pub chars_per_token: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            model: "served".to_string(),
            temperature: 0.7,
            max_output_tokens: 16_384,
            max_retries: 3,
            max_in_flight: 8,
            retry_base_delay_ms: 500,
            chars_per_token: 4.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LsMixError::Config(msg));
        if self.model.trim().is_empty() {
            return fail("eval model name must not be empty".to_string());
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return fail(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_in_flight == 0 {
            return fail("max_in_flight must be at least 1".to_string());
        }
        if self.max_output_tokens == 0 {
            return fail("max_output_tokens must be positive".to_string());
        }
        if !self.chars_per_token.is_finite() || self.chars_per_token <= 0.0 {
            return fail(format!("chars_per_token {} must be positive", self.chars_per_token));
        }
        Ok(())
    }

    pub fn settings(&self) -> GenerationSettings {
        GenerationSettings {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_output_tokens,
        }
    }
}

/// One item's outcome within a run. Lengths cover the full response —
/// thinking and answer together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub full_response: String,
    pub thinking: String,
    pub extracted_answer: String,
    pub correct: bool,
    pub char_length: u64,
    pub est_token_length: u64,
    /// True when the endpoint failed for this item even after retries; such
    /// records score incorrect with zero-length responses.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub benchmark_name: String,
    pub mode: ThinkingMode,
    /// 1-based.
    pub run_index: u32,
    pub records: Vec<EvalRecord>,
}

/// One JSON line per record.
pub fn run_jsonl(run: &EvalRun) -> String {
    let mut out = String::new();
    for record in &run.records {
        out.push_str(&serde_json::to_string(record).expect("eval records serialize"));
        out.push('\n');
    }
    out
}

fn strip_digit_commas_and_trim(s: &str) -> String {
    cot::strip_number_commas(s.trim())
}

/// Canonical form of a gold answer for comparison.
pub fn normalize_gold(kind: AnswerKind, gold: &str) -> String {
    match kind {
        AnswerKind::BoxedMath => strip_digit_commas_and_trim(gold),
        AnswerKind::MultipleChoiceLetter => gold.trim().to_ascii_uppercase(),
    }
}

/// Last maximal digit run (decimal points kept, digit-group commas dropped),
/// with a leading minus when one directly precedes the run and is not itself
/// preceded by an alphanumeric (so "= -4" keeps the sign but "x-4" and "5-4"
/// do not).
fn last_numeric_token(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut best: Option<String> = None;
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let start = i;
            let mut end = i + 1;
            while end < chars.len() {
                let c = chars[end];
                if c.is_ascii_digit() {
                    end += 1;
                } else if (c == '.' || c == ',')
                    && end + 1 < chars.len()
                    && chars[end + 1].is_ascii_digit()
                {
                    end += 2;
                } else {
                    break;
                }
            }
            let negative = start > 0
                && chars[start - 1] == '-'
                && (start < 2 || !chars[start - 2].is_ascii_alphanumeric());
            let mut token = String::new();
            if negative {
                token.push('-');
            }
            token.extend(chars[start..end].iter().filter(|c| **c != ','));
            best = Some(token);
            i = end;
        } else {
            i += 1;
        }
    }
    best.unwrap_or_default()
}

/// Contents of the last `\boxed{...}` with balanced braces, or `None` when
/// no balanced group exists.
fn last_boxed_contents(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let open = text.rfind(MARKER)?;
    let body = &text[open + MARKER.len()..];
    let mut depth = 1u32;
    for (i, c) in body.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(body[..i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Pull a normalized answer out of model text.
///
/// `BoxedMath`: the last balanced `\boxed{...}` group, trimmed, with
/// digit-group commas removed; when no balanced group exists, the last
/// numeric token. `MultipleChoiceLetter`: the last standalone letter A–D
/// (not touching other alphanumerics), uppercased. No answer → empty string.
pub fn extract_answer(text: &str, kind: AnswerKind) -> String {
    match kind {
        AnswerKind::BoxedMath => match last_boxed_contents(text) {
            Some(inner) => strip_digit_commas_and_trim(&inner),
            None => last_numeric_token(text),
        },
        AnswerKind::MultipleChoiceLetter => {
            let chars: Vec<char> = text.chars().collect();
            let mut best = String::new();
            for (i, &c) in chars.iter().enumerate() {
                if matches!(c.to_ascii_uppercase(), 'A'..='D') {
                    let left_ok = i == 0 || !chars[i - 1].is_ascii_alphanumeric();
                    let right_ok =
                        i + 1 >= chars.len() || !chars[i + 1].is_ascii_alphanumeric();
                    if left_ok && right_ok {
                        best = c.to_ascii_uppercase().to_string();
                    }
                }
            }
            best
        }
    }
}

fn failed_record(item: &BenchmarkItem) -> EvalRecord {
    EvalRecord {
        item_id: item.id.clone(),
        full_response: String::new(),
        thinking: String::new(),
        extracted_answer: String::new(),
        correct: false,
        char_length: 0,
        est_token_length: 0,
        failed: true,
    }
}

/// Run every benchmark item under `mode`, `n_runs` times.
///
/// Each item is prompted as the mode prompt, a newline, then the question.
/// Within a run items fan out up to `max_in_flight` concurrent calls;
/// records keep item order. Endpoint failures (after retries) score as
/// incorrect, flagged, and never abort the run.
pub fn run_benchmark(
    client: &dyn ChatClient,
    benchmark: &BenchmarkSpec,
    mode: ThinkingMode,
    n_runs: u32,
    config: &EvalConfig,
) -> Result<Vec<EvalRun>> {
    config.validate()?;
    if n_runs == 0 {
        return Err(LsMixError::Config("n_runs must be at least 1".to_string()));
    }
    let settings = config.settings();
    let mut runs = Vec::with_capacity(n_runs as usize);
    for run_index in 1..=n_runs {
        let records = parallel_map(&benchmark.items, config.max_in_flight, |_, item| {
            let prompt = format!("{}\n{}", render_mode_prompt(mode), item.question);
            let messages = [ChatMessage::user(prompt)];
            let response = complete_with_retries(
                client,
                &item.id,
                &messages,
                &settings,
                config.max_retries,
                Duration::from_millis(config.retry_base_delay_ms),
            );
            let Ok((full_response, _)) = response else {
                return failed_record(item);
            };
            let split = cot::split_think_answer(&full_response);
            let mut extracted = extract_answer(&split.answer, item.answer_kind);
            if extracted.is_empty() {
                extracted = extract_answer(&full_response, item.answer_kind);
            }
            let correct = !extracted.is_empty()
                && extracted == normalize_gold(item.answer_kind, &item.gold_answer);
            EvalRecord {
                item_id: item.id.clone(),
                char_length: full_response.chars().count() as u64,
                est_token_length: estimate_tokens(&full_response, config.chars_per_token),
                thinking: split.thinking,
                extracted_answer: extracted,
                correct,
                full_response,
                failed: false,
            }
        });
        runs.push(EvalRun {
            benchmark_name: benchmark.name.clone(),
            mode,
            run_index,
            records,
        });
    }
    Ok(runs)
}

/// Recompute a run's accuracy against the benchmark's gold answers.
pub fn score_run(run: &EvalRun, benchmark: &BenchmarkSpec) -> Result<f64> {
    if run.records.len() != benchmark.items.len()
        || run
            .records
            .iter()
            .zip(&benchmark.items)
            .any(|(record, item)| record.item_id != item.id)
    {
        return Err(LsMixError::Config(format!(
            "run over {} does not align with benchmark {}",
            run.benchmark_name, benchmark.name
        )));
    }
    if benchmark.items.is_empty() {
        return Ok(0.0);
    }
    let correct = run
        .records
        .iter()
        .zip(&benchmark.items)
        .filter(|(record, item)| {
            !record.extracted_answer.is_empty()
                && record.extracted_answer == normalize_gold(item.answer_kind, &item.gold_answer)
        })
        .count();
    Ok(correct as f64 / benchmark.items.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    Chars,
    EstTokens,
}

impl std::str::FromStr for LengthUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "chars" | "characters" => Ok(LengthUnit::Chars),
            "tokens" | "est_tokens" => Ok(LengthUnit::EstTokens),
            other => Err(format!("unknown length unit \"{other}\" (expected chars or tokens)")),
        }
    }
}

fn record_length(record: &EvalRecord, unit: LengthUnit) -> u64 {
    match unit {
        LengthUnit::Chars => record.char_length,
        LengthUnit::EstTokens => record.est_token_length,
    }
}

/// Aggregated metrics for one (benchmark, mode) across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub benchmark: String,
    pub mode: ThinkingMode,
    pub length_unit: LengthUnit,
    pub bucket_width: u64,
    pub accuracy_per_run: Vec<f64>,
    /// Median of the per-run accuracies (even count: mean of middle two).
    pub accuracy_median: f64,
    /// Mean response length pooled over every record of every run.
    pub mean_length_all: f64,
    pub mean_length_correct: Option<f64>,
    pub mean_length_incorrect: Option<f64>,
    /// Incorrect mean over correct mean, when both partitions exist.
    pub incorrect_to_correct_ratio: Option<f64>,
    /// `(bucket_lower_bound, count)` over pooled lengths, contiguous from 0.
    pub histogram: Vec<(u64, u64)>,
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("accuracies are comparable"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Pool runs of one (benchmark, mode) into [`Metrics`].
pub fn summarize(runs: &[EvalRun], unit: LengthUnit, bucket_width: NonZeroU64) -> Result<Metrics> {
    let Some(first) = runs.first() else {
        return Err(LsMixError::Config("cannot summarize zero runs".to_string()));
    };
    if runs
        .iter()
        .any(|r| r.benchmark_name != first.benchmark_name || r.mode != first.mode)
    {
        return Err(LsMixError::Config(
            "summarize requires runs of a single benchmark and mode".to_string(),
        ));
    }

    let accuracy_per_run: Vec<f64> = runs
        .iter()
        .map(|run| {
            if run.records.is_empty() {
                0.0
            } else {
                run.records.iter().filter(|r| r.correct).count() as f64 / run.records.len() as f64
            }
        })
        .collect();
    let accuracy_median = median(&accuracy_per_run);

    let records: Vec<&EvalRecord> = runs.iter().flat_map(|r| &r.records).collect();
    let lengths: Vec<u64> = records.iter().map(|r| record_length(r, unit)).collect();
    let mean = |xs: &[u64]| -> Option<f64> {
        (!xs.is_empty()).then(|| xs.iter().sum::<u64>() as f64 / xs.len() as f64)
    };
    let correct_lengths: Vec<u64> = records
        .iter()
        .zip(&lengths)
        .filter(|(r, _)| r.correct)
        .map(|(_, &len)| len)
        .collect();
    let incorrect_lengths: Vec<u64> = records
        .iter()
        .zip(&lengths)
        .filter(|(r, _)| !r.correct)
        .map(|(_, &len)| len)
        .collect();

    let mean_length_all = mean(&lengths).unwrap_or(0.0);
    let mean_length_correct = mean(&correct_lengths);
    let mean_length_incorrect = mean(&incorrect_lengths);
    let incorrect_to_correct_ratio = match (mean_length_correct, mean_length_incorrect) {
        (Some(c), Some(i)) if c > 0.0 => Some(i / c),
        _ => None,
    };

    let width = bucket_width.get();
    let histogram = if lengths.is_empty() {
        Vec::new()
    } else {
        let max = *lengths.iter().max().expect("non-empty");
        let buckets = (max / width) as usize + 1;
        let mut counts = vec![0u64; buckets];
        for len in &lengths {
            counts[(len / width) as usize] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| (i as u64 * width, count))
            .collect()
    };

    Ok(Metrics {
        benchmark: first.benchmark_name.clone(),
        mode: first.mode,
        length_unit: unit,
        bucket_width: width,
        accuracy_per_run,
        accuracy_median,
        mean_length_all,
        mean_length_correct,
        mean_length_incorrect,
        incorrect_to_correct_ratio,
        histogram,
    })
}

/// Size-weighted mean of per-benchmark mean lengths. The two maps must have
/// identical key sets and positive sizes.
pub fn weighted_average_length(
    means: &BTreeMap<String, f64>,
    sizes: &BTreeMap<String, u64>,
) -> Result<f64> {
    if means.is_empty() {
        return Err(LsMixError::Config("weighted average over zero benchmarks".to_string()));
    }
    let mean_keys: Vec<&String> = means.keys().collect();
    let size_keys: Vec<&String> = sizes.keys().collect();
    if mean_keys != size_keys {
        return Err(LsMixError::Config(format!(
            "benchmark key sets differ: means {mean_keys:?} vs sizes {size_keys:?}"
        )));
    }
    let mut weighted_sum = 0.0f64;
    let mut total_weight = 0u64;
    for (name, mean) in means {
        let size = sizes[name];
        if size == 0 {
            return Err(LsMixError::Config(format!("benchmark {name} has size 0")));
        }
        if !mean.is_finite() {
            return Err(LsMixError::Config(format!("benchmark {name} has non-finite mean")));
        }
        weighted_sum += size as f64 * mean;
        total_weight += size;
    }
    Ok(weighted_sum / total_weight as f64)
}

/// Percentage reduction of `ours` relative to `baseline`.
pub fn reduction_percent(baseline: f64, ours: f64) -> Result<f64> {
    if !baseline.is_finite() || baseline <= 0.0 {
        return Err(LsMixError::Config(format!(
            "reduction baseline {baseline} must be positive"
        )));
    }
    Ok(100.0 * (baseline - ours) / baseline)
}

/// One benchmark's row in a cross-benchmark summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub accuracy_median: f64,
    pub mean_length: f64,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossBenchmarkSummary {
    pub length_unit: LengthUnit,
    pub per_benchmark: BTreeMap<String, BenchmarkSummary>,
    /// Mean length weighted by benchmark sizes.
    pub weighted_mean_length: f64,
    /// Percentage reduction vs a baseline weighted mean, when supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reduction_vs_baseline: Option<f64>,
}

/// Combine per-benchmark rows into the cross-benchmark view.
pub fn cross_benchmark_summary(
    per_benchmark: BTreeMap<String, BenchmarkSummary>,
    length_unit: LengthUnit,
    baseline_weighted_mean: Option<f64>,
) -> Result<CrossBenchmarkSummary> {
    let means: BTreeMap<String, f64> =
        per_benchmark.iter().map(|(k, v)| (k.clone(), v.mean_length)).collect();
    let sizes: BTreeMap<String, u64> =
        per_benchmark.iter().map(|(k, v)| (k.clone(), v.size)).collect();
    let weighted_mean_length = weighted_average_length(&means, &sizes)?;
    let reduction_vs_baseline = match baseline_weighted_mean {
        Some(baseline) => Some(reduction_percent(baseline, weighted_mean_length)?),
        None => None,
    };
    Ok(CrossBenchmarkSummary {
        length_unit,
        per_benchmark,
        weighted_mean_length,
        reduction_vs_baseline,
    })
}
