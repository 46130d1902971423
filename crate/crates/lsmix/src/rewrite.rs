//! Rewriting orchestration: turn each long reasoning trajectory into a
//! condensed counterpart by prompting a chat endpoint, with context-budget
//! exclusion, retries, and bounded concurrency.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::{complete_with_retries, ChatClient, ChatMessage, GenerationSettings};
use crate::corpus::{ChainKind, Dataset, ReasoningInstance};
use crate::error::{LsMixError, Result};
use crate::parallel::parallel_map;

/// Template for structure-preserved rewriting: condense while keeping the
/// original step layout, verification passes, and final answer.
pub const STRUCTURE_TEMPLATE: &str = "You have a QUESTION and a THOUGHT PROCESS now, and you need to simplify the THOUGHT PROCESS while maintaining its original structure and steps. \n\nQUESTION: {question} \n\nTHOUGHT PROCESS: {thought_process} \n\nNow, you need to simplify the THOUGHT PROCESS while maintaining its original structure and steps. For each step in the original THOUGHT PROCESS:\n1. Keep the original logical flow and steps as much as possible, including the thinking process, verification process, and the final answer.\n2. Remove redundant tokens.\n3. Preserve the step-by-step format.\n4. Allow condensed thought processes to include attempts at different reasoning processes.\nDo not add any new information that wasn't in the original THOUGHT PROCESS.\n\nSIMPLIFIED THOUGHT PROCESS:";

/// Template for direct compression: shrink to the bare minimum with no
/// requirement to keep the original step structure.
pub const DIRECT_TEMPLATE: &str = "You have a question now:\n\nQUESTION:\n{question}\n\nTHOUGHT PROCESS:\n{thought_process}\n\nNow, you need to simplify the THOUGHT PROCESS as short as possible to only include the key information needed to solve the question. And do not add additional information that is not included in the original THOUGHT PROCESS.\n\nSIMPLIFIED THOUGHT PROCESS:";

/// Template for the answer-conditioned baseline: regenerate a short rationale
/// from the question and its gold answer. This wording is our own (the method
/// it reproduces is described elsewhere only informally); treat it as a
/// stand-in rather than a canonical prompt.
pub const THINK_TWICE_TEMPLATE: &str = "You have a QUESTION and its final ANSWER now, and you need to produce a THOUGHT PROCESS that reaches that ANSWER.\n\nQUESTION:\n{question}\n\nANSWER:\n{answer}\n\nWrite a concise step-by-step THOUGHT PROCESS that starts from the QUESTION and arrives at the given ANSWER. Do not introduce information that the QUESTION and ANSWER do not support.\n\nTHOUGHT PROCESS:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteStrategy {
    StructurePreserved,
    DirectCompression,
    ThinkTwice,
}

impl RewriteStrategy {
    /// Short machine name, used in `source` attributions and artifact names.
    pub fn slug(self) -> &'static str {
        match self {
            RewriteStrategy::StructurePreserved => "structure",
            RewriteStrategy::DirectCompression => "direct",
            RewriteStrategy::ThinkTwice => "thinktwice",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            RewriteStrategy::StructurePreserved => STRUCTURE_TEMPLATE,
            RewriteStrategy::DirectCompression => DIRECT_TEMPLATE,
            RewriteStrategy::ThinkTwice => THINK_TWICE_TEMPLATE,
        }
    }

    /// The label each template ends with; models often echo it back, and it
    /// must be stripped before the text can serve as a trajectory.
    fn response_header(self) -> &'static str {
        match self {
            RewriteStrategy::StructurePreserved | RewriteStrategy::DirectCompression => {
                "SIMPLIFIED THOUGHT PROCESS:"
            }
            RewriteStrategy::ThinkTwice => "THOUGHT PROCESS:",
        }
    }
}

impl std::str::FromStr for RewriteStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "structure" | "structure_preserved" | "structure-preserved" => {
                Ok(RewriteStrategy::StructurePreserved)
            }
            "direct" | "direct_compression" | "direct-compression" => {
                Ok(RewriteStrategy::DirectCompression)
            }
            "thinktwice" | "think_twice" | "think-twice" => Ok(RewriteStrategy::ThinkTwice),
            other => Err(format!(
                "unknown rewrite strategy \"{other}\" (expected structure, direct, or thinktwice)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteConfig {
    /// Model name sent to the endpoint.
    pub model: String,
    /// Sampling temperature in [0, 2].
    pub temperature: f64,
    /// Prompts estimated above this many tokens are excluded, not sent.
    pub context_budget_tokens: u64,
    /// Characters-per-token heuristic used by [`estimate_tokens`].
    pub chars_per_token: f64,
    /// Retries after the first attempt on transient failures.
    pub max_retries: u32,
    /// Concurrent in-flight requests cap.
    pub max_in_flight: usize,
    /// Output-token cap per request.
    pub max_output_tokens: u64,
    /// Base backoff delay; doubles per retry. Zero disables sleeping (tests).
    pub retry_base_delay_ms: u64,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        RewriteConfig {
            model: "rewriter".to_string(),
            temperature: 0.7,
            context_budget_tokens: 16_384,
            chars_per_token: 4.0,
            max_retries: 3,
            max_in_flight: 8,
            max_output_tokens: 8_192,
            retry_base_delay_ms: 500,
        }
    }
}

impl RewriteConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LsMixError::Config(msg));
        if self.model.trim().is_empty() {
            return fail("rewrite model name must not be empty".into());
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return fail(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.context_budget_tokens == 0 {
            return fail("context_budget_tokens must be positive".into());
        }
        if !self.chars_per_token.is_finite() || self.chars_per_token <= 0.0 {
            return fail(format!("chars_per_token {} must be positive", self.chars_per_token));
        }
        if self.max_in_flight == 0 {
            return fail("max_in_flight must be at least 1".into());
        }
        if self.max_output_tokens == 0 {
            return fail("max_output_tokens must be positive".into());
        }
        Ok(())
    }

    fn settings(&self) -> GenerationSettings {
        GenerationSettings {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_output_tokens,
        }
    }
}

/// Result of rewriting a single instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RewriteOutcome {
    Success {
        short_trajectory: String,
        prompt_tokens_est: u64,
        response_tokens_est: u64,
        attempts: u32,
    },
    ExcludedContextLength {
        est: u64,
        budget: u64,
    },
    Failed {
        reason: String,
        attempts: u32,
    },
}

/// One non-success entry of an [`ExclusionReport`], as written to JSONL.
/// `estimate`/`budget` are null for endpoint or response failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub id: String,
    pub reason: String,
    pub estimate: Option<u64>,
    pub budget: Option<u64>,
}

/// Everything that did not make it into the short dataset, in source order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExclusionReport {
    pub records: Vec<ExclusionRecord>,
    /// How many records failed with endpoint errors after exhausting retries
    /// (as opposed to context-length exclusions or degenerate responses).
    pub retry_exhausted: usize,
}

impl ExclusionReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per record, each line `\n`-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("exclusion records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Substitute `{placeholder}` markers in a single pass, so substituted values
/// are never re-expanded even if they contain marker-like text.
fn fill_template(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in substitutions {
            let marker_len = name.len() + 2;
            if tail.len() >= marker_len
                && tail.as_bytes()[marker_len - 1] == b'}'
                && &tail[1..marker_len - 1] == *name
            {
                out.push_str(value);
                rest = &tail[marker_len..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Render the full rewriter prompt for one instance under a strategy.
pub fn render_rewrite_prompt(strategy: RewriteStrategy, instance: &ReasoningInstance) -> String {
    fill_template(
        strategy.template(),
        &[
            ("question", instance.question.as_str()),
            ("thought_process", instance.trajectory.as_str()),
            ("answer", instance.answer.as_str()),
        ],
    )
}

/// Estimated token count: ceiling of Unicode scalar count over the ratio.
pub fn estimate_tokens(text: &str, chars_per_token: f64) -> u64 {
    let chars = text.chars().count();
    if chars == 0 {
        return 0;
    }
    (chars as f64 / chars_per_token).ceil() as u64
}

/// Drop a leading echo of the template's closing label, case-insensitively,
/// and trim surrounding whitespace.
fn strip_response_header(text: &str, header: &str) -> String {
    let trimmed = text.trim();
    if trimmed.len() >= header.len() && trimmed[..header.len()].eq_ignore_ascii_case(header) {
        trimmed[header.len()..].trim().to_string()
    } else {
        trimmed.to_string()
    }
}

/// Rewrite one long instance. Over-budget prompts are excluded without any
/// client call; transient endpoint failures are retried with exponential
/// backoff; the response is rejected if empty (after echo-stripping) or if it
/// carries thinking delimiters, which trajectories must never contain.
pub fn rewrite_instance(
    client: &dyn ChatClient,
    instance: &ReasoningInstance,
    strategy: RewriteStrategy,
    config: &RewriteConfig,
) -> RewriteOutcome {
    let prompt = render_rewrite_prompt(strategy, instance);
    let prompt_tokens_est = estimate_tokens(&prompt, config.chars_per_token);
    if prompt_tokens_est > config.context_budget_tokens {
        return RewriteOutcome::ExcludedContextLength {
            est: prompt_tokens_est,
            budget: config.context_budget_tokens,
        };
    }

    let messages = [ChatMessage::user(prompt)];
    let raw = complete_with_retries(
        client,
        &instance.id,
        &messages,
        &config.settings(),
        config.max_retries,
        Duration::from_millis(config.retry_base_delay_ms),
    );
    let (raw, attempts) = match raw {
        Ok(ok) => ok,
        Err((err, attempts)) => {
            return RewriteOutcome::Failed { reason: err.to_string(), attempts }
        }
    };

    let text = strip_response_header(&raw, strategy.response_header());
    if text.is_empty() {
        return RewriteOutcome::Failed {
            reason: "assistant text empty after echo-stripping".to_string(),
            attempts,
        };
    }
    if text.contains("<think>") || text.contains("</think>") {
        return RewriteOutcome::Failed {
            reason: "assistant text contains thinking delimiters".to_string(),
            attempts,
        };
    }
    let response_tokens_est = estimate_tokens(&text, config.chars_per_token);
    RewriteOutcome::Success {
        short_trajectory: text,
        prompt_tokens_est,
        response_tokens_est,
        attempts,
    }
}

/// Rewrite a whole long dataset into its short counterpart.
///
/// Instances are processed with at most `max_in_flight` concurrent requests,
/// but the output preserves source order regardless of completion order.
/// Every input id lands exactly once in either the short dataset or the
/// exclusion report. Per-instance failures never abort the batch.
pub fn rewrite_dataset(
    client: &dyn ChatClient,
    dataset: &Dataset,
    strategy: RewriteStrategy,
    config: &RewriteConfig,
) -> Result<(Dataset, ExclusionReport)> {
    config.validate()?;
    if dataset.kind != ChainKind::Long {
        return Err(LsMixError::KindMismatch { expected: ChainKind::Long, actual: dataset.kind });
    }

    let outcomes = parallel_map(&dataset.instances, config.max_in_flight, |_, instance| {
        rewrite_instance(client, instance, strategy, config)
    });

    let source = format!("rewrite:{}", strategy.slug());
    let mut shorts = Vec::new();
    let mut report = ExclusionReport::default();
    for (instance, outcome) in dataset.instances.iter().zip(outcomes) {
        match outcome {
            RewriteOutcome::Success { short_trajectory, .. } => {
                shorts.push(ReasoningInstance {
                    id: instance.id.clone(),
                    question: instance.question.clone(),
                    trajectory: short_trajectory,
                    answer: instance.answer.clone(),
                    chain_kind: ChainKind::Short,
                    source: source.clone(),
                    extra: instance.extra.clone(),
                });
            }
            RewriteOutcome::ExcludedContextLength { est, budget } => {
                report.records.push(ExclusionRecord {
                    id: instance.id.clone(),
                    reason: "context length estimate exceeds budget".to_string(),
                    estimate: Some(est),
                    budget: Some(budget),
                });
            }
            RewriteOutcome::Failed { reason, attempts } => {
                if attempts > config.max_retries {
                    report.retry_exhausted += 1;
                }
                report.records.push(ExclusionRecord {
                    id: instance.id.clone(),
                    reason,
                    estimate: None,
                    budget: None,
                });
            }
        }
    }

    let short_dataset = Dataset {
        name: format!("{}-short", dataset.name),
        kind: ChainKind::Short,
        instances: shorts,
    };
    debug_assert_eq!(short_dataset.instances.len() + report.len(), dataset.instances.len());
    Ok((short_dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{MockChatClient, ScriptStep};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn long_instance(id: &str, question: &str, trajectory: &str) -> ReasoningInstance {
        ReasoningInstance {
            id: id.to_string(),
            question: question.to_string(),
            trajectory: trajectory.to_string(),
            answer: "42".to_string(),
            chain_kind: ChainKind::Long,
            source: "unit".to_string(),
            extra: Default::default(),
        }
    }

    fn quick_config() -> RewriteConfig {
        RewriteConfig { retry_base_delay_ms: 0, ..RewriteConfig::default() }
    }

    #[test]
    fn templates_pin_their_distinctive_instructions() {
        assert!(STRUCTURE_TEMPLATE.contains("maintaining its original structure and steps"));
        assert!(DIRECT_TEMPLATE.contains("as short as possible"));
        assert!(STRUCTURE_TEMPLATE.ends_with("SIMPLIFIED THOUGHT PROCESS:"));
        assert!(DIRECT_TEMPLATE.ends_with("SIMPLIFIED THOUGHT PROCESS:"));
        assert!(THINK_TWICE_TEMPLATE.ends_with("THOUGHT PROCESS:"));
        assert!(THINK_TWICE_TEMPLATE.contains("{answer}"));
    }

    #[test]
    fn prompt_rendering_substitutes_question_and_trajectory() {
        let instance = long_instance("i", "What is 2+2?", "Add the twos.");
        let prompt =
            render_rewrite_prompt(RewriteStrategy::StructurePreserved, &instance);
        assert!(prompt.contains("What is 2+2?"));
        assert!(prompt.contains("Add the twos."));
        assert!(prompt.contains("maintaining its original structure and steps"));
        assert!(!prompt.contains("{question}"));
        assert!(!prompt.contains("{thought_process}"));

        let tt = render_rewrite_prompt(RewriteStrategy::ThinkTwice, &instance);
        assert!(tt.contains("42"));
        assert!(!tt.contains("{answer}"));
    }

    #[test]
    fn substitution_is_single_pass() {
        let instance = long_instance("i", "Q", "literal {question} stays");
        let prompt =
            render_rewrite_prompt(RewriteStrategy::StructurePreserved, &instance);
        // The marker inside the trajectory value must survive untouched.
        assert!(prompt.contains("literal {question} stays"));
        // Only the trajectory's copy remains, not the template slot.
        assert_eq!(prompt.matches("{question}").count(), 1);
    }

    #[test]
    fn unknown_braces_pass_through() {
        assert_eq!(fill_template("a {nope} b {x}", &[("x", "1")]), "a {nope} b 1");
        assert_eq!(fill_template("tail {", &[("x", "1")]), "tail {");
        assert_eq!(fill_template("{x}{x}", &[("x", "ab")]), "abab");
    }

    #[test]
    fn token_estimates_use_ceiling_over_scalar_count() {
        assert_eq!(estimate_tokens("", 4.0), 0);
        assert_eq!(estimate_tokens("abcdefgh", 4.0), 2);
        assert_eq!(estimate_tokens("abcdefghi", 4.0), 3);
        assert_eq!(estimate_tokens("a", 4.0), 1);
        // Four scalars, not twelve bytes.
        assert_eq!(estimate_tokens("∑∑∑∑", 4.0), 1);
        assert_eq!(estimate_tokens("abcde", 2.5), 2);
    }

    #[test]
    fn success_strips_the_echoed_header() {
        let mock = MockChatClient::with_responses([(
            "i",
            "SIMPLIFIED THOUGHT PROCESS:\nS1. Add. S2. Done.",
        )]);
        let outcome = rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        );
        match outcome {
            RewriteOutcome::Success { short_trajectory, attempts, .. } => {
                assert_eq!(short_trajectory, "S1. Add. S2. Done.");
                assert_eq!(attempts, 1);
            }
            other => panic!("expected success, got {other:?}"),
        }
    }

    #[test]
    fn header_strip_is_case_insensitive_and_strategy_specific() {
        let mock = MockChatClient::with_responses([("i", "simplified thought process:  kept")]);
        match rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::DirectCompression,
            &quick_config(),
        ) {
            RewriteOutcome::Success { short_trajectory, .. } => {
                assert_eq!(short_trajectory, "kept")
            }
            other => panic!("expected success, got {other:?}"),
        }

        // The answer-conditioned strategy strips its own, shorter header…
        let mock = MockChatClient::with_responses([("i", "THOUGHT PROCESS: regenerated")]);
        match rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::ThinkTwice,
            &quick_config(),
        ) {
            RewriteOutcome::Success { short_trajectory, .. } => {
                assert_eq!(short_trajectory, "regenerated")
            }
            other => panic!("expected success, got {other:?}"),
        }

        // …and does not mangle text that merely begins with a longer label.
        let mock =
            MockChatClient::with_responses([("i", "SIMPLIFIED THOUGHT PROCESS: analysis")]);
        match rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::ThinkTwice,
            &quick_config(),
        ) {
            RewriteOutcome::Success { short_trajectory, .. } => {
                assert_eq!(short_trajectory, "SIMPLIFIED THOUGHT PROCESS: analysis")
            }
            other => panic!("expected success, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_delimiter_responses_fail() {
        let mock = MockChatClient::with_responses([("i", "SIMPLIFIED THOUGHT PROCESS:   ")]);
        let outcome = rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        );
        assert!(matches!(outcome, RewriteOutcome::Failed { .. }), "got {outcome:?}");

        let mock = MockChatClient::with_responses([("i", "<think>leak</think> body")]);
        let outcome = rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        );
        assert!(matches!(outcome, RewriteOutcome::Failed { .. }), "got {outcome:?}");
    }

    #[test]
    fn over_budget_prompts_are_excluded_without_calls() {
        let mock = MockChatClient::with_responses([("big", "never")]);
        let config = quick_config();
        // 16,384 tokens * 4 chars each, plus the template, is safely over.
        let huge = "x".repeat(16_384 * 4);
        let outcome = rewrite_instance(
            &mock,
            &long_instance("big", "Q", &huge),
            RewriteStrategy::StructurePreserved,
            &config,
        );
        match outcome {
            RewriteOutcome::ExcludedContextLength { est, budget } => {
                assert!(est > budget);
                assert_eq!(budget, config.context_budget_tokens);
            }
            other => panic!("expected exclusion, got {other:?}"),
        }
        assert_eq!(mock.total_calls(), 0);
    }

    #[test]
    fn transient_failures_are_retried_to_success() {
        let mock = MockChatClient::from_scripts(HashMap::from([(
            "i".to_string(),
            vec![
                ScriptStep::FailTransport("net".to_string()),
                ScriptStep::FailHttp(503),
                ScriptStep::Respond("SIMPLIFIED THOUGHT PROCESS: ok".to_string()),
            ],
        )]));
        let outcome = rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        );
        match outcome {
            RewriteOutcome::Success { short_trajectory, attempts, .. } => {
                assert_eq!(short_trajectory, "ok");
                assert_eq!(attempts, 3);
            }
            other => panic!("expected success, got {other:?}"),
        }
    }

    #[test]
    fn exhausted_retries_fail_with_attempt_count() {
        let mock = MockChatClient::from_scripts(HashMap::from([(
            "i".to_string(),
            vec![ScriptStep::FailHttp(500)],
        )]));
        let outcome = rewrite_instance(
            &mock,
            &long_instance("i", "Q", "T"),
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        );
        match outcome {
            RewriteOutcome::Failed { attempts, .. } => assert_eq!(attempts, 4),
            other => panic!("expected failure, got {other:?}"),
        }
        assert_eq!(mock.call_count("i"), 4);
    }

    #[test]
    fn dataset_rewrite_partitions_every_id() {
        let mut instances = Vec::new();
        let mut scripts = HashMap::new();
        for k in 0..6 {
            let id = format!("q{k}");
            let trajectory = if k == 2 { "y".repeat(70_000) } else { format!("steps {k}") };
            instances.push(long_instance(&id, "Q", &trajectory));
            let script = if k == 4 {
                vec![ScriptStep::FailHttp(500)]
            } else {
                vec![ScriptStep::Respond(format!("SIMPLIFIED THOUGHT PROCESS: short {k}"))]
            };
            scripts.insert(id, script);
        }
        let dataset =
            Dataset { name: "demo".to_string(), kind: ChainKind::Long, instances };
        let mock = MockChatClient::from_scripts(scripts);
        let (short, report) = rewrite_dataset(
            &mock,
            &dataset,
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        )
        .unwrap();

        assert_eq!(short.name, "demo-short");
        assert_eq!(short.kind, ChainKind::Short);
        assert_eq!(short.instances.len(), 4);
        assert_eq!(report.len(), 2);
        assert_eq!(short.instances.len() + report.len(), dataset.instances.len());

        // Source order, not completion order.
        let ids: Vec<&str> = short.instances.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["q0", "q1", "q3", "q5"]);
        assert_eq!(short.instances[0].trajectory, "short 0");
        assert!(short.instances.iter().all(|i| i.source == "rewrite:structure"));
        assert!(short.instances.iter().all(|i| i.chain_kind == ChainKind::Short));

        // The excluded instance never reached the endpoint.
        assert_eq!(mock.call_count("q2"), 0);
        let excluded = &report.records[0];
        assert_eq!(excluded.id, "q2");
        assert!(excluded.estimate.unwrap() > excluded.budget.unwrap());
        let failed = &report.records[1];
        assert_eq!(failed.id, "q4");
        assert_eq!(failed.estimate, None);
        assert_eq!(report.retry_exhausted, 1);

        // JSONL surfaces nulls for the failure entry.
        let jsonl = report.to_jsonl();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains("\"estimate\":null"));
    }

    #[test]
    fn extras_ride_along_onto_short_instances() {
        let mut instance = long_instance("a", "Q", "T");
        instance
            .extra
            .insert("difficulty".to_string(), serde_json::json!("hard"));
        let dataset = Dataset {
            name: "d".to_string(),
            kind: ChainKind::Long,
            instances: vec![instance],
        };
        let mock = MockChatClient::with_responses([("a", "S")]);
        let (short, _) = rewrite_dataset(
            &mock,
            &dataset,
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        )
        .unwrap();
        assert_eq!(short.instances[0].extra["difficulty"], "hard");
    }

    #[test]
    fn wrong_kind_input_is_rejected() {
        let dataset =
            Dataset { name: "d".to_string(), kind: ChainKind::Short, instances: vec![] };
        let mock = MockChatClient::with_responses::<_, &str, &str>([]);
        let err = rewrite_dataset(
            &mock,
            &dataset,
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        )
        .unwrap_err();
        assert!(matches!(err, LsMixError::KindMismatch { .. }));
    }

    #[test]
    fn empty_input_yields_empty_output() {
        let dataset =
            Dataset { name: "d".to_string(), kind: ChainKind::Long, instances: vec![] };
        let mock = MockChatClient::with_responses::<_, &str, &str>([]);
        let (short, report) = rewrite_dataset(
            &mock,
            &dataset,
            RewriteStrategy::StructurePreserved,
            &quick_config(),
        )
        .unwrap();
        assert!(short.instances.is_empty());
        assert!(report.is_empty());
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let instances: Vec<ReasoningInstance> = (0..40)
            .map(|k| long_instance(&format!("q{k}"), "Q", &format!("trajectory {k}")))
            .collect();
        let dataset =
            Dataset { name: "d".to_string(), kind: ChainKind::Long, instances };
        let render = || {
            let mock = MockChatClient::from_scripts(
                (0..40)
                    .map(|k| {
                        (
                            format!("q{k}"),
                            vec![ScriptStep::Respond(format!("short {k}"))],
                        )
                    })
                    .collect(),
            );
            let (short, _) = rewrite_dataset(
                &mock,
                &dataset,
                RewriteStrategy::StructurePreserved,
                &quick_config(),
            )
            .unwrap();
            crate::corpus::dataset_to_jsonl(&short)
        };
        assert_eq!(render(), render());
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let ok = RewriteConfig::default();
        assert!(ok.validate().is_ok());
        assert!(RewriteConfig { temperature: 2.5, ..ok.clone() }.validate().is_err());
        assert!(RewriteConfig { temperature: f64::NAN, ..ok.clone() }.validate().is_err());
        assert!(RewriteConfig { chars_per_token: 0.0, ..ok.clone() }.validate().is_err());
        assert!(RewriteConfig { max_in_flight: 0, ..ok.clone() }.validate().is_err());
        assert!(RewriteConfig { model: "  ".into(), ..ok.clone() }.validate().is_err());
        assert!(RewriteConfig { context_budget_tokens: 0, ..ok }.validate().is_err());
    }

    proptest! {
        /// Lowering the budget can only move outcomes toward exclusion,
        /// never away from it.
        #[test]
        fn budget_tightening_is_monotone(
            len in 0usize..5000,
            budget_lo in 1u64..2000,
            budget_hi in 1u64..2000,
        ) {
            prop_assume!(budget_lo <= budget_hi);
            let text = "z".repeat(len);
            let est = estimate_tokens(&text, 4.0);
            let excluded_hi = est > budget_hi;
            let excluded_lo = est > budget_lo;
            if excluded_hi {
                prop_assert!(excluded_lo);
            }
        }

        /// The estimate is monotone in text length and exact at multiples.
        #[test]
        fn estimate_monotone(len in 0usize..4096) {
            let a = estimate_tokens(&"a".repeat(len), 4.0);
            let b = estimate_tokens(&"a".repeat(len + 1), 4.0);
            prop_assert!(b >= a);
            prop_assert_eq!(a, (len as u64).div_ceil(4));
        }
    }
}
