//! Structural validation of rewrites: score how faithfully a condensed
//! trajectory preserves its source's anchors and step skeleton, and flag
//! rewrites that compress too little, too much, or fabricate content.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{ChainKind, Dataset, ReasoningInstance};
use crate::cot::{self, MarkerKind, MarkerLexicons};
use crate::error::{LsMixError, Result};

/// Rule names as they appear in report `failures` lists.
pub const RULE_RATIO_ABOVE: &str = "ratio_above_upper_bound";
pub const RULE_RATIO_BELOW: &str = "ratio_below_lower_bound";
pub const RULE_FIDELITY: &str = "fidelity_below_min";
pub const RULE_RETENTION: &str = "retention_below_min";
pub const RULE_FINAL_ANSWER: &str = "final_answer_missing";

/// Gate thresholds applied to every long/short pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Minimum share of the short trajectory's anchors that must trace back
    /// to the long trajectory, in order.
    pub min_fidelity: f64,
    /// Minimum share of the long trajectory's step-initial anchors that the
    /// short trajectory must retain, in order.
    pub min_retention: f64,
    /// Closed interval of acceptable `short_chars / long_chars` ratios.
    pub ratio_bounds: (f64, f64),
    /// Whether the last conclusion step's anchors must survive the rewrite.
    pub require_final_answer: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_fidelity: 0.90,
            min_retention: 0.30,
            ratio_bounds: (0.05, 0.80),
            require_final_answer: true,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LsMixError::Config(msg));
        let (lo, hi) = self.ratio_bounds;
        if !(lo.is_finite() && hi.is_finite()) || !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return fail(format!("ratio bounds [{lo}, {hi}] must satisfy 0 <= lower < upper <= 1"));
        }
        for (name, v) in [("min_fidelity", self.min_fidelity), ("min_retention", self.min_retention)]
        {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// How much of the source's structure a condensed trajectory preserves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureScores {
    /// Share of the short trajectory's anchors appearing in the long
    /// trajectory's anchor sequence as an order-preserving subsequence.
    /// 1.0 (vacuously) when the short trajectory has no anchors.
    pub fidelity: f64,
    /// Share of the long trajectory's step-initial anchors present, in
    /// order, among the short trajectory's anchor occurrences.
    /// 1.0 (vacuously) when the long trajectory has no step-initial anchors.
    pub retention: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Outcome of validating one long/short pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub id: String,
    /// `short_chars / long_chars`.
    pub ratio: f64,
    pub scores: StructureScores,
    pub verdict: Verdict,
    /// Violated rule names; empty exactly when the verdict is `Pass`.
    pub failures: Vec<String>,
}

/// Character-count compression ratio of a rewrite.
/// Errors when the long text is empty (the ratio is undefined).
pub fn compression_ratio(long: &str, short: &str) -> Result<f64> {
    let long_chars = long.chars().count();
    if long_chars == 0 {
        return Err(LsMixError::EmptyLongTrajectory("(inline text)".to_string()));
    }
    Ok(short.chars().count() as f64 / long_chars as f64)
}

/// Length of the longest common subsequence of two string sequences.
fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for item_a in a {
        for (j, item_b) in b.iter().enumerate() {
            curr[j + 1] = if item_a.as_ref() == item_b.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// The first anchor of every step, in step order, duplicates kept.
/// (Keeping duplicates makes identity calibration exact: each step-initial
/// occurrence is matched against the short side's full occurrence stream.)
fn step_initial_anchors(text: &str, lexicons: &MarkerLexicons) -> Vec<String> {
    let segmentation = cot::segment_with(text, lexicons);
    let occurrences = cot::anchor_occurrences(text);
    let mut initials = Vec::new();
    for &(start, end) in &segmentation.steps {
        if let Some((_, value)) = occurrences.iter().find(|(pos, _)| *pos >= start && *pos < end) {
            initials.push(value.clone());
        }
    }
    initials
}

/// Distinct anchors of the last step carrying a conclusion marker, or empty
/// when no step concludes.
fn last_conclusion_anchors(text: &str, lexicons: &MarkerLexicons) -> Vec<String> {
    let segmentation = cot::segment_with(text, lexicons);
    let conclusion_step = segmentation
        .steps
        .iter()
        .rev()
        .find(|&&(start, end)| {
            segmentation
                .marker_hits
                .iter()
                .any(|&(pos, kind)| kind == MarkerKind::Conclusion && pos >= start && pos < end)
        })
        .copied();
    let Some((start, end)) = conclusion_step else {
        return Vec::new();
    };
    let mut seen = BTreeSet::new();
    cot::anchor_occurrences(text)
        .into_iter()
        .filter(|(pos, _)| *pos >= start && *pos < end)
        .filter_map(|(_, value)| seen.insert(value.clone()).then_some(value))
        .collect()
}

pub fn structure_scores(long: &str, short: &str) -> StructureScores {
    structure_scores_with(long, short, &MarkerLexicons::default())
}

pub fn structure_scores_with(
    long: &str,
    short: &str,
    lexicons: &MarkerLexicons,
) -> StructureScores {
    let long_anchors = cot::anchor_sequence(long);
    let short_anchors = cot::anchor_sequence(short);

    let fidelity = if short_anchors.is_empty() {
        1.0
    } else {
        lcs_len(&short_anchors, &long_anchors) as f64 / short_anchors.len() as f64
    };

    let step_initials = step_initial_anchors(long, lexicons);
    let retention = if step_initials.is_empty() {
        1.0
    } else {
        let short_occurrence_values: Vec<String> =
            cot::anchor_occurrences(short).into_iter().map(|(_, v)| v).collect();
        lcs_len(&step_initials, &short_occurrence_values) as f64 / step_initials.len() as f64
    };

    StructureScores { fidelity, retention }
}

pub fn validate_pair(
    long: &ReasoningInstance,
    short: &ReasoningInstance,
    thresholds: &Thresholds,
) -> Result<ValidationReport> {
    validate_pair_with(long, short, thresholds, &MarkerLexicons::default())
}

/// Validate one rewrite against its source.
///
/// Checks, in order: compression-ratio bounds, anchor fidelity, step-initial
/// retention, and survival of the final conclusion step's anchors. The
/// final-answer rule is only meaningful when the short trajectory has anchors
/// at all — an anchor-free short already fails the retention gate, which
/// subsumes it.
pub fn validate_pair_with(
    long: &ReasoningInstance,
    short: &ReasoningInstance,
    thresholds: &Thresholds,
    lexicons: &MarkerLexicons,
) -> Result<ValidationReport> {
    thresholds.validate()?;
    if long.id != short.id {
        return Err(LsMixError::IdMismatch { long: long.id.clone(), short: short.id.clone() });
    }
    if long.chain_kind != ChainKind::Long {
        return Err(LsMixError::KindMismatch { expected: ChainKind::Long, actual: long.chain_kind });
    }
    if short.chain_kind != ChainKind::Short {
        return Err(LsMixError::KindMismatch {
            expected: ChainKind::Short,
            actual: short.chain_kind,
        });
    }
    if long.trajectory.is_empty() {
        return Err(LsMixError::EmptyLongTrajectory(long.id.clone()));
    }

    let ratio = compression_ratio(&long.trajectory, &short.trajectory)?;
    let scores = structure_scores_with(&long.trajectory, &short.trajectory, lexicons);

    let (lo, hi) = thresholds.ratio_bounds;
    let mut failures = Vec::new();
    if ratio < lo {
        failures.push(RULE_RATIO_BELOW.to_string());
    }
    if ratio > hi {
        failures.push(RULE_RATIO_ABOVE.to_string());
    }
    if scores.fidelity < thresholds.min_fidelity {
        failures.push(RULE_FIDELITY.to_string());
    }
    if scores.retention < thresholds.min_retention {
        failures.push(RULE_RETENTION.to_string());
    }
    if thresholds.require_final_answer {
        let short_anchor_set: BTreeSet<String> =
            cot::anchor_occurrences(&short.trajectory).into_iter().map(|(_, v)| v).collect();
        if !short_anchor_set.is_empty() {
            let required = last_conclusion_anchors(&long.trajectory, lexicons);
            if !required.iter().all(|a| short_anchor_set.contains(a)) {
                failures.push(RULE_FINAL_ANSWER.to_string());
            }
        }
    }

    let verdict = if failures.is_empty() { Verdict::Pass } else { Verdict::Fail };
    Ok(ValidationReport { id: long.id.clone(), ratio, scores, verdict, failures })
}

/// Aggregate figures over a batch of reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub pairs: usize,
    pub passed: usize,
    pub pass_rate: f64,
    pub mean_ratio: f64,
    pub mean_fidelity: f64,
    pub mean_retention: f64,
}

pub fn summarize_reports(reports: &[ValidationReport]) -> ValidationSummary {
    let pairs = reports.len();
    if pairs == 0 {
        return ValidationSummary {
            pairs: 0,
            passed: 0,
            pass_rate: 0.0,
            mean_ratio: 0.0,
            mean_fidelity: 0.0,
            mean_retention: 0.0,
        };
    }
    let passed = reports.iter().filter(|r| r.verdict == Verdict::Pass).count();
    let n = pairs as f64;
    ValidationSummary {
        pairs,
        passed,
        pass_rate: passed as f64 / n,
        mean_ratio: reports.iter().map(|r| r.ratio).sum::<f64>() / n,
        mean_fidelity: reports.iter().map(|r| r.scores.fidelity).sum::<f64>() / n,
        mean_retention: reports.iter().map(|r| r.scores.retention).sum::<f64>() / n,
    }
}

/// Validate every short instance against its long counterpart (looked up by
/// id), in short-dataset order.
pub fn validate_datasets(
    long: &Dataset,
    short: &Dataset,
    thresholds: &Thresholds,
    lexicons: &MarkerLexicons,
) -> Result<(Vec<ValidationReport>, ValidationSummary)> {
    if long.kind != ChainKind::Long {
        return Err(LsMixError::KindMismatch { expected: ChainKind::Long, actual: long.kind });
    }
    if short.kind != ChainKind::Short {
        return Err(LsMixError::KindMismatch { expected: ChainKind::Short, actual: short.kind });
    }
    let by_id: HashMap<&str, &ReasoningInstance> =
        long.instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut reports = Vec::with_capacity(short.instances.len());
    for short_instance in &short.instances {
        let long_instance = by_id
            .get(short_instance.id.as_str())
            .ok_or_else(|| LsMixError::MissingCounterpart(short_instance.id.clone()))?;
        reports.push(validate_pair_with(long_instance, short_instance, thresholds, lexicons)?);
    }
    let summary = summarize_reports(&reports);
    Ok((reports, summary))
}

/// Render per-pair reports plus a trailing summary record as JSONL.
pub fn report_jsonl(reports: &[ValidationReport], summary: &ValidationSummary) -> String {
    let mut out = String::new();
    for report in reports {
        out.push_str(&serde_json::to_string(report).expect("reports serialize"));
        out.push('\n');
    }
    out.push_str(
        &serde_json::to_string(&serde_json::json!({ "summary": summary }))
            .expect("summary serializes"),
    );
    out.push('\n');
    out
}

/// Strict-mode gate: keep only short instances whose report passed.
pub fn filter_passing(short: &Dataset, reports: &[ValidationReport]) -> Dataset {
    let passing: BTreeSet<&str> = reports
        .iter()
        .filter(|r| r.verdict == Verdict::Pass)
        .map(|r| r.id.as_str())
        .collect();
    Dataset {
        name: short.name.clone(),
        kind: short.kind,
        instances: short
            .instances
            .iter()
            .filter(|i| passing.contains(i.id.as_str()))
            .cloned()
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn instance(id: &str, kind: ChainKind, trajectory: &str) -> ReasoningInstance {
        ReasoningInstance {
            id: id.to_string(),
            question: "Q".to_string(),
            trajectory: trajectory.to_string(),
            answer: "42".to_string(),
            chain_kind: kind,
            source: "unit".to_string(),
            extra: Default::default(),
        }
    }

    const LONG_FIXTURE: &str = "First, compute the sum 12 + 30 = 42 carefully, writing every intermediate value down and checking the arithmetic against the original statement of the problem once more.\n\nWait, I should verify the carry digits again because careless addition is the single most common source of silly errors in an exercise of this kind.\n\nTherefore the final answer is 42.";

    const SHORT_FIXTURE: &str =
        "First, 12 + 30 = 42, checked.\n\nWait, carries verified.\n\nTherefore the final answer is 42.";

    #[test]
    fn ratio_is_character_division() {
        assert_eq!(compression_ratio("abcd", "abcd").unwrap(), 1.0);
        let long = "x".repeat(2000);
        let short = "y".repeat(500);
        assert_eq!(compression_ratio(&long, &short).unwrap(), 0.25);
        assert!(compression_ratio("", "x").is_err());
    }

    #[test]
    fn corpus_level_ratio_matches_reported_averages() {
        // Rendered-length means: the mixture average implies the short-side
        // mean, and the implied corpus-level compression is about 1/6.
        let implied_short = (17_406.11f64 * 1984.0 - 29_667.49 * 1000.0) / 984.0;
        assert!((implied_short - 4_945.357_967_479_676_5).abs() < 1e-9);
        let corpus_ratio = implied_short / 29_667.49;
        assert!((corpus_ratio - 0.166_692_833_383_601_9).abs() < 1e-12);

        // The per-pair operation agrees with that arithmetic at char scale.
        let long = "x".repeat(29_667);
        let short = "y".repeat(4_945);
        let ratio = compression_ratio(&long, &short).unwrap();
        assert!((ratio - corpus_ratio).abs() < 1e-3);
    }

    #[test]
    fn identity_scores_perfectly() {
        let scores = structure_scores(LONG_FIXTURE, LONG_FIXTURE);
        assert_eq!(scores.fidelity, 1.0);
        assert_eq!(scores.retention, 1.0);
    }

    #[test]
    fn identity_retention_survives_shuffled_first_occurrences() {
        // Step-initial values whose first appearances happen in a different
        // order than their step-initial appearances: naive deduplication
        // would break the identity calibration here.
        let tricky = "So 8 then 3 here.\n\nNext, 5 go.\n\nNext, 3 end.";
        let scores = structure_scores(tricky, tricky);
        assert_eq!(scores.retention, 1.0);
        assert_eq!(scores.fidelity, 1.0);
    }

    #[test]
    fn fabricated_anchor_dilutes_fidelity() {
        let long = "Compute 101. Then 102. Then 103. Then 104. Then 105. Then 106. Then 107. Then 108. Then 109.";
        assert_eq!(cot::anchor_sequence(long).len(), 9);
        let short = "101 102 103 104 105 999 106 107 108 109";
        let scores = structure_scores(long, short);
        assert!((scores.fidelity - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_short_is_vacuously_faithful_but_retains_nothing() {
        let long = "Step 1: 10. Step 2: 20. Step 3: 30. Step 4: 40. Step 5: 50.";
        let scores = structure_scores(long, "");
        assert_eq!(scores.fidelity, 1.0);
        assert_eq!(scores.retention, 0.0);
    }

    #[test]
    fn retention_counts_surviving_step_leads() {
        let long = "First, 10 + 1 = 11.\n\nNext, 20 + 2 = 22.";
        let short = "10 then 11.";
        let scores = structure_scores(long, short);
        assert!((scores.retention - 0.5).abs() < 1e-12);
    }

    #[test]
    fn anchor_free_long_side_gives_vacuous_retention_and_zero_fidelity() {
        let scores = structure_scores("no numbers at all here", "but 7 here");
        assert_eq!(scores.retention, 1.0);
        assert_eq!(scores.fidelity, 0.0);
    }

    #[test]
    fn identity_pair_fails_only_the_upper_ratio_bound() {
        let long = instance("p", ChainKind::Long, LONG_FIXTURE);
        let short = instance("p", ChainKind::Short, LONG_FIXTURE);
        let report = validate_pair(&long, &short, &Thresholds::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        assert_eq!(report.failures, vec![RULE_RATIO_ABOVE.to_string()]);
        assert_eq!(report.ratio, 1.0);
    }

    #[test]
    fn empty_short_fails_exactly_ratio_and_retention() {
        let long = instance("p", ChainKind::Long, LONG_FIXTURE);
        let short = instance("p", ChainKind::Short, "");
        let report = validate_pair(&long, &short, &Thresholds::default()).unwrap();
        assert_eq!(
            report.failures,
            vec![RULE_RATIO_BELOW.to_string(), RULE_RETENTION.to_string()]
        );
    }

    #[test]
    fn faithful_condensation_passes() {
        let long = instance("p", ChainKind::Long, LONG_FIXTURE);
        let short = instance("p", ChainKind::Short, SHORT_FIXTURE);
        let report = validate_pair(&long, &short, &Thresholds::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Pass, "failures: {:?}", report.failures);
        assert!(report.failures.is_empty());
        assert!(
            report.ratio > 0.15 && report.ratio < 0.45,
            "fixture should compress to roughly 30%, got {}",
            report.ratio
        );
    }

    #[test]
    fn dropping_the_final_answer_is_flagged() {
        let long = instance("p", ChainKind::Long, LONG_FIXTURE);
        // Keeps the arithmetic anchors but loses the conclusion's 42? No —
        // 42 appears mid-stream too, so drop the conclusion value entirely.
        let long_distinct = instance(
            "p",
            ChainKind::Long,
            "First, compute 12 + 30 and note the partial sums along the way, checking each digit column twice so that nothing slips through.\n\nTherefore the final answer is 42.",
        );
        let short = instance("p", ChainKind::Short, "First, 12 + 30. Done.");
        let report = validate_pair(&long_distinct, &short, &Thresholds::default()).unwrap();
        assert!(report.failures.contains(&RULE_FINAL_ANSWER.to_string()));

        // Same rewrite with the answer kept does not trip the rule.
        let short_ok = instance("p", ChainKind::Short, "First, 12 + 30 = 42.");
        let report = validate_pair(&long_distinct, &short_ok, &Thresholds::default()).unwrap();
        assert!(!report.failures.contains(&RULE_FINAL_ANSWER.to_string()));
        let _ = long;
    }

    #[test]
    fn mismatched_ids_and_kinds_are_rejected() {
        let long = instance("a", ChainKind::Long, "10. so the answer is 10.");
        let short_other = instance("b", ChainKind::Short, "10");
        assert!(matches!(
            validate_pair(&long, &short_other, &Thresholds::default()),
            Err(LsMixError::IdMismatch { .. })
        ));
        let short_wrong_kind = instance("a", ChainKind::Long, "10");
        assert!(matches!(
            validate_pair(&long, &short_wrong_kind, &Thresholds::default()),
            Err(LsMixError::KindMismatch { .. })
        ));
    }

    #[test]
    fn threshold_validation_rejects_inverted_bounds() {
        let bad = Thresholds { ratio_bounds: (0.9, 0.2), ..Thresholds::default() };
        assert!(bad.validate().is_err());
        let bad = Thresholds { min_fidelity: 1.5, ..Thresholds::default() };
        assert!(bad.validate().is_err());
        assert!(Thresholds::default().validate().is_ok());
    }

    #[test]
    fn dataset_validation_pairs_by_id_and_summarizes() {
        let long = Dataset {
            name: "l".to_string(),
            kind: ChainKind::Long,
            instances: vec![
                instance("a", ChainKind::Long, LONG_FIXTURE),
                instance("b", ChainKind::Long, LONG_FIXTURE),
            ],
        };
        let short = Dataset {
            name: "s".to_string(),
            kind: ChainKind::Short,
            instances: vec![
                instance("b", ChainKind::Short, SHORT_FIXTURE),
                instance("a", ChainKind::Short, LONG_FIXTURE), // identity → fails ratio
            ],
        };
        let (reports, summary) =
            validate_datasets(&long, &short, &Thresholds::default(), &MarkerLexicons::default())
                .unwrap();
        assert_eq!(reports.len(), 2);
        // Short-dataset order, not long-dataset order.
        assert_eq!(reports[0].id, "b");
        assert_eq!(reports[1].id, "a");
        assert_eq!(summary.pairs, 2);
        assert_eq!(summary.passed, 1);
        assert_eq!(summary.pass_rate, 0.5);
        let expected_mean = (reports[0].ratio + reports[1].ratio) / 2.0;
        assert!((summary.mean_ratio - expected_mean).abs() < 1e-12);

        let filtered = filter_passing(&short, &reports);
        assert_eq!(filtered.instances.len(), 1);
        assert_eq!(filtered.instances[0].id, "b");
    }

    #[test]
    fn missing_counterpart_is_an_error() {
        let long = Dataset { name: "l".to_string(), kind: ChainKind::Long, instances: vec![] };
        let short = Dataset {
            name: "s".to_string(),
            kind: ChainKind::Short,
            instances: vec![instance("ghost", ChainKind::Short, "x")],
        };
        assert!(matches!(
            validate_datasets(&long, &short, &Thresholds::default(), &MarkerLexicons::default()),
            Err(LsMixError::MissingCounterpart(id)) if id == "ghost"
        ));
    }

    #[test]
    fn report_file_has_one_line_per_pair_plus_summary() {
        let long = instance("a", ChainKind::Long, LONG_FIXTURE);
        let short = instance("a", ChainKind::Short, SHORT_FIXTURE);
        let report = validate_pair(&long, &short, &Thresholds::default()).unwrap();
        let summary = summarize_reports(std::slice::from_ref(&report));
        let text = report_jsonl(&[report], &summary);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["id"], "a");
        assert_eq!(first["verdict"], "pass");
        let last: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(last["summary"]["pairs"], 1);
        assert_eq!(last["summary"]["pass_rate"], 1.0);
    }

    #[test]
    fn empty_report_batch_summarizes_to_zeros() {
        let summary = summarize_reports(&[]);
        assert_eq!(summary.pairs, 0);
        assert_eq!(summary.pass_rate, 0.0);
    }

    #[test]
    fn lcs_matches_brute_force_on_small_sequences() {
        fn brute(a: &[String], b: &[String]) -> usize {
            // Try every subsequence of `a`, longest first.
            let n = a.len();
            let mut best = 0;
            for mask in 0..(1u32 << n) {
                let picked: Vec<&String> =
                    (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
                if picked.len() <= best {
                    continue;
                }
                let mut it = b.iter();
                if picked.iter().all(|p| it.any(|x| &x == p)) {
                    best = picked.len();
                }
            }
            best
        }
        let vocab = ["x", "y", "z"];
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..200 {
            let len_a = (next() % 8) as usize;
            let len_b = (next() % 8) as usize;
            let a: Vec<String> =
                (0..len_a).map(|_| vocab[(next() % 3) as usize].to_string()).collect();
            let b: Vec<String> =
                (0..len_b).map(|_| vocab[(next() % 3) as usize].to_string()).collect();
            assert_eq!(lcs_len(&a, &b), brute(&a, &b), "a={a:?} b={b:?}");
        }
    }

    proptest! {
        /// Appending a token absent from the long side never raises fidelity.
        #[test]
        fn fabrication_never_raises_fidelity(
            long_nums in proptest::collection::vec(1u32..500, 0..12),
            short_nums in proptest::collection::vec(1u32..500, 0..12),
        ) {
            let render = |nums: &[u32]| {
                nums.iter().map(|n| format!("{n}.")).collect::<Vec<_>>().join(" ")
            };
            let long = render(&long_nums);
            let short = render(&short_nums);
            let before = structure_scores(&long, &short).fidelity;
            // 77777 is outside the generated range, so it is always foreign.
            let short_padded = format!("{short} 77777.");
            let after = structure_scores(&long, &short_padded).fidelity;
            prop_assert!(after <= before + 1e-12, "before={before} after={after}");
        }

        /// A verdict is Pass exactly when the failure list is empty, and
        /// the same pair always produces the identical report.
        #[test]
        fn verdict_matches_failures_and_is_deterministic(
            long_nums in proptest::collection::vec(1u32..100, 1..10),
            short_nums in proptest::collection::vec(1u32..100, 0..10),
        ) {
            let render = |nums: &[u32]| {
                nums.iter().map(|n| format!("value {n}.")).collect::<Vec<_>>().join(" ")
            };
            let long = instance("p", ChainKind::Long, &render(&long_nums));
            let short = instance("p", ChainKind::Short, &render(&short_nums));
            let a = validate_pair(&long, &short, &Thresholds::default()).unwrap();
            let b = validate_pair(&long, &short, &Thresholds::default()).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.verdict == Verdict::Pass, a.failures.is_empty());
        }

        /// Scores always land in [0, 1].
        #[test]
        fn scores_are_fractions(
            long in "[a-z0-9 .=+]{0,120}",
            short in "[a-z0-9 .=+]{0,120}",
        ) {
            let s = structure_scores(&long, &short);
            prop_assert!((0.0..=1.0).contains(&s.fidelity));
            prop_assert!((0.0..=1.0).contains(&s.retention));
        }
    }
}
