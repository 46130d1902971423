//! Canonical reasoning corpus: JSONL load/save, profiling, word frequencies.
//!
//! On disk a dataset is UTF-8 JSONL with LF line endings, one record per line,
//! keys emitted in the order `id`, `question`, `trajectory`, `answer`,
//! `chain_kind`, `source`. Unknown keys are preserved across a load/save round
//! trip (re-emitted after the fixed six, in lexicographic order).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::num::NonZeroU64;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LsMixError, Result};
use crate::mixture::{self, ThinkingMode};

/// Which side of the long/short pairing a trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Long,
    Short,
}

/// One question with a reasoning trajectory and its final answer.
///
/// The trajectory never contains the literal `<think>`/`</think>` tags; those
/// are added at render time (see [`crate::mixture::build_target`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningInstance {
    pub id: String,
    pub question: String,
    pub trajectory: String,
    pub answer: String,
    pub chain_kind: ChainKind,
    #[serde(default)]
    pub source: String,
    /// Keys beyond the fixed schema, preserved verbatim on round trip.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// An ordered collection of instances that all share one [`ChainKind`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: ChainKind,
    pub instances: Vec<ReasoningInstance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Loose on-disk shape: `chain_kind` and `source` may be absent in inputs.
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    question: String,
    trajectory: String,
    answer: String,
    #[serde(default)]
    chain_kind: Option<ChainKind>,
    #[serde(default)]
    source: String,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Load a JSONL dataset, assigning (or checking) `kind` for every record.
///
/// Every record must carry a non-empty `id`, `question`, `trajectory` and
/// `answer`; ids must be unique within the file; trajectories must not contain
/// the reserved think tags. Errors name the offending 1-based line. An empty
/// file loads as an empty dataset. The dataset name is the file stem.
pub fn load_dataset(path: &Path, kind: ChainKind) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| LsMixError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            // Only the conventional trailing newline may produce an empty
            // segment; blank interior lines are malformed.
            if idx + 1 != text.split('\n').count() {
                return record_err(path, lineno, "blank line inside dataset");
            }
            continue;
        }
        if line.ends_with('\r') {
            return record_err(path, lineno, "CRLF line ending; datasets are LF-only");
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|source| LsMixError::Jsonl {
            path: path.to_path_buf(),
            line: lineno,
            source,
        })?;
        for (field, value) in [
            ("id", &raw.id),
            ("question", &raw.question),
            ("trajectory", &raw.trajectory),
            ("answer", &raw.answer),
        ] {
            if value.is_empty() {
                return record_err(path, lineno, format!("field \"{field}\" is empty"));
            }
        }
        if raw.trajectory.contains(THINK_OPEN) || raw.trajectory.contains(THINK_CLOSE) {
            return record_err(path, lineno, "trajectory contains reserved think tags");
        }
        if let Some(k) = raw.chain_kind {
            if k != kind {
                return record_err(
                    path,
                    lineno,
                    format!("chain_kind {k:?} does not match expected {kind:?}"),
                );
            }
        }
        if !seen.insert(raw.id.clone()) {
            return record_err(path, lineno, format!("duplicate id \"{}\"", raw.id));
        }
        instances.push(ReasoningInstance {
            id: raw.id,
            question: raw.question,
            trajectory: raw.trajectory,
            answer: raw.answer,
            chain_kind: kind,
            source: raw.source,
            extra: raw.extra,
        });
    }

    Ok(Dataset { name, kind, instances })
}

fn record_err<T>(path: &Path, line: usize, reason: impl Into<String>) -> Result<T> {
    Err(LsMixError::Record { path: path.to_path_buf(), line, reason: reason.into() })
}

/// Serialize a dataset back to JSONL (see module docs for the byte format).
///
/// `load_dataset(save_dataset(d)) == d`; a 0-instance dataset writes an empty
/// file.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_jsonl(dataset)).map_err(|e| LsMixError::io(path, e))
}

/// The exact bytes `save_dataset` writes.
pub fn dataset_to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for inst in &dataset.instances {
        // ReasoningInstance's field order is the on-disk key order.
        out.push_str(&serde_json::to_string(inst).expect("instances always serialize"));
        out.push('\n');
    }
    out
}

/// Length and shape statistics for one dataset.
///
/// Character figures count Unicode scalar values; the `*_tokens_est` figures
/// divide them by the default 4.0 chars-per-token estimate. Rendered lengths
/// use the export rendering: mode prompt + question + think-wrapped target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub num_rows: u64,
    pub avg_trajectory_length: f64,
    pub avg_rendered_length: f64,
    pub avg_trajectory_tokens_est: f64,
    pub avg_rendered_tokens_est: f64,
    pub bucket_width: u64,
    /// `(bucket_lower_bound, count)` over rendered lengths; buckets are
    /// contiguous from 0 through the maximum rendered length.
    pub length_histogram: Vec<(u64, u64)>,
}

/// Chars-per-token divisor used wherever no explicit figure is configured.
pub const DEFAULT_CHARS_PER_TOKEN: f64 = 4.0;

/// Profile a dataset, measuring rendered lengths under `render_mode`.
///
/// Histogram counts sum to `num_rows`; an empty dataset profiles to zeros and
/// an empty histogram.
pub fn profile(dataset: &Dataset, render_mode: ThinkingMode, bucket_width: NonZeroU64) -> DatasetProfile {
    let width = bucket_width.get();
    let n = dataset.instances.len() as u64;
    if n == 0 {
        return DatasetProfile {
            num_rows: 0,
            avg_trajectory_length: 0.0,
            avg_rendered_length: 0.0,
            avg_trajectory_tokens_est: 0.0,
            avg_rendered_tokens_est: 0.0,
            bucket_width: width,
            length_histogram: Vec::new(),
        };
    }

    let mut traj_total = 0u64;
    let mut rendered = Vec::with_capacity(dataset.instances.len());
    for inst in &dataset.instances {
        traj_total += inst.trajectory.chars().count() as u64;
        rendered.push(mixture::rendered_length(inst, render_mode));
    }
    let rendered_total: u64 = rendered.iter().sum();

    let max = *rendered.iter().max().expect("non-empty");
    let mut histogram: Vec<(u64, u64)> =
        (0..=max / width).map(|i| (i * width, 0)).collect();
    for len in &rendered {
        histogram[(len / width) as usize].1 += 1;
    }

    let avg_trajectory_length = traj_total as f64 / n as f64;
    let avg_rendered_length = rendered_total as f64 / n as f64;
    DatasetProfile {
        num_rows: n,
        avg_trajectory_length,
        avg_rendered_length,
        avg_trajectory_tokens_est: avg_trajectory_length / DEFAULT_CHARS_PER_TOKEN,
        avg_rendered_tokens_est: avg_rendered_length / DEFAULT_CHARS_PER_TOKEN,
        bucket_width: width,
        length_histogram: histogram,
    }
}

/// Word counts over a dataset's trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    /// `(word, count)` sorted by count descending, ties lexicographic; at most
    /// `top_k` entries, every count >= 1.
    pub entries: Vec<(String, u64)>,
    /// All tokens counted after stopword removal (not just the top-k share).
    pub total_tokens: u64,
}

impl FrequencyTable {
    pub fn count(&self, word: &str) -> u64 {
        self.entries
            .iter()
            .find(|(w, _)| w == word)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    }
}

/// Count words across all trajectories: tokens are maximal alphanumeric runs,
/// lowercased; `stopwords` are dropped before counting.
pub fn word_frequencies(dataset: &Dataset, top_k: usize, stopwords: &HashSet<String>) -> FrequencyTable {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut total = 0u64;
    for inst in &dataset.instances {
        for token in tokenize(&inst.trajectory) {
            if stopwords.contains(&token) {
                continue;
            }
            total += 1;
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(top_k);
    FrequencyTable { entries, total_tokens: total }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// How one word's count moved between a long-chain and a short-chain table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDelta {
    pub word: String,
    pub long_count: u64,
    pub short_count: u64,
    /// `short_count - long_count`: negative means the word receded after
    /// rewriting.
    pub delta: i64,
}

/// Per-word deltas over the union of both tables' entries, most-receded first
/// (delta ascending, ties lexicographic).
pub fn frequency_delta(long: &FrequencyTable, short: &FrequencyTable) -> Vec<FrequencyDelta> {
    let mut words: Vec<&String> = long.entries.iter().chain(&short.entries).map(|(w, _)| w).collect();
    words.sort();
    words.dedup();
    let mut out: Vec<FrequencyDelta> = words
        .into_iter()
        .map(|w| {
            let l = long.count(w);
            let s = short.count(w);
            FrequencyDelta {
                word: w.clone(),
                long_count: l,
                short_count: s,
                delta: s as i64 - l as i64,
            }
        })
        .collect();
    out.sort_by(|a, b| a.delta.cmp(&b.delta).then_with(|| a.word.cmp(&b.word)));
    out
}
