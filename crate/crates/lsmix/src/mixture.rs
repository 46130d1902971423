//! Mixture construction: render mode-conditioned training records with
//! `<think>`-wrapped targets, merge the long and short datasets under a
//! seeded deterministic shuffle, export trainer-ready files with a dataset
//! card, convert epoch budgets, and audit the mixture loss from per-token
//! log-probabilities.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::{ChatClient, ChatMessage, GenerationSettings};
use crate::corpus::{ChainKind, Dataset, ReasoningInstance};
use crate::error::{LsMixError, Result};

/// Env var that, when set, stamps exported dataset cards with a build time.
/// Left unset, cards omit the timestamp so re-exports stay byte-identical.
pub const BUILD_TIMESTAMP_ENV: &str = "LSMIX_BUILD_TIMESTAMP";

/// Instruction for the long-chain (detailed) training records.
pub const DETAILED_PROMPT: &str = "Answer the problem with a detailed thinking process:";
/// Instruction for the short-chain (brief) training records.
pub const BRIEF_PROMPT: &str = "Answer the problem with a brief thinking process:";
/// Inference-only instruction steering between the two trained modes.
/// The wording (including the article "a") is pinned; do not "fix" it.
pub const BALANCED_PROMPT: &str =
    "Answer the problem with a appropriate (between detailed and brief) thinking process:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingMode {
    Detailed,
    Brief,
    Balanced,
}

impl ThinkingMode {
    pub fn slug(self) -> &'static str {
        match self {
            ThinkingMode::Detailed => "detailed",
            ThinkingMode::Brief => "brief",
            ThinkingMode::Balanced => "balanced",
        }
    }

    /// The mode a chain kind trains under. `Balanced` has no chain kind: it
    /// exists only as an inference-time prompt.
    pub fn for_kind(kind: ChainKind) -> ThinkingMode {
        match kind {
            ChainKind::Long => ThinkingMode::Detailed,
            ChainKind::Short => ThinkingMode::Brief,
        }
    }
}

impl std::str::FromStr for ThinkingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "detailed" => Ok(ThinkingMode::Detailed),
            "brief" => Ok(ThinkingMode::Brief),
            "balanced" => Ok(ThinkingMode::Balanced),
            other => Err(format!(
                "unknown thinking mode \"{other}\" (expected detailed, brief, or balanced)"
            )),
        }
    }
}

pub fn render_mode_prompt(mode: ThinkingMode) -> &'static str {
    match mode {
        ThinkingMode::Detailed => DETAILED_PROMPT,
        ThinkingMode::Brief => BRIEF_PROMPT,
        ThinkingMode::Balanced => BALANCED_PROMPT,
    }
}

/// The supervised target: the trajectory wrapped in thinking delimiters,
/// followed immediately by the answer, with nothing inserted.
pub fn build_target(instance: &ReasoningInstance) -> String {
    format!("<think>{}</think>{}", instance.trajectory, instance.answer)
}

/// Character count of instruction + question + target for an instance
/// rendered under `mode`, as it would appear in a training record.
pub fn rendered_length(instance: &ReasoningInstance, mode: ThinkingMode) -> u64 {
    (render_mode_prompt(mode).chars().count()
        + instance.question.chars().count()
        + build_target(instance).chars().count()) as u64
}

/// One supervised fine-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub mode: ThinkingMode,
    /// Rendered mode prompt.
    pub instruction: String,
    /// The question.
    pub input: String,
    /// `<think>`-wrapped trajectory plus answer.
    pub output: String,
    /// Characters across instruction + input + output.
    pub rendered_length: u64,
}

/// Render one instance as a training record, enforcing the mode pairing:
/// long chains train the detailed mode, short chains the brief mode, and the
/// balanced mode is never trained.
pub fn build_training_record(
    instance: &ReasoningInstance,
    mode: ThinkingMode,
) -> Result<TrainingRecord> {
    let pairs = matches!(
        (mode, instance.chain_kind),
        (ThinkingMode::Detailed, ChainKind::Long) | (ThinkingMode::Brief, ChainKind::Short)
    );
    if !pairs {
        return Err(LsMixError::ModeKindMismatch { mode, kind: instance.chain_kind });
    }
    let instruction = render_mode_prompt(mode).to_string();
    let output = build_target(instance);
    let rendered_length = (instruction.chars().count()
        + instance.question.chars().count()
        + output.chars().count()) as u64;
    Ok(TrainingRecord {
        id: instance.id.clone(),
        mode,
        instruction,
        input: instance.question.clone(),
        output,
        rendered_length,
    })
}

// ---- deterministic shuffling -------------------------------------------------

/// SplitMix64: a tiny, widely specified 64-bit generator (Steele, Lea &
/// Flood's `splittable` update as published with Java's SplittableRandom).
/// State advances by the golden-gamma constant 0x9E3779B97F4A7C15; output is
/// the finalizer z → (z ^ z>>30)·0xBF58476D1CE4E5B9 → (z ^ z>>27)·
/// 0x94D049BB133111EB → z ^ z>>31. Pinned by algorithm, not by library, so
/// the same seed reproduces the same mixture order in any language.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, n)` by rejection: discard raw values below
    /// `2^64 mod n` so the remainder is exactly uniform.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires a positive bound");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }

    /// Fisher–Yates: walk `i` from the last index down to 1, swapping element
    /// `i` with a uniformly drawn `j ≤ i`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

// ---- the mixture ---------------------------------------------------------------

/// Composition counts carried on exports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureManifest {
    /// Number of detailed (long-chain) records.
    pub detailed: usize,
    /// Number of brief (short-chain) records.
    pub brief: usize,
    /// Names of the source datasets, long first.
    pub sources: Vec<String>,
    /// Optional build timestamp (from `LSMIX_BUILD_TIMESTAMP`); omitted when
    /// unset so identical inputs re-export byte-identically.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub built_at: Option<String>,
}

/// The shuffled union of the long and short training records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDataset {
    pub records: Vec<TrainingRecord>,
    pub seed: u64,
    pub manifest: MixtureManifest,
}

/// Merge the two datasets into one randomly ordered training set.
///
/// Long records (detailed mode) are concatenated with short records (brief
/// mode) and permuted by a Fisher–Yates shuffle driven by [`SplitMix64`]
/// seeded with `seed`: same inputs and seed give the same order on any
/// platform. Ids may repeat across kinds; uniqueness is per (id, mode).
pub fn build_mixture(d_long: &Dataset, d_short: &Dataset, seed: u64) -> Result<MixedDataset> {
    if d_long.kind != ChainKind::Long {
        return Err(LsMixError::KindMismatch { expected: ChainKind::Long, actual: d_long.kind });
    }
    if d_short.kind != ChainKind::Short {
        return Err(LsMixError::KindMismatch { expected: ChainKind::Short, actual: d_short.kind });
    }
    let mut records = Vec::with_capacity(d_long.len() + d_short.len());
    for instance in &d_long.instances {
        records.push(build_training_record(instance, ThinkingMode::Detailed)?);
    }
    for instance in &d_short.instances {
        records.push(build_training_record(instance, ThinkingMode::Brief)?);
    }
    SplitMix64::new(seed).shuffle(&mut records);
    let manifest = MixtureManifest {
        detailed: d_long.len(),
        brief: d_short.len(),
        sources: vec![d_long.name.clone(), d_short.name.clone()],
        built_at: std::env::var(BUILD_TIMESTAMP_ENV).ok(),
    };
    Ok(MixedDataset { records, seed, manifest })
}

// ---- export --------------------------------------------------------------------

#[derive(Serialize)]
struct ExportRecord<'a> {
    instruction: &'a str,
    input: &'a str,
    output: &'a str,
}

/// Trainer hyperparameters recommended on every dataset card. Values are
/// carried as strings verbatim (e.g. "1e-5" must not become "0.00001").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendedTraining {
    pub cutoff_len: String,
    pub learning_rate: String,
    pub lr_scheduler_type: String,
    pub warmup_ratio: String,
    pub bf16: String,
    pub optimizer: String,
    pub weight_decay: String,
}

impl Default for RecommendedTraining {
    fn default() -> Self {
        RecommendedTraining {
            cutoff_len: "4096".to_string(),
            learning_rate: "1e-5".to_string(),
            lr_scheduler_type: "cosine".to_string(),
            warmup_ratio: "0.05".to_string(),
            bf16: "true".to_string(),
            optimizer: "AdamW".to_string(),
            weight_decay: "1e-4".to_string(),
        }
    }
}

/// Sidecar metadata written next to every exported training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCard {
    pub manifest: MixtureManifest,
    /// Shuffle seed; absent for unshuffled single-dataset exports.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub recommended_training: RecommendedTraining,
}

/// The training file body: one `{"instruction","input","output"}` object per
/// record, in mixture order.
pub fn training_jsonl(records: &[TrainingRecord]) -> String {
    let mut out = String::new();
    for record in records {
        let line = ExportRecord {
            instruction: &record.instruction,
            input: &record.input,
            output: &record.output,
        };
        out.push_str(&serde_json::to_string(&line).expect("export records serialize"));
        out.push('\n');
    }
    out
}

pub fn dataset_card(mixed: &MixedDataset) -> DatasetCard {
    DatasetCard {
        manifest: mixed.manifest.clone(),
        seed: Some(mixed.seed),
        recommended_training: RecommendedTraining::default(),
    }
}

pub fn card_json(card: &DatasetCard) -> String {
    let mut out = serde_json::to_string_pretty(card).expect("cards serialize");
    out.push('\n');
    out
}

/// The card path that belongs to a training file: `train.jsonl` →
/// `train.card.json`.
pub fn card_path(training_path: &Path) -> std::path::PathBuf {
    training_path.with_extension("card.json")
}

/// Write the training file and its sidecar card.
pub fn export_training(mixed: &MixedDataset, path: &Path) -> Result<()> {
    std::fs::write(path, training_jsonl(&mixed.records)).map_err(|e| LsMixError::io(path, e))?;
    let card_file = card_path(path);
    std::fs::write(&card_file, card_json(&dataset_card(mixed)))
        .map_err(|e| LsMixError::io(card_file.as_path(), e))?;
    Ok(())
}

/// The records and card for a single dataset rendered alone (no mixing, no
/// shuffle, source order) — the single-mode training ablation.
pub fn single_training_parts(dataset: &Dataset) -> Result<(Vec<TrainingRecord>, DatasetCard)> {
    let mode = ThinkingMode::for_kind(dataset.kind);
    let records: Vec<TrainingRecord> = dataset
        .instances
        .iter()
        .map(|instance| build_training_record(instance, mode))
        .collect::<Result<_>>()?;
    let (detailed, brief) = match mode {
        ThinkingMode::Detailed => (records.len(), 0),
        _ => (0, records.len()),
    };
    let card = DatasetCard {
        manifest: MixtureManifest {
            detailed,
            brief,
            sources: vec![dataset.name.clone()],
            built_at: std::env::var(BUILD_TIMESTAMP_ENV).ok(),
        },
        seed: None,
        recommended_training: RecommendedTraining::default(),
    };
    Ok((records, card))
}

/// Render a single dataset (no mixing, no shuffle, source order) for
/// single-mode training ablations, with its own card.
pub fn export_single(dataset: &Dataset, path: &Path) -> Result<()> {
    let (records, card) = single_training_parts(dataset)?;
    std::fs::write(path, training_jsonl(&records)).map_err(|e| LsMixError::io(path, e))?;
    let card_file = card_path(path);
    std::fs::write(&card_file, card_json(&card)).map_err(|e| LsMixError::io(card_file.as_path(), e))?;
    Ok(())
}

// ---- epoch equivalence ------------------------------------------------------

/// Epoch budget for the mixture that matches a long-only budget in total
/// samples seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochEquivalence {
    /// Full-precision fractional epochs.
    pub epochs: f64,
    pub floor: u64,
    pub ceil: u64,
}

/// Solve `n_long × size_long == n_mix × size_mix` for `n_mix`.
pub fn epoch_equivalence(
    n_long_epochs: f64,
    size_long: u64,
    size_mix: u64,
) -> Result<EpochEquivalence> {
    if !(n_long_epochs.is_finite() && n_long_epochs > 0.0) {
        return Err(LsMixError::Config(format!(
            "long-epoch count {n_long_epochs} must be positive"
        )));
    }
    if size_mix == 0 {
        return Err(LsMixError::Config("mixture size must be positive".to_string()));
    }
    let epochs = n_long_epochs * size_long as f64 / size_mix as f64;
    Ok(EpochEquivalence { epochs, floor: epochs.floor() as u64, ceil: epochs.ceil() as u64 })
}

// ---- loss audit ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLoss {
    pub id: String,
    pub mode: ThinkingMode,
    /// Negative sum of the record's target-token log-probabilities (nats).
    pub loss: f64,
}

/// The two-term training objective, measured from supplied logprobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Summed loss over detailed (long-chain) records.
    pub loss_long: f64,
    /// Summed loss over brief (short-chain) records.
    pub loss_short: f64,
    /// Exactly `loss_long + loss_short`.
    pub total: f64,
    pub per_record: Vec<RecordLoss>,
}

/// Sum each record's negated target-token logprobs, split by mode.
///
/// The map is keyed by (id, mode) and must cover every record; each logprob
/// must be finite and ≤ 0. Prompt tokens never enter the sum — callers supply
/// target-token scores only.
pub fn audit_loss(
    records: &[TrainingRecord],
    logprobs: &HashMap<(String, ThinkingMode), Vec<f64>>,
) -> Result<LossReport> {
    let mut loss_long = 0.0f64;
    let mut loss_short = 0.0f64;
    let mut per_record = Vec::with_capacity(records.len());
    for record in records {
        let key = (record.id.clone(), record.mode);
        let lps = logprobs
            .get(&key)
            .ok_or_else(|| LsMixError::MissingLogprobs { id: record.id.clone(), mode: record.mode })?;
        let mut loss = 0.0f64;
        for &lp in lps {
            if !lp.is_finite() || lp > 0.0 {
                return Err(LsMixError::InvalidLogprob { id: record.id.clone(), value: lp });
            }
            loss -= lp;
        }
        match record.mode {
            ThinkingMode::Detailed => loss_long += loss,
            ThinkingMode::Brief => loss_short += loss,
            ThinkingMode::Balanced => {
                return Err(LsMixError::Config(format!(
                    "record {} uses the balanced mode, which is never trained",
                    record.id
                )))
            }
        }
        per_record.push(RecordLoss { id: record.id.clone(), mode: record.mode, loss });
    }
    Ok(LossReport { loss_long, loss_short, total: loss_long + loss_short, per_record })
}

/// Load a logprobs file: JSONL of `{"id", "mode", "logprobs"}`.
pub fn load_logprobs(path: &Path) -> Result<HashMap<(String, ThinkingMode), Vec<f64>>> {
    #[derive(Deserialize)]
    struct Line {
        id: String,
        mode: ThinkingMode,
        logprobs: Vec<f64>,
    }
    let text = std::fs::read_to_string(path).map_err(|e| LsMixError::io(path, e))?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line).map_err(|source| LsMixError::Jsonl {
            path: path.to_path_buf(),
            line: lineno,
            source,
        })?;
        if map.insert((parsed.id.clone(), parsed.mode), parsed.logprobs).is_some() {
            return Err(LsMixError::Record {
                path: path.to_path_buf(),
                line: lineno,
                reason: format!(
                    "duplicate logprob entry for ({}, {})",
                    parsed.id,
                    parsed.mode.slug()
                ),
            });
        }
    }
    Ok(map)
}

/// Fetch target logprobs for every record from a scoring-capable client.
/// Requests are keyed `"{id}#{mode}"` so mocks can script per-record scores.
pub fn collect_target_logprobs(
    client: &dyn ChatClient,
    records: &[TrainingRecord],
    settings: &GenerationSettings,
) -> Result<HashMap<(String, ThinkingMode), Vec<f64>>> {
    let mut map = HashMap::new();
    for record in records {
        let key = format!("{}#{}", record.id, record.mode.slug());
        let messages = [ChatMessage::user(format!("{}\n{}", record.instruction, record.input))];
        let lps = client.target_logprobs(&key, &messages, &record.output, settings)?;
        map.insert((record.id.clone(), record.mode), lps);
    }
    Ok(map)
}
