//! Command-line entry point: `profile`, `rewrite`, `validate`, `mix`,
//! `export`, `audit-loss`, `eval`, `report`.
//!
//! Every subcommand writes its artifacts under the configured output
//! directory via a staging sink: files land atomically (write-to-temp, then
//! rename) only when the stage succeeds. When a stage fails, whatever it had
//! produced is written with a `.quarantine` suffix instead, so prior good
//! outputs are never overwritten by a failed run.
//!
//! Exit codes: 0 success, 1 stage failure (e.g. `--strict` validation),
//! 2 configuration errors, 3 i/o or malformed inputs, 4 chat-endpoint
//! exhaustion. Failures print one machine-readable JSON record on stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::client::{ChatClient, HttpChatClient, MockChatClient};
use crate::config::PipelineConfig;
use crate::corpus::{self, ChainKind};
use crate::error::{LsMixError, Result};
use crate::eval::{self, BenchmarkSummary, CrossBenchmarkSummary, LengthUnit, Metrics};
use crate::mixture::{self, ThinkingMode};
use crate::rewrite;
use crate::validate;

#[derive(Debug, Parser)]
#[command(
    name = "lsmix",
    version,
    about = "Build and evaluate long/short reasoning training mixtures",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    /// JSON config file; defaults apply when omitted. Any key can also be
    /// overridden by LSMIX_<KEY> environment variables; flags win over both.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<String>,

    /// Shuffle seed for the training mixture.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Thinking mode for evaluation: brief | detailed | balanced.
    #[arg(long, global = true, value_name = "MODE")]
    pub mode: Option<String>,

    /// Rewrite strategy: structure | direct | thinktwice.
    #[arg(long, global = true, value_name = "STRATEGY")]
    pub strategy: Option<String>,

    /// Script-fixture path for the offline mock client (replaces base_url).
    #[arg(long, global = true, value_name = "FIXTURE")]
    pub mock: Option<PathBuf>,

    /// Evaluation runs per benchmark.
    #[arg(long, global = true, value_name = "N")]
    pub runs: Option<u32>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure a dataset: lengths, rendered-length histogram, word
    /// frequencies; optionally diff word frequencies against a short-chain
    /// counterpart.
    Profile {
        /// Dataset to profile (JSONL).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Chain kind of the input: long | short.
        #[arg(long, value_name = "KIND", default_value = "long")]
        kind: String,
        /// Short-chain dataset to compare word frequencies against.
        #[arg(long, value_name = "PATH")]
        compare: Option<PathBuf>,
    },
    /// Compress every trajectory of a long-chain dataset through the chat
    /// endpoint, emitting the short dataset plus an exclusion report.
    Rewrite {
        /// Long-chain dataset to rewrite (JSONL).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Score short rewrites against their long sources (compression ratio,
    /// structural fidelity and retention, final-answer survival).
    Validate {
        /// Long-chain source dataset.
        #[arg(long, value_name = "PATH")]
        long: PathBuf,
        /// Short-chain rewritten dataset.
        #[arg(long, value_name = "PATH")]
        short: PathBuf,
        /// Also write the passing-only dataset and exit nonzero when any
        /// pair fails.
        #[arg(long)]
        strict: bool,
    },
    /// Merge long and short datasets into one seeded-shuffle training
    /// mixture and export it with its dataset card.
    Mix {
        /// Long-chain dataset.
        #[arg(long, value_name = "PATH")]
        long: PathBuf,
        /// Short-chain dataset.
        #[arg(long, value_name = "PATH")]
        short: PathBuf,
    },
    /// Export a single dataset (no mixing) as a training file with a card.
    Export {
        /// Dataset to export (JSONL).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Chain kind of the input: long | short.
        #[arg(long, value_name = "KIND", default_value = "long")]
        kind: String,
    },
    /// Recompute the mixture training loss from per-token logprobs, split
    /// by record kind.
    #[command(name = "audit-loss")]
    AuditLoss {
        /// Long-chain dataset.
        #[arg(long, value_name = "PATH")]
        long: PathBuf,
        /// Short-chain dataset.
        #[arg(long, value_name = "PATH")]
        short: PathBuf,
        /// JSONL of {id, mode, logprobs}; when omitted, logprobs are
        /// requested from the configured client.
        #[arg(long, value_name = "PATH")]
        logprobs: Option<PathBuf>,
    },
    /// Run benchmarks under the configured thinking mode and summarize
    /// accuracy and response lengths.
    Eval {
        /// Benchmark JSONL of {id, question, gold_answer, answer_kind};
        /// repeatable.
        #[arg(long = "benchmark", value_name = "PATH", required = true)]
        benchmarks: Vec<PathBuf>,
        /// Prior eval summary whose weighted mean length is the reduction
        /// baseline.
        #[arg(long, value_name = "PATH")]
        baseline: Option<PathBuf>,
    },
    /// Render an eval summary as a text table: per-benchmark accuracy and
    /// length, weighted average, reduction vs baseline.
    Report {
        /// Eval summary JSON (written by `eval`).
        #[arg(long, value_name = "PATH")]
        summary: PathBuf,
        /// Baseline eval summary to compute the reduction against.
        #[arg(long, value_name = "PATH")]
        baseline: Option<PathBuf>,
    },
    /// Anything else (training is intentionally not provided here).
    #[command(external_subcommand)]
    Other(Vec<OsString>),
}

impl Command {
    fn stage_name(&self) -> String {
        match self {
            Command::Profile { .. } => "profile".to_string(),
            Command::Rewrite { .. } => "rewrite".to_string(),
            Command::Validate { .. } => "validate".to_string(),
            Command::Mix { .. } => "mix".to_string(),
            Command::Export { .. } => "export".to_string(),
            Command::AuditLoss { .. } => "audit-loss".to_string(),
            Command::Eval { .. } => "eval".to_string(),
            Command::Report { .. } => "report".to_string(),
            Command::Other(args) => args
                .first()
                .map(|a| a.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unknown".to_string()),
        }
    }
}

/// The `eval` artifact joining per-benchmark metrics with the
/// cross-benchmark roll-up; `report` consumes this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metrics: Vec<Metrics>,
    pub cross: CrossBenchmarkSummary,
}

// ---- artifact staging ------------------------------------------------------

/// Collects artifact bytes during a stage and writes them all only on
/// success (temp file + rename). `quarantine_all` flushes whatever a failed
/// stage produced to `<name>.quarantine` without touching `<name>`.
pub struct ArtifactSink {
    out_dir: PathBuf,
    staged: Vec<(String, String)>,
}

impl ArtifactSink {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        ArtifactSink { out_dir: out_dir.into(), staged: Vec::new() }
    }

    pub fn stage(&mut self, name: impl Into<String>, content: impl Into<String>) {
        self.staged.push((name.into(), content.into()));
    }

    pub fn path_of(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Write every staged artifact to its final name, atomically per file.
    pub fn commit_all(&mut self) -> Result<()> {
        if self.staged.is_empty() {
            return Ok(());
        }
        fs::create_dir_all(&self.out_dir).map_err(|e| LsMixError::io(&self.out_dir, e))?;
        for (name, content) in self.staged.drain(..) {
            let final_path = self.out_dir.join(&name);
            let tmp_path = self.out_dir.join(format!("{name}.tmp"));
            fs::write(&tmp_path, content).map_err(|e| LsMixError::io(&tmp_path, e))?;
            fs::rename(&tmp_path, &final_path).map_err(|e| LsMixError::io(&final_path, e))?;
        }
        Ok(())
    }

    /// Best-effort dump of staged artifacts under a `.quarantine` suffix.
    pub fn quarantine_all(&mut self) {
        if self.staged.is_empty() {
            return;
        }
        if fs::create_dir_all(&self.out_dir).is_err() {
            self.staged.clear();
            return;
        }
        for (name, content) in self.staged.drain(..) {
            let path = self.out_dir.join(format!("{name}.quarantine"));
            if fs::write(&path, content).is_ok() {
                eprintln!("quarantined partial artifact: {}", path.display());
            }
        }
    }
}

// ---- entry points ------------------------------------------------------------

/// Parse `std::env::args_os()` and run; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Run with explicit arguments (first one is the binary name).
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };

    let stage = cli.command.stage_name();
    let config = match load_config(&cli) {
        Ok(config) => config,
        Err(err) => return report_failure(&stage, &err, None),
    };

    let mut sink = ArtifactSink::new(&config.out_dir);
    match dispatch(&cli.command, &config, &mut sink) {
        Ok(()) => match sink.commit_all() {
            Ok(()) => 0,
            Err(err) => report_failure(&stage, &err, Some(&mut sink)),
        },
        Err(err) => report_failure(&stage, &err, Some(&mut sink)),
    }
}

fn report_failure(stage: &str, err: &LsMixError, sink: Option<&mut ArtifactSink>) -> i32 {
    if let Some(sink) = sink {
        sink.quarantine_all();
    }
    let code = err.exit_code();
    let record = serde_json::json!({
        "error": err.to_string(),
        "exit_code": code,
        "stage": stage,
    });
    eprintln!("{record}");
    code
}

/// File + env config with the global flags layered on top.
fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    apply_flags(&mut config, cli);
    config.validate()?;
    Ok(config)
}

fn apply_flags(config: &mut PipelineConfig, cli: &Cli) {
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = &cli.mode {
        config.mode = mode.clone();
    }
    if let Some(strategy) = &cli.strategy {
        config.strategy = strategy.clone();
    }
    if let Some(mock) = &cli.mock {
        config.mock_fixture = Some(mock.to_string_lossy().into_owned());
        // The flag outranks any file- or env-configured live endpoint.
        config.base_url = None;
    }
    if let Some(runs) = cli.runs {
        config.n_runs = runs;
    }
}

/// Exactly one client: the mock fixture or the HTTP endpoint.
pub fn build_client(config: &PipelineConfig) -> Result<Box<dyn ChatClient>> {
    match (&config.mock_fixture, &config.base_url) {
        (Some(_), Some(_)) => Err(LsMixError::Config(
            "both mock_fixture and base_url are configured; choose exactly one".to_string(),
        )),
        (Some(fixture), None) => Ok(Box::new(MockChatClient::from_jsonl(Path::new(fixture))?)),
        (None, Some(url)) => Ok(Box::new(HttpChatClient::from_env(url.clone())?)),
        (None, None) => Err(LsMixError::Config(
            "no chat endpoint configured: set base_url (or LSMIX_BASE_URL), or pass --mock FIXTURE"
                .to_string(),
        )),
    }
}

fn dispatch(command: &Command, config: &PipelineConfig, sink: &mut ArtifactSink) -> Result<()> {
    match command {
        Command::Profile { input, kind, compare } => {
            cmd_profile(config, sink, input, kind, compare.as_deref())
        }
        Command::Rewrite { input } => cmd_rewrite(config, sink, input),
        Command::Validate { long, short, strict } => {
            cmd_validate(config, sink, long, short, *strict)
        }
        Command::Mix { long, short } => cmd_mix(config, sink, long, short),
        Command::Export { input, kind } => cmd_export(config, sink, input, kind),
        Command::AuditLoss { long, short, logprobs } => {
            cmd_audit_loss(config, sink, long, short, logprobs.as_deref())
        }
        Command::Eval { benchmarks, baseline } => {
            cmd_eval(config, sink, benchmarks, baseline.as_deref())
        }
        Command::Report { summary, baseline } => {
            cmd_report(config, sink, summary, baseline.as_deref())
        }
        Command::Other(args) => {
            let name = args
                .first()
                .map(|a| a.to_string_lossy().into_owned())
                .unwrap_or_default();
            Err(LsMixError::Config(format!(
                "unsupported action \"{name}\"; this tool prepares and evaluates data but does \
                 not train — hand the exported train.jsonl and its dataset card \
                 (train.card.json) to your trainer"
            )))
        }
    }
}

// ---- subcommands -------------------------------------------------------------

fn parse_kind(kind: &str) -> Result<ChainKind> {
    match kind {
        "long" => Ok(ChainKind::Long),
        "short" => Ok(ChainKind::Short),
        other => Err(LsMixError::Config(format!(
            "unknown chain kind {other:?}; expected \"long\" or \"short\""
        ))),
    }
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("artifact values serialize");
    out.push('\n');
    out
}

fn cmd_profile(
    config: &PipelineConfig,
    sink: &mut ArtifactSink,
    input: &Path,
    kind: &str,
    compare: Option<&Path>,
) -> Result<()> {
    let kind = parse_kind(kind)?;
    let dataset = corpus::load_dataset(input, kind)?;
    // Rendered lengths are measured under the mode the dataset trains as.
    let render_mode = ThinkingMode::for_kind(kind);
    let profile = corpus::profile(&dataset, render_mode, config.bucket_width_checked()?);
    sink.stage(format!("profile_{}.json", dataset.name), pretty_json(&profile));

    let stopwords = config.stopword_set();
    let frequencies = corpus::word_frequencies(&dataset, config.top_k, &stopwords);
    sink.stage(
        format!("word_frequencies_{}.json", dataset.name),
        pretty_json(&frequencies),
    );

    if let Some(compare_path) = compare {
        let short = corpus::load_dataset(compare_path, ChainKind::Short)?;
        let short_frequencies = corpus::word_frequencies(&short, config.top_k, &stopwords);
        sink.stage(
            format!("word_frequencies_{}.json", short.name),
            pretty_json(&short_frequencies),
        );
        let delta = corpus::frequency_delta(&frequencies, &short_frequencies);
        sink.stage("frequency_delta.json", pretty_json(&delta));
        println!(
            "profiled {}: {} rows; compared word use against {} over {} words",
            dataset.name,
            profile.num_rows,
            short.name,
            delta.len()
        );
    } else {
        println!(
            "profiled {}: {} rows, avg rendered length {:.1} chars ({:.1} est tokens)",
            dataset.name,
            profile.num_rows,
            profile.avg_rendered_length,
            profile.avg_rendered_tokens_est
        );
    }
    Ok(())
}

fn cmd_rewrite(config: &PipelineConfig, sink: &mut ArtifactSink, input: &Path) -> Result<()> {
    let dataset = corpus::load_dataset(input, ChainKind::Long)?;
    let client = build_client(config)?;
    let strategy = config.rewrite_strategy()?;
    let (short, report) =
        rewrite::rewrite_dataset(client.as_ref(), &dataset, strategy, &config.rewrite_config())?;

    sink.stage(format!("{}.jsonl", short.name), corpus::dataset_to_jsonl(&short));
    sink.stage("exclusions.jsonl", report.to_jsonl());

    if short.is_empty() && report.retry_exhausted > 0 {
        // Nothing succeeded and at least one instance burned every retry:
        // treat the endpoint as down rather than publishing an empty corpus.
        return Err(LsMixError::Client(crate::client::ClientError::Transport(format!(
            "endpoint exhausted: 0 of {} rewrites succeeded, {} failed after all retries",
            dataset.len(),
            report.retry_exhausted
        ))));
    }

    println!(
        "rewrote {} of {} instances ({} excluded) with the {} strategy",
        short.len(),
        dataset.len(),
        report.len(),
        strategy.slug()
    );
    Ok(())
}

fn cmd_validate(
    config: &PipelineConfig,
    sink: &mut ArtifactSink,
    long: &Path,
    short: &Path,
    strict: bool,
) -> Result<()> {
    let long_ds = corpus::load_dataset(long, ChainKind::Long)?;
    let short_ds = corpus::load_dataset(short, ChainKind::Short)?;
    let (reports, summary) = validate::validate_datasets(
        &long_ds,
        &short_ds,
        &config.thresholds(),
        &config.lexicons(),
    )?;
    sink.stage("validation.jsonl", validate::report_jsonl(&reports, &summary));

    if strict {
        let passing = validate::filter_passing(&short_ds, &reports);
        sink.stage(
            format!("{}-validated.jsonl", short_ds.name),
            corpus::dataset_to_jsonl(&passing),
        );
        if summary.passed < summary.pairs {
            // Keep the reports and the filtered dataset, then flag the run.
            sink.commit_all()?;
            return Err(LsMixError::Stage(format!(
                "strict validation: {} of {} pairs failed",
                summary.pairs - summary.passed,
                summary.pairs
            )));
        }
    }

    println!(
        "validated {} pairs: {} passed (rate {:.3}), mean ratio {:.3}",
        summary.pairs, summary.passed, summary.pass_rate, summary.mean_ratio
    );
    Ok(())
}

fn cmd_mix(
    config: &PipelineConfig,
    sink: &mut ArtifactSink,
    long: &Path,
    short: &Path,
) -> Result<()> {
    let long_ds = corpus::load_dataset(long, ChainKind::Long)?;
    let short_ds = corpus::load_dataset(short, ChainKind::Short)?;
    let mixed = mixture::build_mixture(&long_ds, &short_ds, config.seed)?;

    sink.stage("train.jsonl", mixture::training_jsonl(&mixed.records));
    sink.stage("train.card.json", mixture::card_json(&mixture::dataset_card(&mixed)));

    println!(
        "mixed {} records ({} detailed + {} brief), seed {}",
        mixed.records.len(),
        mixed.manifest.detailed,
        mixed.manifest.brief,
        mixed.seed
    );
    if !mixed.records.is_empty() {
        let eq = mixture::epoch_equivalence(
            config.long_epochs,
            long_ds.len() as u64,
            mixed.records.len() as u64,
        )?;
        println!(
            "epoch equivalence: {:.4} mixture epochs (floor {}, ceil {}) match {} long-only epochs",
            eq.epochs, eq.floor, eq.ceil, config.long_epochs
        );
    }
    Ok(())
}

fn cmd_export(
    config: &PipelineConfig,
    sink: &mut ArtifactSink,
    input: &Path,
    kind: &str,
) -> Result<()> {
    let _ = config;
    let kind = parse_kind(kind)?;
    let dataset = corpus::load_dataset(input, kind)?;
    let (records, card) = mixture::single_training_parts(&dataset)?;
    let stem = match kind {
        ChainKind::Long => "train_long",
        ChainKind::Short => "train_short",
    };
    sink.stage(format!("{stem}.jsonl"), mixture::training_jsonl(&records));
    sink.stage(format!("{stem}.card.json"), mixture::card_json(&card));
    println!("exported {} records from {} as {stem}.jsonl", records.len(), dataset.name);
    Ok(())
}

fn cmd_audit_loss(
    config: &PipelineConfig,
    sink: &mut ArtifactSink,
    long: &Path,
    short: &Path,
    logprobs: Option<&Path>,
) -> Result<()> {
    let long_ds = corpus::load_dataset(long, ChainKind::Long)?;
    let short_ds = corpus::load_dataset(short, ChainKind::Short)?;
    // The same seed reproduces the exported record order exactly.
    let mixed = mixture::build_mixture(&long_ds, &short_ds, config.seed)?;

    let logprob_map = match logprobs {
        Some(path) => mixture::load_logprobs(path)?,
        None => {
            let client = build_client(config)?;
            mixture::collect_target_logprobs(
                client.as_ref(),
                &mixed.records,
                &config.eval_config().settings(),
            )?
        }
    };

    let report = mixture::audit_loss(&mixed.records, &logprob_map)?;
    sink.stage("loss_report.json", pretty_json(&report));
    println!(
        "loss audit over {} records: long {:.6} + short {:.6} = {:.6}",
        report.per_record.len(),
        report.loss_long,
        report.loss_short,
        report.total
    );
    Ok(())
}

fn cmd_eval(
    config: &PipelineConfig,
    sink: &mut ArtifactSink,
    benchmarks: &[PathBuf],
    baseline: Option<&Path>,
) -> Result<()> {
    let client = build_client(config)?;
    let mode = config.thinking_mode()?;
    let unit = config.parsed_length_unit()?;
    let bucket_width = config.bucket_width_checked()?;
    let eval_config = config.eval_config();

    let mut metrics_list: Vec<Metrics> = Vec::new();
    let mut per_benchmark: BTreeMap<String, BenchmarkSummary> = BTreeMap::new();
    for path in benchmarks {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "benchmark".to_string());
        let spec = eval::load_benchmark(path, &name)?;
        let runs = eval::run_benchmark(client.as_ref(), &spec, mode, config.n_runs, &eval_config)?;
        for run in &runs {
            sink.stage(
                format!("eval_{}_{}_run{}.jsonl", name, mode.slug(), run.run_index),
                eval::run_jsonl(run),
            );
        }
        let metrics = eval::summarize(&runs, unit, bucket_width)?;
        println!(
            "{name}: accuracy median {:.3} over {} runs, mean length {:.1} ({})",
            metrics.accuracy_median,
            metrics.accuracy_per_run.len(),
            metrics.mean_length_all,
            unit_label(unit)
        );
        per_benchmark.insert(
            name,
            BenchmarkSummary {
                accuracy_median: metrics.accuracy_median,
                mean_length: metrics.mean_length_all,
                size: spec.size(),
            },
        );
        metrics_list.push(metrics);
    }

    let baseline_mean = match baseline {
        Some(path) => Some(read_summary(path)?.cross.weighted_mean_length),
        None => None,
    };
    let cross = eval::cross_benchmark_summary(per_benchmark, unit, baseline_mean)?;
    println!(
        "weighted mean length: {} ({})",
        format_thousands(cross.weighted_mean_length),
        unit_label(unit)
    );
    if let Some(reduction) = cross.reduction_vs_baseline {
        println!("reduction vs baseline: {reduction:.1}%");
    }
    sink.stage(
        "eval_summary.json",
        pretty_json(&EvalSummary { metrics: metrics_list, cross }),
    );
    Ok(())
}

fn cmd_report(
    _config: &PipelineConfig,
    sink: &mut ArtifactSink,
    summary: &Path,
    baseline: Option<&Path>,
) -> Result<()> {
    let summary = read_summary(summary)?;
    let reduction = match (summary.cross.reduction_vs_baseline, baseline) {
        (Some(r), _) => Some(r),
        (None, Some(path)) => {
            let baseline_summary = read_summary(path)?;
            Some(eval::reduction_percent(
                baseline_summary.cross.weighted_mean_length,
                summary.cross.weighted_mean_length,
            )?)
        }
        (None, None) => None,
    };
    let table = render_report(&summary, reduction);
    print!("{table}");
    sink.stage("report.txt", table);
    Ok(())
}

fn read_summary(path: &Path) -> Result<EvalSummary> {
    let text = fs::read_to_string(path).map_err(|e| LsMixError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| LsMixError::Jsonl {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

// ---- report rendering ----------------------------------------------------------

fn unit_label(unit: LengthUnit) -> &'static str {
    match unit {
        LengthUnit::Chars => "chars",
        LengthUnit::EstTokens => "est tokens",
    }
}

/// `13581.0956` → `"13,581.1"`: one decimal, thousands separated.
pub fn format_thousands(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let formatted = format!("{x:.1}");
    let (sign, rest) = match formatted.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", formatted.as_str()),
    };
    let (int_part, frac_part) = rest.split_once('.').expect("fixed-point format");
    let digits = int_part.as_bytes();
    let mut grouped = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, b) in digits.iter().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(*b as char);
    }
    format!("{sign}{grouped}.{frac_part}")
}

/// Plain-text summary table: one row per benchmark, a weighted-average row,
/// and a reduction row when a baseline is known.
pub fn render_report(summary: &EvalSummary, reduction: Option<f64>) -> String {
    let length_header = format!("avg length ({})", unit_label(summary.cross.length_unit));
    let mut rows: Vec<[String; 4]> = Vec::new();
    rows.push([
        "benchmark".to_string(),
        "accuracy".to_string(),
        length_header,
        "items".to_string(),
    ]);

    let mut total_items: u64 = 0;
    for (name, bench) in &summary.cross.per_benchmark {
        total_items += bench.size;
        rows.push([
            name.clone(),
            format!("{:.3}", bench.accuracy_median),
            format_thousands(bench.mean_length),
            bench.size.to_string(),
        ]);
    }
    rows.push([
        "weighted".to_string(),
        "-".to_string(),
        format_thousands(summary.cross.weighted_mean_length),
        total_items.to_string(),
    ]);
    rows.push([
        "reduction".to_string(),
        "-".to_string(),
        match reduction {
            Some(r) => format!("{r:.1}%"),
            None => "n/a".to_string(),
        },
        "-".to_string(),
    ]);

    let mut widths = [0usize; 4];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }

    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let mut line = String::new();
        for (col, cell) in row.iter().enumerate() {
            if col > 0 {
                line.push_str("   ");
            }
            let pad = widths[col] - cell.chars().count();
            if col == 0 {
                // Left-align names, right-align numbers.
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if i == 0 {
            for (col, width) in widths.iter().enumerate() {
                if col > 0 {
                    out.push_str("   ");
                }
                out.push_str(&"-".repeat(*width));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_formatting_groups_and_rounds() {
        assert_eq!(format_thousands(13_581.095_604_395_607), "13,581.1");
        assert_eq!(format_thousands(25_927.783_791_208_793), "25,927.8");
        assert_eq!(format_thousands(0.0), "0.0");
        assert_eq!(format_thousands(999.94), "999.9");
        assert_eq!(format_thousands(1_000.0), "1,000.0");
        assert_eq!(format_thousands(-1_234.56), "-1,234.6");
        assert_eq!(format_thousands(1_234_567.89), "1,234,567.9");
    }

    #[test]
    fn report_table_carries_weighted_average_and_reduction() {
        let mut per = BTreeMap::new();
        per.insert(
            "aime24".to_string(),
            BenchmarkSummary { accuracy_median: 0.5, mean_length: 40_251.3, size: 30 },
        );
        per.insert(
            "gpqa".to_string(),
            BenchmarkSummary { accuracy_median: 0.59, mean_length: 21_995.7, size: 198 },
        );
        per.insert(
            "math500".to_string(),
            BenchmarkSummary { accuracy_median: 0.93, mean_length: 8_648.7, size: 500 },
        );
        let cross = eval::cross_benchmark_summary(
            per,
            LengthUnit::EstTokens,
            Some(25_927.783_791_208_793),
        )
        .unwrap();
        let summary = EvalSummary { metrics: vec![], cross };
        let table = render_report(&summary, summary.cross.reduction_vs_baseline);

        assert!(table.contains("13,581.1"), "weighted mean missing:\n{table}");
        assert!(table.contains("47.6%"), "reduction missing:\n{table}");
        assert!(table.contains("benchmark"));
        assert!(table.contains("accuracy"));
        assert!(table.contains("avg length (est tokens)"));
        assert!(table.contains("weighted"));
        assert!(table.contains("reduction"));
        assert!(table.contains("40,251.3"));
        // Every line fits the column layout: no trailing spaces.
        for line in table.lines() {
            assert_eq!(line, line.trim_end());
        }
    }

    #[test]
    fn report_without_baseline_says_not_available() {
        let mut per = BTreeMap::new();
        per.insert(
            "demo".to_string(),
            BenchmarkSummary { accuracy_median: 1.0, mean_length: 100.0, size: 4 },
        );
        let cross = eval::cross_benchmark_summary(per, LengthUnit::Chars, None).unwrap();
        let table = render_report(&EvalSummary { metrics: vec![], cross }, None);
        assert!(table.contains("n/a"));
        assert!(table.contains("avg length (chars)"));
    }

    #[test]
    fn kind_parsing_rejects_unknown_words() {
        assert_eq!(parse_kind("long").unwrap(), ChainKind::Long);
        assert_eq!(parse_kind("short").unwrap(), ChainKind::Short);
        assert!(parse_kind("medium").is_err());
    }

    #[test]
    fn flags_outrank_config_values() {
        let cli = Cli::try_parse_from([
            "lsmix", "--seed", "9", "--out", "elsewhere", "--runs", "2", "--mode", "brief",
            "--strategy", "direct", "--mock", "fixture.jsonl", "mix", "--long", "a.jsonl",
            "--short", "b.jsonl",
        ])
        .unwrap();
        let mut config = PipelineConfig {
            base_url: Some("http://configured".to_string()),
            ..PipelineConfig::default()
        };
        apply_flags(&mut config, &cli);
        assert_eq!(config.seed, 9);
        assert_eq!(config.out_dir, "elsewhere");
        assert_eq!(config.n_runs, 2);
        assert_eq!(config.mode, "brief");
        assert_eq!(config.strategy, "direct");
        assert_eq!(config.mock_fixture.as_deref(), Some("fixture.jsonl"));
        // The mock flag displaces a configured live endpoint.
        assert_eq!(config.base_url, None);
        config.validate().unwrap();
    }

    #[test]
    fn global_flags_parse_after_the_subcommand_too() {
        let cli = Cli::try_parse_from([
            "lsmix", "mix", "--long", "a.jsonl", "--short", "b.jsonl", "--seed", "3",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(3));
        match cli.command {
            Command::Mix { long, short } => {
                assert_eq!(long, PathBuf::from("a.jsonl"));
                assert_eq!(short, PathBuf::from("b.jsonl"));
            }
            other => panic!("parsed wrong subcommand: {other:?}"),
        }
    }

    #[test]
    fn unknown_subcommands_become_external() {
        let cli = Cli::try_parse_from(["lsmix", "train", "--epochs", "3"]).unwrap();
        match &cli.command {
            Command::Other(args) => {
                assert_eq!(args[0], OsString::from("train"));
                assert_eq!(cli.command.stage_name(), "train");
            }
            other => panic!("expected external subcommand, got {other:?}"),
        }
    }

    #[test]
    fn client_construction_requires_exactly_one_endpoint() {
        let neither = PipelineConfig::default();
        assert!(matches!(build_client(&neither), Err(LsMixError::Config(_))));

        let both = PipelineConfig {
            base_url: Some("http://h".to_string()),
            mock_fixture: Some("f.jsonl".to_string()),
            ..PipelineConfig::default()
        };
        assert!(matches!(build_client(&both), Err(LsMixError::Config(_))));

        let dir = tempfile::tempdir().unwrap();
        let fixture = dir.path().join("fixture.jsonl");
        fs::write(&fixture, "{\"id\":\"x\",\"script\":[\"hi\"]}\n").unwrap();
        let mock = PipelineConfig {
            mock_fixture: Some(fixture.to_string_lossy().into_owned()),
            ..PipelineConfig::default()
        };
        assert!(build_client(&mock).is_ok());
    }

    #[test]
    fn sink_commits_atomically_and_quarantines_failures() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");

        let mut sink = ArtifactSink::new(&out);
        sink.stage("a.txt", "first");
        sink.stage("b.txt", "second");
        sink.commit_all().unwrap();
        assert_eq!(fs::read_to_string(out.join("a.txt")).unwrap(), "first");
        assert_eq!(fs::read_to_string(out.join("b.txt")).unwrap(), "second");
        assert!(!out.join("a.txt.tmp").exists());

        // A later failed stage must not clobber the good artifacts.
        let mut sink = ArtifactSink::new(&out);
        sink.stage("a.txt", "partial rewrite");
        sink.quarantine_all();
        assert_eq!(fs::read_to_string(out.join("a.txt")).unwrap(), "first");
        assert_eq!(
            fs::read_to_string(out.join("a.txt.quarantine")).unwrap(),
            "partial rewrite"
        );
    }

    #[test]
    fn summaries_round_trip_for_the_report_stage() {
        let mut per = BTreeMap::new();
        per.insert(
            "demo".to_string(),
            BenchmarkSummary { accuracy_median: 0.75, mean_length: 420.0, size: 8 },
        );
        let cross = eval::cross_benchmark_summary(per, LengthUnit::EstTokens, None).unwrap();
        let summary = EvalSummary { metrics: vec![], cross };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval_summary.json");
        fs::write(&path, pretty_json(&summary)).unwrap();
        let back = read_summary(&path).unwrap();
        assert_eq!(back, summary);

        fs::write(&path, "{ not json").unwrap();
        let err = read_summary(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
