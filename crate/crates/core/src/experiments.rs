//! Configuration-driven experiment runners tying the whole pipeline
//! together: corpus split, example selection, prompt rendering, gateway
//! calls, extraction, and scoring.
//!
//! Four experiments are supported:
//!
//! * `exp1` — random vs retrieval-based example selection, fixed 3-shot.
//! * `exp2` — retrieval with a sweep over example counts.
//! * `exp3` — 3-shot retrieval across morpheme-dictionary subsets.
//! * `exp4` — hybrid correction of a trained tagger's output, with a shot
//!   sweep and a tagger baseline row.
//!
//! Every run writes four result artifacts into the output directory —
//! `results.csv`, `results.json`, `predictions.jsonl`, `run_manifest.json`
//! — all byte-deterministic given pinned seeds and a warm cache. Wall time
//! and cache-hit rate are computed per row but deliberately kept out of the
//! serialized artifacts so re-runs stay byte-identical; per-backend request
//! logs (`requests-<model>.jsonl`) carry latencies and are diagnostic only.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    document_split, parse_corpus, words_to_surface, Corpus, CorpusFormat,
};
use crate::error::{Error, Result};
use crate::evaluation::{align, token_accuracy, tokenize_gloss, AlignedPrediction};
use crate::gateway::{run_bounded, write_atomic, BackendConfig, BackendKind, Gateway};
use crate::lexicon::{Glossary, GlossarySubset, TagClassifier};
use crate::neural::TaggerModel;
use crate::prompting::{
    extract_gloss, render_generation_prompt, render_hybrid_prompt, PromptMode, RenderedExample,
};
use crate::retrieval::{build_index, random_k, top_k, TfIdfConfig, TfIdfIndex};

/// Supported schema version for [`ExperimentConfig`] files.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

impl ExperimentId {
    /// Stable lowercase name, matching the serialized form.
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
        }
    }

    /// Maps the CLI's `run-exp {1..4}` argument.
    pub fn from_number(n: u8) -> Result<ExperimentId> {
        match n {
            1 => Ok(ExperimentId::Exp1),
            2 => Ok(ExperimentId::Exp2),
            3 => Ok(ExperimentId::Exp3),
            4 => Ok(ExperimentId::Exp4),
            other => Err(Error::Argument(format!(
                "experiment number must be 1..4, got {other}"
            ))),
        }
    }
}

fn default_corpus_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}
fn default_test_fraction() -> f64 {
    0.1
}
fn default_split_seed() -> u64 {
    13
}
fn default_model_seed() -> u64 {
    7
}
fn default_selection_seed() -> u64 {
    101
}
fn default_max_concurrency() -> usize {
    4
}

/// One experiment run, loadable from a schema-versioned JSON file.
///
/// Credentials never appear here; `http-chat` backends read their API keys
/// from the environment (see [`BackendConfig::api_key_env_var`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must equal [`CONFIG_SCHEMA_VERSION`].
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub corpus_path: PathBuf,
    #[serde(default = "default_corpus_format")]
    pub corpus_format: CorpusFormat,
    /// Fraction of documents assigned to the test side of the split.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    /// Seed for tagger training (recorded in the manifest; exp4 consumes a
    /// checkpoint trained elsewhere with this seed).
    #[serde(default = "default_model_seed")]
    pub model_seed: u64,
    /// Seed for random example selection (exp1's random condition).
    #[serde(default = "default_selection_seed")]
    pub selection_seed: u64,
    /// Example counts. Empty means the experiment's default sweep; exp1 and
    /// exp3 are fixed at 3-shot and reject anything else.
    #[serde(default)]
    pub shot_counts: Vec<usize>,
    /// Dictionary subsets for exp3. Empty means all four; other experiments
    /// reject a non-empty list.
    #[serde(default)]
    pub glossary_modes: Vec<GlossarySubset>,
    pub backends: Vec<BackendConfig>,
    pub output_dir: PathBuf,
    /// Response cache directory; omitted means in-memory caching only.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Upper bound on in-flight backend calls. Scripted backends always run
    /// serially so queue order maps to item order deterministically.
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    /// Trained tagger checkpoint; required by exp4.
    #[serde(default)]
    pub tagger_checkpoint: Option<PathBuf>,
    /// JSONL file of JSON-encoded strings loaded into scripted backends.
    #[serde(default)]
    pub scripted_responses: Option<PathBuf>,
    /// A previous generation run's `results.json`; exp4 reports each hybrid
    /// row's accuracy delta against the matching `rag-{n}shot` row.
    #[serde(default)]
    pub prior_generation_results: Option<PathBuf>,
    /// When set, exp1's random condition draws one sample for the whole run
    /// instead of re-drawing per test item.
    #[serde(default)]
    pub random_fixed_sample: bool,
}

impl ExperimentConfig {
    /// A minimal valid config for the given experiment.
    pub fn new(
        experiment: ExperimentId,
        corpus_path: impl Into<PathBuf>,
        backends: Vec<BackendConfig>,
        output_dir: impl Into<PathBuf>,
    ) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            experiment,
            corpus_path: corpus_path.into(),
            corpus_format: default_corpus_format(),
            test_fraction: default_test_fraction(),
            split_seed: default_split_seed(),
            model_seed: default_model_seed(),
            selection_seed: default_selection_seed(),
            shot_counts: Vec::new(),
            glossary_modes: Vec::new(),
            backends,
            output_dir: output_dir.into(),
            cache_dir: None,
            max_concurrency: default_max_concurrency(),
            tagger_checkpoint: None,
            scripted_responses: None,
            prior_generation_results: None,
            random_fixed_sample: false,
        }
    }

    /// Loads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks schema version, per-experiment constraints, and ranges.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.backends.is_empty() {
            return Err(Error::Config("at least one backend is required".into()));
        }
        for backend in &self.backends {
            backend.validate()?;
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        match self.experiment {
            ExperimentId::Exp1 | ExperimentId::Exp3 => {
                if !(self.shot_counts.is_empty() || self.shot_counts == [3]) {
                    return Err(Error::Config(format!(
                        "{} is fixed at 3-shot; leave shot_counts empty",
                        self.experiment.name()
                    )));
                }
            }
            ExperimentId::Exp2 => {
                if self.shot_counts.contains(&0) {
                    return Err(Error::Config(
                        "exp2 renders generation prompts, which need at least one example".into(),
                    ));
                }
            }
            ExperimentId::Exp4 => {
                if self.tagger_checkpoint.is_none() {
                    return Err(Error::Config(
                        "exp4 needs tagger_checkpoint: the hybrid pipeline corrects a trained \
                         tagger's output"
                            .into(),
                    ));
                }
            }
        }
        if self.experiment != ExperimentId::Exp3 && !self.glossary_modes.is_empty() {
            return Err(Error::Config(format!(
                "{} does not use a dictionary; leave glossary_modes empty",
                self.experiment.name()
            )));
        }
        Ok(())
    }

    /// SHA-256 digest of the canonical JSON form, recorded in the manifest.
    pub fn digest(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(hex::encode(hasher.finalize()))
    }
}

/// One results-table row. Wall time and cache-hit rate are measured per run
/// and therefore excluded from serialized artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub condition: String,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub failures: usize,
    /// Hybrid accuracy minus the tagger baseline (exp4 rows only).
    pub delta_vs_tagger: Option<f64>,
    /// Hybrid accuracy minus the matching pure-generation row from
    /// `prior_generation_results` (exp4 rows only, null when unavailable).
    pub delta_vs_generation: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub cache_hit_rate: f64,
}

/// All rows of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub rows: Vec<ResultRow>,
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model: String,
    pub condition: String,
    /// Index of the sentence in the test split.
    pub item: usize,
    pub document_id: String,
    pub segmented: String,
    pub gold: String,
    pub predicted: String,
    /// Error message when this item produced no usable prediction.
    pub failure: Option<String>,
}

/// Audit record written as `run_manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub config_digest: String,
    pub code_version: String,
    pub corpus_path: String,
    pub split_seed: u64,
    pub model_seed: u64,
    pub selection_seed: u64,
    pub train_sentences: usize,
    pub test_sentences: usize,
}

/// Run-level counters that never enter the artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunDiagnostics {
    /// Backend invocations across all gateways (cache misses only).
    pub backend_calls: u64,
    /// Test items that produced no usable prediction, across all rows.
    pub failed_items: usize,
    /// Test items scored across all backend-driven rows.
    pub scored_items: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Selection {
    Random,
    Retrieval,
}

#[derive(Debug, Clone)]
struct Condition {
    label: String,
    shots: usize,
    selection: Selection,
    glossary_mode: GlossarySubset,
    prompt_mode: PromptMode,
}

fn build_conditions(config: &ExperimentConfig) -> Vec<Condition> {
    let rag_generation = |label: String, shots: usize, glossary_mode| Condition {
        label,
        shots,
        selection: Selection::Retrieval,
        glossary_mode,
        prompt_mode: PromptMode::Generation,
    };
    match config.experiment {
        ExperimentId::Exp1 => vec![
            Condition {
                label: "random-3shot".into(),
                shots: 3,
                selection: Selection::Random,
                glossary_mode: GlossarySubset::None,
                prompt_mode: PromptMode::Generation,
            },
            rag_generation("rag-3shot".into(), 3, GlossarySubset::None),
        ],
        ExperimentId::Exp2 => {
            let shots = if config.shot_counts.is_empty() {
                vec![1, 3, 5, 10, 15, 20]
            } else {
                config.shot_counts.clone()
            };
            shots
                .into_iter()
                .map(|n| rag_generation(format!("rag-{n}shot"), n, GlossarySubset::None))
                .collect()
        }
        ExperimentId::Exp3 => {
            let modes = if config.glossary_modes.is_empty() {
                vec![
                    GlossarySubset::None,
                    GlossarySubset::Top100,
                    GlossarySubset::Grammatical,
                    GlossarySubset::Entire,
                ]
            } else {
                config.glossary_modes.clone()
            };
            modes
                .into_iter()
                .map(|mode| rag_generation(format!("rag-3shot-{}", mode.name()), 3, mode))
                .collect()
        }
        ExperimentId::Exp4 => {
            let shots = if config.shot_counts.is_empty() {
                vec![0, 1, 3, 5, 10, 15, 20]
            } else {
                config.shot_counts.clone()
            };
            shots
                .into_iter()
                .map(|n| Condition {
                    label: format!("hybrid-{n}shot"),
                    shots: n,
                    selection: Selection::Retrieval,
                    glossary_mode: GlossarySubset::None,
                    prompt_mode: PromptMode::Hybrid,
                })
                .collect()
        }
    }
}

/// Everything derived from the corpus before any backend call.
struct Prepared {
    train: Corpus,
    test: Corpus,
    index: TfIdfIndex,
    glossary: Glossary,
    classifier: TagClassifier,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let corpus = parse_corpus(&config.corpus_path, config.corpus_format)?;
    let (train, test) = document_split(&corpus, config.test_fraction, config.split_seed)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "document split produced {} train / {} test sentences; need both non-empty",
            train.len(),
            test.len()
        )));
    }
    let index = build_index(&train.source_surfaces(), &TfIdfConfig::default())?;
    let glossary = Glossary::build(&train);
    Ok(Prepared {
        train,
        test,
        index,
        glossary,
        classifier: TagClassifier::new(),
    })
}

struct ItemOutcome {
    predicted: String,
    cached: bool,
    failure: Option<String>,
}

/// Per-item tagger output for exp4: gloss token structure, or the error
/// message when the tagger could not produce one.
type TaggerAttempt = std::result::Result<Vec<Vec<String>>, String>;

fn select_example_indices(
    prepared: &Prepared,
    config: &ExperimentConfig,
    condition: &Condition,
    item: usize,
    segmented: &str,
) -> Result<Vec<usize>> {
    if condition.shots == 0 {
        return Ok(Vec::new());
    }
    match condition.selection {
        // Most similar example last, closest to the test sentence.
        Selection::Retrieval => Ok(top_k(&prepared.index, segmented, condition.shots)?
            .into_iter()
            .map(|(i, _)| i)
            .rev()
            .collect()),
        Selection::Random => {
            let seed = if config.random_fixed_sample {
                config.selection_seed
            } else {
                config.selection_seed.wrapping_add(item as u64)
            };
            random_k(prepared.train.len(), condition.shots, seed)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn process_item(
    prepared: &Prepared,
    config: &ExperimentConfig,
    gateway: &Gateway,
    condition: &Condition,
    glossary_pairs: Option<&[(String, String)]>,
    attempts: Option<&[TaggerAttempt]>,
    item: usize,
) -> ItemOutcome {
    let sentence = &prepared.test.sentences()[item];
    let segmented = sentence.source_surface();
    let result = (|| -> Result<(String, bool)> {
        let indices = select_example_indices(prepared, config, condition, item, &segmented)?;
        let mut examples = Vec::with_capacity(indices.len());
        for (ordinal, &train_index) in indices.iter().enumerate() {
            let train_sentence = &prepared.train.sentences()[train_index];
            examples.push(RenderedExample::new(
                ordinal + 1,
                train_sentence.source_surface(),
                train_sentence.gloss_surface(),
            )?);
        }
        let glossary = glossary_pairs.map(|pairs| (condition.glossary_mode, pairs));
        let request = match condition.prompt_mode {
            PromptMode::Generation => render_generation_prompt(&examples, glossary, &segmented)?,
            PromptMode::Hybrid => {
                let attempt = attempts
                    .and_then(|a| a.get(item))
                    .ok_or_else(|| Error::Data("missing tagger attempt".into()))?;
                let tokens = attempt.as_ref().map_err(|e| Error::Data(e.clone()))?;
                render_hybrid_prompt(&examples, glossary, &segmented, &words_to_surface(tokens))?
            }
        };
        let response = gateway.complete(&request.system_text, &request.user_text)?;
        Ok((extract_gloss(&response.raw_text), response.cached))
    })();
    match result {
        Ok((predicted, cached)) => ItemOutcome {
            predicted,
            cached,
            failure: None,
        },
        Err(e) => ItemOutcome {
            predicted: String::new(),
            cached: false,
            failure: Some(e.to_string()),
        },
    }
}

fn align_item(prepared: &Prepared, item: usize, predicted: &str) -> Result<AlignedPrediction> {
    let sentence = &prepared.test.sentences()[item];
    align(
        &tokenize_gloss(predicted),
        &sentence.source_words,
        &sentence.gloss_words,
    )
}

fn run_condition(
    prepared: &Prepared,
    config: &ExperimentConfig,
    gateway: &Gateway,
    condition: &Condition,
    attempts: Option<&[TaggerAttempt]>,
    predictions: &mut Vec<PredictionRecord>,
) -> Result<ResultRow> {
    let started = Instant::now();
    let subset;
    let glossary_pairs: Option<&[(String, String)]> = match condition.glossary_mode {
        GlossarySubset::None => None,
        mode => {
            subset = prepared.glossary.select_subset(mode, &prepared.classifier);
            Some(&subset)
        }
    };
    // Scripted queues are order-sensitive: run them serially so the k-th
    // queued response always answers the k-th test item.
    let concurrency = match gateway.config().backend_kind {
        BackendKind::Scripted => 1,
        _ => config.max_concurrency,
    };
    let outcomes = run_bounded(prepared.test.len(), concurrency, |item| {
        process_item(
            prepared,
            config,
            gateway,
            condition,
            glossary_pairs,
            attempts,
            item,
        )
    });

    let mut aligned = Vec::with_capacity(outcomes.len());
    let mut failures = 0usize;
    let mut cache_hits = 0usize;
    for (item, outcome) in outcomes.iter().enumerate() {
        aligned.push(align_item(prepared, item, &outcome.predicted)?);
        failures += usize::from(outcome.failure.is_some());
        cache_hits += usize::from(outcome.cached);
        let sentence = &prepared.test.sentences()[item];
        predictions.push(PredictionRecord {
            model: gateway.config().model_name.clone(),
            condition: condition.label.clone(),
            item,
            document_id: sentence.document_id.clone(),
            segmented: sentence.source_surface(),
            gold: sentence.gloss_surface(),
            predicted: outcome.predicted.clone(),
            failure: outcome.failure.clone(),
        });
    }
    let accuracy = token_accuracy(&aligned)?;
    Ok(ResultRow {
        model: gateway.config().model_name.clone(),
        condition: condition.label.clone(),
        accuracy: accuracy.accuracy,
        correct: accuracy.correct,
        total: accuracy.total,
        failures,
        delta_vs_tagger: None,
        delta_vs_generation: None,
        wall_time_s: started.elapsed().as_secs_f64(),
        cache_hit_rate: cache_hits as f64 / outcomes.len().max(1) as f64,
    })
}

fn build_gateway(config: &ExperimentConfig, backend: &BackendConfig, test: &Corpus) -> Result<Gateway> {
    // Gateway problems (missing credentials, bad endpoint) are backend
    // failures from the runner's point of view: exit code 4, not 2.
    let gateway = Gateway::new(backend.clone(), config.cache_dir.as_deref())
        .map_err(|e| Error::Backend(format!("backend {} unavailable: {e}", backend.model_name)))?;
    match backend.backend_kind {
        BackendKind::Scripted => {
            if let Some(path) = &config.scripted_responses {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut responses = Vec::new();
                for (lineno, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let response: String = serde_json::from_str(line).map_err(|e| {
                        Error::parse(
                            format!("{}:{}", path.display(), lineno + 1),
                            format!("expected a JSON string per line: {e}"),
                        )
                    })?;
                    responses.push(response);
                }
                gateway.push_scripted_responses(responses)?;
            }
        }
        BackendKind::PerfectOracle => {
            // The one sanctioned place outside evaluation that reads test
            // gold glosses: the harness oracle.
            gateway.load_oracle(
                test.sentences()
                    .iter()
                    .map(|s| (s.source_surface(), s.gloss_surface())),
            )?;
        }
        BackendKind::HttpChat | BackendKind::EchoInitial => {}
    }
    Ok(gateway)
}

fn tagger_attempts(model: &TaggerModel, test: &Corpus) -> Vec<TaggerAttempt> {
    test.sentences()
        .iter()
        .map(|s| model.gloss(&s.source_words).map_err(|e| e.to_string()))
        .collect()
}

fn tagger_baseline_row(prepared: &Prepared, attempts: &[TaggerAttempt]) -> Result<ResultRow> {
    let started = Instant::now();
    let mut aligned = Vec::with_capacity(attempts.len());
    let mut failures = 0usize;
    for (item, attempt) in attempts.iter().enumerate() {
        let surface = match attempt {
            Ok(tokens) => words_to_surface(tokens),
            Err(_) => {
                failures += 1;
                String::new()
            }
        };
        aligned.push(align_item(prepared, item, &surface)?);
    }
    let accuracy = token_accuracy(&aligned)?;
    Ok(ResultRow {
        model: "tagger".into(),
        condition: "baseline".into(),
        accuracy: accuracy.accuracy,
        correct: accuracy.correct,
        total: accuracy.total,
        failures,
        delta_vs_tagger: None,
        delta_vs_generation: None,
        wall_time_s: started.elapsed().as_secs_f64(),
        cache_hit_rate: 0.0,
    })
}

/// Prior `rag-{n}shot` accuracies keyed by `(model, shots)`.
fn load_prior_generation(path: &Path) -> Result<HashMap<(String, usize), f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: ResultsTable = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut priors = HashMap::new();
    for row in table.rows {
        if let Some(rest) = row.condition.strip_prefix("rag-") {
            if let Some(n) = rest.strip_suffix("shot").and_then(|n| n.parse().ok()) {
                priors.insert((row.model, n), row.accuracy);
            }
        }
    }
    Ok(priors)
}

fn shots_of(condition: &Condition) -> usize {
    condition.shots
}

/// Runs the configured experiment end to end and writes all artifacts.
/// Returns the table plus run-level counters (backend calls, failures).
pub fn run_experiment_with_diagnostics(
    config: &ExperimentConfig,
) -> Result<(ResultsTable, RunDiagnostics)> {
    config.validate()?;
    let prepared = prepare(config)?;
    let conditions = build_conditions(config);

    // exp4 extras: the trained tagger's predictions and the prior table.
    let mut attempts: Option<Vec<TaggerAttempt>> = None;
    let mut baseline: Option<ResultRow> = None;
    let mut priors: HashMap<(String, usize), f64> = HashMap::new();
    if config.experiment == ExperimentId::Exp4 {
        let checkpoint = config
            .tagger_checkpoint
            .as_ref()
            .expect("validated: exp4 has a checkpoint");
        let model = TaggerModel::load(checkpoint)?;
        let computed = tagger_attempts(&model, &prepared.test);
        baseline = Some(tagger_baseline_row(&prepared, &computed)?);
        attempts = Some(computed);
        if let Some(path) = &config.prior_generation_results {
            priors = load_prior_generation(path)?;
        }
    }

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut predictions: Vec<PredictionRecord> = Vec::new();
    let mut diagnostics = RunDiagnostics::default();
    if let Some(row) = &baseline {
        rows.push(row.clone());
    }

    let mut request_logs: Vec<(String, Gateway)> = Vec::new();
    for backend in &config.backends {
        let gateway = build_gateway(config, backend, &prepared.test)?;
        for condition in &conditions {
            let mut row = run_condition(
                &prepared,
                config,
                &gateway,
                condition,
                attempts.as_deref(),
                &mut predictions,
            )?;
            if let Some(base) = &baseline {
                row.delta_vs_tagger = Some(row.accuracy - base.accuracy);
                row.delta_vs_generation = priors
                    .get(&(row.model.clone(), shots_of(condition)))
                    .map(|prior| row.accuracy - prior);
            }
            diagnostics.failed_items += row.failures;
            diagnostics.scored_items += prepared.test.len();
            rows.push(row);
        }
        diagnostics.backend_calls += gateway.backend_calls();
        request_logs.push((backend.model_name.clone(), gateway));
    }

    let table = ResultsTable {
        schema_version: CONFIG_SCHEMA_VERSION,
        experiment: config.experiment,
        rows,
    };
    write_artifacts(config, &prepared, &table, &predictions)?;
    for (model, gateway) in &request_logs {
        let stem: String = model
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        gateway.write_request_log(&config.output_dir.join(format!("requests-{stem}.jsonl")))?;
    }

    // A run in which no test item ever produced a prediction is a backend
    // failure, even though the partial artifacts were written above.
    if diagnostics.scored_items > 0 && diagnostics.failed_items == diagnostics.scored_items {
        return Err(Error::Backend(format!(
            "all {} test items failed across every condition; see predictions.jsonl in {}",
            diagnostics.scored_items,
            config.output_dir.display()
        )));
    }
    Ok((table, diagnostics))
}

/// [`run_experiment_with_diagnostics`] without the counters.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsTable> {
    run_experiment_with_diagnostics(config).map(|(table, _)| table)
}

fn expect_experiment(config: &ExperimentConfig, id: ExperimentId) -> Result<()> {
    if config.experiment != id {
        return Err(Error::Config(format!(
            "config is for {}, but {} was requested",
            config.experiment.name(),
            id.name()
        )));
    }
    Ok(())
}

/// Random vs retrieval selection, 3-shot, no dictionary.
pub fn run_exp1(config: &ExperimentConfig) -> Result<ResultsTable> {
    expect_experiment(config, ExperimentId::Exp1)?;
    run_experiment(config)
}

/// Retrieval selection with an example-count sweep.
pub fn run_exp2(config: &ExperimentConfig) -> Result<ResultsTable> {
    expect_experiment(config, ExperimentId::Exp2)?;
    run_experiment(config)
}

/// 3-shot retrieval across dictionary subsets.
pub fn run_exp3(config: &ExperimentConfig) -> Result<ResultsTable> {
    expect_experiment(config, ExperimentId::Exp3)?;
    run_experiment(config)
}

/// Hybrid correction of the trained tagger with a shot sweep.
pub fn run_exp4(config: &ExperimentConfig) -> Result<ResultsTable> {
    expect_experiment(config, ExperimentId::Exp4)?;
    run_experiment(config)
}

fn write_artifacts(
    config: &ExperimentConfig,
    prepared: &Prepared,
    table: &ResultsTable,
    predictions: &[PredictionRecord],
) -> Result<()> {
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;

    write_atomic(
        &config.output_dir.join("results.json"),
        format!("{}\n", serde_json::to_string_pretty(table)?).as_bytes(),
    )?;
    write_atomic(
        &config.output_dir.join("results.csv"),
        results_csv(table)?.as_bytes(),
    )?;

    let mut lines = String::new();
    for record in predictions {
        lines.push_str(&serde_json::to_string(record)?);
        lines.push('\n');
    }
    write_atomic(&config.output_dir.join("predictions.jsonl"), lines.as_bytes())?;

    let manifest = RunManifest {
        schema_version: CONFIG_SCHEMA_VERSION,
        experiment: config.experiment,
        config_digest: config.digest()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        corpus_path: config.corpus_path.display().to_string(),
        split_seed: config.split_seed,
        model_seed: config.model_seed,
        selection_seed: config.selection_seed,
        train_sentences: prepared.train.len(),
        test_sentences: prepared.test.len(),
    };
    write_atomic(
        &config.output_dir.join("run_manifest.json"),
        format!("{}\n", serde_json::to_string_pretty(&manifest)?).as_bytes(),
    )?;
    Ok(())
}

/// Renders the table as CSV. Optional deltas render as empty cells.
pub fn results_csv(table: &ResultsTable) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("csv serialization failed: {e}"));
    writer
        .write_record([
            "model",
            "condition",
            "accuracy",
            "correct",
            "total",
            "failures",
            "delta_vs_tagger",
            "delta_vs_generation",
        ])
        .map_err(csv_err)?;
    for row in &table.rows {
        let optional = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writer
            .write_record([
                row.model.clone(),
                row.condition.clone(),
                row.accuracy.to_string(),
                row.correct.to_string(),
                row.total.to_string(),
                row.failures.to_string(),
                optional(row.delta_vs_tagger),
                optional(row.delta_vs_generation),
            ])
            .map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Data(format!("csv serialization failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv is not utf-8: {e}")))
}

/// Renders the table for terminal display, including the measured-only
/// columns that never enter the artifacts.
pub fn render_table(table: &ResultsTable) -> String {
    let mut out = format!(
        "{:<12} {:<22} {:>9} {:>8} {:>8} {:>9} {:>10} {:>10}\n",
        "model", "condition", "accuracy", "correct", "total", "failures", "wall_s", "cache_hit"
    );
    for row in &table.rows {
        out.push_str(&format!(
            "{:<12} {:<22} {:>9.4} {:>8} {:>8} {:>9} {:>10.2} {:>10.2}\n",
            row.model,
            row.condition,
            row.accuracy,
            row.correct,
            row.total,
            row.failures,
            row.wall_time_s,
            row.cache_hit_rate
        ));
    }
    out
}
