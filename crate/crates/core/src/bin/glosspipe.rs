//! Command-line front end for the glossing pipeline.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error
//! (parsing, alignment, training), 4 backend error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use glosspipe::corpus::{
    corpus_stats, document_split, generate_synthetic_corpus, near_duplicates, parse_corpus,
    words_to_surface, write_jsonl, Corpus, CorpusFormat, SyntheticSpec,
};
use glosspipe::error::{Error, Result};
use glosspipe::evaluation::{
    align, error_report, render_text_report, token_accuracy, tokenize_gloss, AlignedPrediction,
};
use glosspipe::experiments::{
    render_table, run_experiment_with_diagnostics, ExperimentConfig, ExperimentId,
    PredictionRecord, ResultsTable,
};
use glosspipe::gateway::{BackendConfig, BackendKind};
use glosspipe::lexicon::{Glossary, GlossarySubset, TagClassifier};
use glosspipe::neural::{train_tagger, TaggerConfig, TaggerModel};
use glosspipe::prompting::{
    render_generation_prompt, render_hybrid_prompt, PromptMode, PromptRequest, RenderedExample,
};
use glosspipe::retrieval::{build_index, save_index, top_k, TfIdfConfig};

#[derive(Parser)]
#[command(
    name = "glosspipe",
    version,
    about = "Interlinear glossing pipeline: tagger training, example retrieval, \
             prompt rendering, and experiment runners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus into train and test sets by whole documents.
    Split(SplitArgs),
    /// Print descriptive statistics for a corpus.
    Stats(StatsArgs),
    /// List near-duplicate sentence pairs by TF-IDF cosine similarity.
    Dedup(DedupArgs),
    /// Generate a deterministic synthetic corpus with a one-to-one
    /// morpheme-to-gloss mapping.
    Synth(SynthArgs),
    /// Train the neural tagger and write a checkpoint.
    Train(TrainArgs),
    /// Gloss a corpus with a trained tagger and score against gold.
    Predict(PredictArgs),
    /// Build (and optionally query) a TF-IDF retrieval index.
    Index(IndexArgs),
    /// Render one prompt exactly as an experiment run would.
    RenderPrompt(RenderPromptArgs),
    /// Run one of the four experiments from a JSON config file.
    RunExp(RunExpArgs),
    /// Display a results table or a stratified error report.
    Report(ReportArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file to read.
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus file format.
    #[arg(long, value_enum, default_value = "jsonl")]
    format: CorpusFormat,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        parse_corpus(&self.corpus, self.format)
    }
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Fraction of documents assigned to the test side.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Where to write the train split (JSONL).
    #[arg(long)]
    train_out: PathBuf,
    /// Where to write the test split (JSONL).
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// File of extra labels to treat as grammatical, one per line.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Cosine similarity at or above which a pair counts as a duplicate.
    #[arg(long, default_value_t = 0.95)]
    threshold: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Where to write the corpus (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    vocab_size: usize,
    /// How many gloss labels are grammatical-style.
    #[arg(long, default_value_t = 12)]
    grammatical: usize,
    #[arg(long, default_value_t = 200)]
    sentences: usize,
    #[arg(long, default_value_t = 10)]
    documents: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Optional JSON file for the gold morpheme-to-gloss mapping.
    #[arg(long)]
    mapping_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Tagger hyperparameters as JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Suppress the per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained tagger checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Optional JSONL output with one record per sentence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training corpus; when given, prints the stratified error report
    /// (frequency bins need training counts).
    #[arg(long)]
    report_train: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Where to write the index (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    ngram_min: usize,
    #[arg(long, default_value_t = 4)]
    ngram_max: usize,
    /// Keep case instead of lowercasing before n-gram extraction.
    #[arg(long)]
    keep_case: bool,
    /// Print the nearest training sentences for this query text.
    #[arg(long)]
    query: Option<String>,
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Args)]
struct RenderPromptArgs {
    #[arg(long, value_enum)]
    mode: PromptMode,
    /// Render directly for this segmented sentence (no corpus needed).
    #[arg(long)]
    segmented: Option<String>,
    /// In-context example as "segmented|gloss"; repeatable, direct mode.
    #[arg(long)]
    example: Vec<String>,
    /// Initial attempt for hybrid prompts (required in direct mode).
    #[arg(long)]
    initial_attempt: Option<String>,
    /// JSON array of [morpheme, gloss] pairs for the dictionary section.
    #[arg(long)]
    glossary_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    glossary_mode: GlossarySubset,
    /// Corpus mode: split this corpus and render for one test item.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: CorpusFormat,
    /// Test-set sentence index (corpus mode).
    #[arg(long, default_value_t = 0)]
    item: usize,
    /// Retrieved example count (corpus mode).
    #[arg(long, default_value_t = 3)]
    shots: usize,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 13)]
    split_seed: u64,
    /// Tagger checkpoint supplying the initial attempt (hybrid corpus mode).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Print the system message instead of the user message.
    #[arg(long)]
    show_system: bool,
}

#[derive(Args)]
struct RunExpArgs {
    /// Experiment number, 1 through 4.
    number: u8,
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the config's cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    /// Selects a backend: a configured model name, a bare test kind
    /// (echo-initial, perfect-oracle), or scripted:<responses.jsonl>.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    selection_seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// A results.json produced by run-exp: prints its table.
    #[arg(long)]
    results: Option<PathBuf>,
    /// A predictions.jsonl produced by run-exp: prints an error report.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Training corpus for frequency bins (required with --predictions).
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: CorpusFormat,
    /// Restrict the error report to one model.
    #[arg(long)]
    model: Option<String>,
    /// Restrict the error report to one condition label.
    #[arg(long)]
    condition: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) | Error::Config(_) => 2,
        Error::Backend(_) => 4,
        _ => 3,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Split(args) => cmd_split(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Dedup(args) => cmd_dedup(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Index(args) => cmd_index(args),
        Command::RenderPrompt(args) => cmd_render_prompt(args),
        Command::RunExp(args) => cmd_run_exp(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn classifier_from(labels: Option<&Path>) -> Result<TagClassifier> {
    match labels {
        Some(path) => TagClassifier::from_label_file(path),
        None => Ok(TagClassifier::new()),
    }
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let (train, test) = document_split(&corpus, args.test_fraction, args.seed)?;
    write_jsonl(&train, &args.train_out)?;
    write_jsonl(&test, &args.test_out)?;
    println!(
        "split {} sentences into {} train / {} test ({} / {} documents)",
        corpus.len(),
        train.len(),
        test.len(),
        train.documents().len(),
        test.documents().len()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let classifier = classifier_from(args.labels.as_deref())?;
    println!("{}", corpus_stats(&corpus, &classifier));
    Ok(())
}

fn cmd_dedup(args: DedupArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let index = build_index(&corpus.source_surfaces(), &TfIdfConfig::default())?;
    let pairs = near_duplicates(&corpus, &index, args.threshold)?;
    if pairs.is_empty() {
        println!("no near-duplicate pairs at threshold {}", args.threshold);
        return Ok(());
    }
    for pair in &pairs {
        println!(
            "{:.4}\t{}\t{}\t{}",
            pair.similarity,
            pair.first,
            pair.second,
            corpus.sentences()[pair.second].source_surface()
        );
    }
    println!("{} near-duplicate pairs at threshold {}", pairs.len(), args.threshold);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        vocab_size: args.vocab_size,
        grammatical_label_count: args.grammatical,
        sentence_count: args.sentences,
        document_count: args.documents,
        ..SyntheticSpec::default()
    };
    let (corpus, mapping) = generate_synthetic_corpus(&spec, args.seed)?;
    write_jsonl(&corpus, &args.out)?;
    if let Some(path) = &args.mapping_out {
        std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(&mapping)?))
            .map_err(|e| Error::io(path, e))?;
    }
    println!(
        "wrote {} sentences across {} documents to {}",
        corpus.len(),
        corpus.documents().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<TaggerConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TaggerConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let outcome = train_tagger(&corpus, &config)?;
    if !args.quiet {
        for record in &outcome.history {
            println!(
                "epoch {:>3}  train nll {:>12.6}  validation nll {:>12.6}",
                record.epoch, record.train_nll, record.validation_nll
            );
        }
    }
    outcome.model.save(&args.out)?;
    println!(
        "saved checkpoint to {} (best epoch {}, {} parameters)",
        args.out.display(),
        outcome.best_epoch,
        outcome.model.params().parameter_count()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = TaggerModel::load(&args.checkpoint)?;
    let corpus = args.corpus.load()?;
    let mut aligned: Vec<AlignedPrediction> = Vec::with_capacity(corpus.len());
    let mut failures = 0usize;
    let mut lines = String::new();
    for (item, sentence) in corpus.sentences().iter().enumerate() {
        let (predicted_tokens, failure) = match model.gloss(&sentence.source_words) {
            Ok(tokens) => (tokens, None),
            Err(e) => {
                failures += 1;
                (Vec::new(), Some(e.to_string()))
            }
        };
        aligned.push(align(
            &predicted_tokens,
            &sentence.source_words,
            &sentence.gloss_words,
        )?);
        if args.out.is_some() {
            let record = serde_json::json!({
                "item": item,
                "document_id": sentence.document_id,
                "segmented": sentence.source_surface(),
                "gold": sentence.gloss_surface(),
                "predicted": words_to_surface(&predicted_tokens),
                "failure": failure,
            });
            lines.push_str(&serde_json::to_string(&record)?);
            lines.push('\n');
        }
    }
    if let Some(path) = &args.out {
        std::fs::write(path, &lines).map_err(|e| Error::io(path, e))?;
    }
    let accuracy = token_accuracy(&aligned)?;
    println!(
        "token accuracy {:.4} ({} / {} morphemes, {} failed sentences)",
        accuracy.accuracy, accuracy.correct, accuracy.total, failures
    );
    if let Some(train_path) = &args.report_train {
        let train = parse_corpus(train_path, args.corpus.format)?;
        let report = error_report(&aligned, &train, &TagClassifier::new(), failures);
        println!();
        print!("{}", render_text_report(&report));
    }
    Ok(())
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    let corpus = args.corpus.load()?;
    let texts = corpus.source_surfaces();
    let config = TfIdfConfig {
        ngram_min: args.ngram_min,
        ngram_max: args.ngram_max,
        lowercase: !args.keep_case,
    };
    let index = build_index(&texts, &config)?;
    println!(
        "indexed {} sentences, {} n-gram features",
        index.len(),
        index.vocabulary_size()
    );
    if let Some(path) = &args.out {
        save_index(&index, path)?;
        println!("wrote index to {}", path.display());
    }
    if let Some(query) = &args.query {
        for (rank, (i, score)) in top_k(&index, query, args.k)?.into_iter().enumerate() {
            println!("{:>2}. [{i}] {score:.4}  {}", rank + 1, texts[i]);
        }
    }
    Ok(())
}

fn parse_example_flag(raw: &str, ordinal: usize) -> Result<RenderedExample> {
    let (segmented, gloss) = raw.split_once('|').ok_or_else(|| {
        Error::Argument(format!(
            "--example must look like \"segmented|gloss\", got {raw:?}"
        ))
    })?;
    RenderedExample::new(ordinal, segmented.trim(), gloss.trim())
}

fn load_glossary_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pairs: Vec<(String, String)> = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Ok(pairs)
}

fn cmd_render_prompt(args: RenderPromptArgs) -> Result<()> {
    let request = match (&args.segmented, &args.corpus) {
        (Some(segmented), None) => render_direct(&args, segmented)?,
        (None, Some(corpus_path)) => render_from_corpus(&args, corpus_path)?,
        _ => {
            return Err(Error::Argument(
                "pass exactly one of --segmented (direct mode) or --corpus (corpus mode)".into(),
            ))
        }
    };
    if args.show_system {
        print!("{}", request.system_text);
    } else {
        print!("{}", request.user_text);
    }
    Ok(())
}

fn render_direct(args: &RenderPromptArgs, segmented: &str) -> Result<PromptRequest> {
    let mut examples = Vec::with_capacity(args.example.len());
    for (i, raw) in args.example.iter().enumerate() {
        examples.push(parse_example_flag(raw, i + 1)?);
    }
    let pairs = match &args.glossary_file {
        Some(path) => Some(load_glossary_pairs(path)?),
        None => None,
    };
    let glossary = pairs.as_ref().map(|p| (args.glossary_mode, p.as_slice()));
    match args.mode {
        PromptMode::Generation => render_generation_prompt(&examples, glossary, segmented),
        PromptMode::Hybrid => {
            let attempt = args.initial_attempt.as_deref().ok_or_else(|| {
                Error::Argument("hybrid prompts need --initial-attempt in direct mode".into())
            })?;
            render_hybrid_prompt(&examples, glossary, segmented, attempt)
        }
    }
}

fn render_from_corpus(args: &RenderPromptArgs, corpus_path: &Path) -> Result<PromptRequest> {
    let corpus = parse_corpus(corpus_path, args.format)?;
    let (train, test) = document_split(&corpus, args.test_fraction, args.split_seed)?;
    let sentence = test.sentences().get(args.item).ok_or_else(|| {
        Error::Argument(format!(
            "--item {} is out of range: the test split has {} sentences",
            args.item,
            test.len()
        ))
    })?;
    let segmented = sentence.source_surface();

    let mut examples = Vec::new();
    if args.shots > 0 {
        let index = build_index(&train.source_surfaces(), &TfIdfConfig::default())?;
        // Most similar example last, matching the experiment runners.
        let selected: Vec<usize> = top_k(&index, &segmented, args.shots)?
            .into_iter()
            .map(|(i, _)| i)
            .rev()
            .collect();
        for (ordinal, train_index) in selected.iter().enumerate() {
            let train_sentence = &train.sentences()[*train_index];
            examples.push(RenderedExample::new(
                ordinal + 1,
                train_sentence.source_surface(),
                train_sentence.gloss_surface(),
            )?);
        }
    }

    let subset;
    let glossary = match args.glossary_mode {
        GlossarySubset::None => None,
        mode => {
            subset = Glossary::build(&train).select_subset(mode, &TagClassifier::new());
            Some((mode, subset.as_slice()))
        }
    };

    match args.mode {
        PromptMode::Generation => render_generation_prompt(&examples, glossary, &segmented),
        PromptMode::Hybrid => {
            let attempt = match (&args.initial_attempt, &args.checkpoint) {
                (Some(attempt), _) => attempt.clone(),
                (None, Some(checkpoint)) => {
                    let model = TaggerModel::load(checkpoint)?;
                    words_to_surface(&model.gloss(&sentence.source_words)?)
                }
                (None, None) => {
                    return Err(Error::Argument(
                        "hybrid prompts need --initial-attempt or --checkpoint".into(),
                    ))
                }
            };
            render_hybrid_prompt(&examples, glossary, &segmented, &attempt)
        }
    }
}

fn apply_backend_selector(config: &mut ExperimentConfig, selector: &str) -> Result<()> {
    if let Some((kind, argument)) = selector.split_once(':') {
        if kind == "scripted" {
            config.backends = vec![BackendConfig::new(BackendKind::Scripted, "scripted")];
            config.scripted_responses = Some(PathBuf::from(argument));
            return Ok(());
        }
        return Err(Error::Argument(format!(
            "unsupported backend selector {selector:?}; use a configured model name, \
             echo-initial, perfect-oracle, or scripted:<responses.jsonl>"
        )));
    }
    match selector {
        "echo-initial" => {
            config.backends = vec![BackendConfig::new(BackendKind::EchoInitial, "echo")];
        }
        "perfect-oracle" => {
            config.backends = vec![BackendConfig::new(BackendKind::PerfectOracle, "oracle")];
        }
        name => {
            let filtered: Vec<BackendConfig> = config
                .backends
                .iter()
                .filter(|b| b.model_name == name)
                .cloned()
                .collect();
            if filtered.is_empty() {
                return Err(Error::Argument(format!(
                    "no configured backend is named {name:?}"
                )));
            }
            config.backends = filtered;
        }
    }
    Ok(())
}

fn cmd_run_exp(args: RunExpArgs) -> Result<()> {
    let id = ExperimentId::from_number(args.number)?;
    let mut config = ExperimentConfig::load(&args.config)?;
    if config.experiment != id {
        return Err(Error::Config(format!(
            "{} is configured for {}, but run-exp {} was requested",
            args.config.display(),
            config.experiment.name(),
            args.number
        )));
    }
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    if let Some(dir) = args.cache_dir {
        config.cache_dir = Some(dir);
    }
    if let Some(limit) = args.max_concurrency {
        config.max_concurrency = limit;
    }
    if let Some(seed) = args.split_seed {
        config.split_seed = seed;
    }
    if let Some(seed) = args.model_seed {
        config.model_seed = seed;
    }
    if let Some(seed) = args.selection_seed {
        config.selection_seed = seed;
    }
    if let Some(selector) = &args.backend {
        apply_backend_selector(&mut config, selector)?;
    }
    config.validate()?;

    let (table, diagnostics) = run_experiment_with_diagnostics(&config)?;
    print!("{}", render_table(&table));
    println!(
        "\n{} backend calls, {} / {} items failed; artifacts in {}",
        diagnostics.backend_calls,
        diagnostics.failed_items,
        diagnostics.scored_items,
        config.output_dir.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    match (&args.results, &args.predictions) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: ResultsTable = serde_json::from_str(&text)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            print!("{}", render_table(&table));
            Ok(())
        }
        (None, Some(path)) => {
            let train_path = args.train.as_ref().ok_or_else(|| {
                Error::Argument("--predictions needs --train for frequency bins".into())
            })?;
            let train = parse_corpus(train_path, args.format)?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut aligned = Vec::new();
            let mut failures = 0usize;
            for (lineno, line) in text.lines().enumerate() {
                let record: PredictionRecord = serde_json::from_str(line).map_err(|e| {
                    Error::parse(format!("{}:{}", path.display(), lineno + 1), e.to_string())
                })?;
                if args.model.as_ref().is_some_and(|m| *m != record.model)
                    || args.condition.as_ref().is_some_and(|c| *c != record.condition)
                {
                    continue;
                }
                failures += usize::from(record.failure.is_some());
                aligned.push(align(
                    &tokenize_gloss(&record.predicted),
                    &tokenize_gloss(&record.segmented),
                    &tokenize_gloss(&record.gold),
                )?);
            }
            if aligned.is_empty() {
                return Err(Error::Data(
                    "no prediction records matched the model/condition filter".into(),
                ));
            }
            let report = error_report(&aligned, &train, &TagClassifier::new(), failures);
            print!("{}", render_text_report(&report));
            Ok(())
        }
        _ => Err(Error::Argument(
            "pass exactly one of --results or --predictions".into(),
        )),
    }
}
