//! Interlinear glossed text (IGT) corpora.
//!
//! A corpus is a list of sentences, each carrying a segmented source line and
//! a gloss line that align 1:1 at the word level and, within each word, at
//! the morpheme level. Surfaces use spaces between words and hyphens between
//! morphemes:
//!
//! ```text
//! src:   jïlgï-nan iyi
//! gloss: horse-ABL two
//! ```
//!
//! The module also provides document-level train/test splitting (documents
//! are narratives; sentences from one document never straddle the split),
//! TF-IDF near-duplicate detection, corpus statistics, and a deterministic
//! synthetic corpus generator with a bijective morpheme-to-gloss mapping.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{MorphemeClass, TagClassifier};
use crate::retrieval::TfIdfIndex;

/// One interlinear sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IgtSentence {
    /// Identifier of the document (narrative) this sentence belongs to.
    pub document_id: String,
    /// Source words, each a non-empty list of morphemes.
    pub source_words: Vec<Vec<String>>,
    /// Gloss words, aligned 1:1 with `source_words` at word and morpheme level.
    pub gloss_words: Vec<Vec<String>>,
    /// Optional free translation.
    pub translation: Option<String>,
}

impl IgtSentence {
    /// Builds a sentence and checks every structural invariant: at least one
    /// word, equal word counts, equal per-word morpheme counts, and tokens
    /// that are non-empty and free of whitespace and hyphens. `location` is
    /// used in error messages (e.g. `"corpus.jsonl:17"`).
    pub fn new(
        document_id: impl Into<String>,
        source_words: Vec<Vec<String>>,
        gloss_words: Vec<Vec<String>>,
        translation: Option<String>,
        location: &str,
    ) -> Result<Self> {
        let document_id = document_id.into();
        if document_id.is_empty() {
            return Err(Error::parse(location, "empty document id"));
        }
        if source_words.is_empty() {
            return Err(Error::parse(location, "sentence has no words"));
        }
        if source_words.len() != gloss_words.len() {
            return Err(Error::alignment(
                location,
                format!(
                    "source has {} words but gloss has {}",
                    source_words.len(),
                    gloss_words.len()
                ),
            ));
        }
        for (w, (src, gls)) in source_words.iter().zip(&gloss_words).enumerate() {
            if src.len() != gls.len() {
                return Err(Error::alignment(
                    location,
                    format!(
                        "word {}: source has {} morphemes but gloss has {}",
                        w + 1,
                        src.len(),
                        gls.len()
                    ),
                ));
            }
            for token in src.iter().chain(gls.iter()) {
                validate_token(token, location)?;
            }
        }
        Ok(IgtSentence {
            document_id,
            source_words,
            gloss_words,
            translation,
        })
    }

    /// Source line as a surface string (hyphens within words, spaces between).
    pub fn source_surface(&self) -> String {
        words_to_surface(&self.source_words)
    }

    /// Gloss line as a surface string.
    pub fn gloss_surface(&self) -> String {
        words_to_surface(&self.gloss_words)
    }

    /// Number of words.
    pub fn word_count(&self) -> usize {
        self.source_words.len()
    }

    /// Total number of morphemes across all words.
    pub fn morpheme_count(&self) -> usize {
        self.source_words.iter().map(Vec::len).sum()
    }
}

fn validate_token(token: &str, location: &str) -> Result<()> {
    if token.is_empty() {
        return Err(Error::parse(
            location,
            "empty morpheme (doubled hyphen or space?)",
        ));
    }
    if token.chars().any(char::is_whitespace) {
        return Err(Error::parse(
            location,
            format!("morpheme {token:?} contains whitespace"),
        ));
    }
    if token.contains('-') {
        return Err(Error::parse(
            location,
            format!("morpheme {token:?} contains a hyphen"),
        ));
    }
    Ok(())
}

/// Joins nested words back into a surface string: morphemes with `-`,
/// words with a single space.
pub fn words_to_surface(words: &[Vec<String>]) -> String {
    words
        .iter()
        .map(|w| w.join("-"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits a surface string into words and morphemes, strictly: empty words
/// (doubled spaces) or empty morphemes (doubled hyphens) are parse errors.
pub fn surface_to_words(surface: &str, location: &str) -> Result<Vec<Vec<String>>> {
    if surface.trim().is_empty() {
        return Err(Error::parse(location, "empty line"));
    }
    let mut words = Vec::new();
    for word in surface.split(' ') {
        if word.is_empty() {
            return Err(Error::parse(location, "empty word (doubled space?)"));
        }
        let morphemes: Vec<String> = word.split('-').map(str::to_string).collect();
        for m in &morphemes {
            validate_token(m, location)?;
        }
        words.push(morphemes);
    }
    Ok(words)
}

/// An immutable collection of [`IgtSentence`]s with a derived document map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<IgtSentence>,
    documents: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Builds a corpus from sentences. Errors on an empty list.
    pub fn new(sentences: Vec<IgtSentence>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Data("empty corpus".into()));
        }
        let mut documents: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in sentences.iter().enumerate() {
            documents.entry(s.document_id.clone()).or_default().push(i);
        }
        Ok(Corpus {
            sentences,
            documents,
        })
    }

    /// All sentences, in file order.
    pub fn sentences(&self) -> &[IgtSentence] {
        &self.sentences
    }

    /// Number of sentences.
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    /// True when the corpus holds no sentences (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Map from document id to the indices of its sentences, ordered by id.
    pub fn documents(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.documents
    }

    /// Source surfaces of every sentence, in order.
    pub fn source_surfaces(&self) -> Vec<String> {
        self.sentences.iter().map(IgtSentence::source_surface).collect()
    }
}

/// On-disk corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// One JSON object per line: `{"doc", "src", "gloss", "translation"?}`.
    Jsonl,
    /// Toolbox-style marker lines: `\id`, `\t`, `\g`, `\f`, blank-separated.
    FlatIgt,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    doc: String,
    src: String,
    gloss: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    translation: Option<String>,
}

/// Reads a corpus file. Every record is validated; errors carry `file:line`.
pub fn parse_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&text, &name),
        CorpusFormat::FlatIgt => parse_flat_igt(&text, &name),
    }
}

fn parse_jsonl(text: &str, name: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let location = format!("{}:{}", name, lineno + 1);
        if line.trim().is_empty() {
            return Err(Error::parse(location, "blank line in JSONL input"));
        }
        let record: JsonlRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(&location, format!("invalid JSON record: {e}")))?;
        let source_words = surface_to_words(&record.src, &location)?;
        let gloss_words = surface_to_words(&record.gloss, &location)?;
        sentences.push(IgtSentence::new(
            record.doc,
            source_words,
            gloss_words,
            record.translation,
            &location,
        )?);
    }
    if sentences.is_empty() {
        return Err(Error::parse(name, "empty corpus file"));
    }
    Corpus::new(sentences)
}

fn parse_flat_igt(text: &str, name: &str) -> Result<Corpus> {
    struct Pending {
        t: Option<(String, usize)>,
        g: Option<(String, usize)>,
        f: Option<String>,
    }
    impl Pending {
        fn empty(&self) -> bool {
            self.t.is_none() && self.g.is_none() && self.f.is_none()
        }
    }

    let mut sentences = Vec::new();
    let mut current_doc: Option<String> = None;
    let mut pending = Pending {
        t: None,
        g: None,
        f: None,
    };

    let mut flush = |pending: &mut Pending, doc: &Option<String>| -> Result<()> {
        if pending.empty() {
            return Ok(());
        }
        let (src, t_line) = pending
            .t
            .take()
            .ok_or_else(|| Error::parse(name, "record is missing a \\t line"))?;
        let (gls, g_line) = pending
            .g
            .take()
            .ok_or_else(|| Error::parse(format!("{name}:{t_line}"), "record is missing a \\g line"))?;
        let doc = doc
            .clone()
            .ok_or_else(|| Error::parse(format!("{name}:{t_line}"), "no \\id in scope"))?;
        let location = format!("{name}:{g_line}");
        let source_words = surface_to_words(&src, &format!("{name}:{t_line}"))?;
        let gloss_words = surface_to_words(&gls, &location)?;
        sentences.push(IgtSentence::new(
            doc,
            source_words,
            gloss_words,
            pending.f.take(),
            &location,
        )?);
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end();
        let location = format!("{name}:{lineno}");
        if line.trim().is_empty() {
            flush(&mut pending, &current_doc)?;
            continue;
        }
        let (marker, rest) = match line.split_once(' ') {
            Some((m, r)) => (m, r.trim()),
            None => (line, ""),
        };
        match marker {
            "\\id" => {
                if !pending.empty() {
                    return Err(Error::parse(location, "\\id inside a record"));
                }
                if rest.is_empty() {
                    return Err(Error::parse(location, "\\id without a document id"));
                }
                current_doc = Some(rest.to_string());
            }
            "\\t" => {
                if pending.t.is_some() {
                    return Err(Error::parse(location, "duplicate \\t line in record"));
                }
                pending.t = Some((rest.to_string(), lineno));
            }
            "\\g" => {
                if pending.g.is_some() {
                    return Err(Error::parse(location, "duplicate \\g line in record"));
                }
                pending.g = Some((rest.to_string(), lineno));
            }
            "\\f" => {
                pending.f = Some(rest.to_string());
            }
            m if m.starts_with('\\') => {
                // Unknown fieldwork markers are tolerated and skipped.
            }
            _ => {
                return Err(Error::parse(
                    location,
                    format!("expected a \\marker line, found {line:?}"),
                ));
            }
        }
    }
    flush(&mut pending, &current_doc)?;

    if sentences.is_empty() {
        return Err(Error::parse(name, "empty corpus file"));
    }
    Corpus::new(sentences)
}

/// Writes a corpus as JSONL (the canonical on-disk format).
pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in corpus.sentences() {
        let record = JsonlRecord {
            doc: s.document_id.clone(),
            src: s.source_surface(),
            gloss: s.gloss_surface(),
            translation: s.translation.clone(),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Splits a corpus at document granularity.
///
/// Document ids are shuffled with a seeded generator, then assigned to the
/// test side greedily while that keeps the test sentence count at least as
/// close to `test_fraction * len` as stopping would. Whole documents land on
/// exactly one side. Returns `(train, test)`.
pub fn document_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if corpus.documents().len() < 2 {
        return Err(Error::Data(
            "document split needs at least 2 documents".into(),
        ));
    }

    let mut ids: Vec<&String> = corpus.documents().keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let target = test_fraction * corpus.len() as f64;
    let mut test_ids: Vec<&String> = Vec::new();
    let mut test_count = 0usize;
    for id in &ids {
        let size = corpus.documents()[*id].len();
        let if_added = (test_count + size) as f64 - target;
        let if_stopped = target - test_count as f64;
        if if_added.abs() <= if_stopped.abs() {
            test_ids.push(id);
            test_count += size;
        } else {
            break;
        }
    }
    // Degenerate corner cases: both sides must end up non-empty.
    if test_ids.is_empty() {
        test_ids.push(ids[0]);
    }
    if test_ids.len() == ids.len() {
        test_ids.pop();
    }

    let test_set: HashSet<&str> = test_ids.iter().map(|s| s.as_str()).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in corpus.sentences() {
        if test_set.contains(s.document_id.as_str()) {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((Corpus::new(train)?, Corpus::new(test)?))
}

/// A pair of sentences whose source lines are near-duplicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicatePair {
    /// Index of the earlier sentence.
    pub first: usize,
    /// Index of the later sentence.
    pub second: usize,
    /// Cosine similarity of the two TF-IDF vectors.
    pub similarity: f64,
}

/// Finds sentence pairs whose TF-IDF cosine similarity is at least
/// `threshold` (and strictly positive). `index` must have been built over
/// the corpus source surfaces, in corpus order. Pairs come back sorted by
/// descending similarity, ties by ascending indices.
pub fn near_duplicates(
    corpus: &Corpus,
    index: &TfIdfIndex,
    threshold: f64,
) -> Result<Vec<DuplicatePair>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Argument(format!(
            "threshold must be in [0, 1], got {threshold}"
        )));
    }
    if index.len() != corpus.len() {
        return Err(Error::Argument(format!(
            "index holds {} documents but corpus has {} sentences",
            index.len(),
            corpus.len()
        )));
    }
    let mut pairs = Vec::new();
    for i in 0..corpus.len() {
        for j in (i + 1)..corpus.len() {
            let sim = index.doc_cosine(i, j);
            if sim >= threshold && sim > 0.0 {
                pairs.push(DuplicatePair {
                    first: i,
                    second: j,
                    similarity: sim,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("similarities are finite")
            .then(a.first.cmp(&b.first))
            .then(a.second.cmp(&b.second))
    });
    Ok(pairs)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stdev: f64,
}

fn mean_std(values: impl Iterator<Item = f64>) -> MeanStd {
    let values: Vec<f64> = values.collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        stdev: var.sqrt(),
    }
}

/// Descriptive statistics over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub document_count: usize,
    /// Distinct gloss labels classified as grammatical.
    pub unique_grammatical_labels: usize,
    /// Distinct gloss labels classified as lexical.
    pub unique_lexical_labels: usize,
    pub words_per_sentence: MeanStd,
    pub morphemes_per_word: MeanStd,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences            {}", self.sentence_count)?;
        writeln!(f, "documents            {}", self.document_count)?;
        writeln!(f, "grammatical labels   {}", self.unique_grammatical_labels)?;
        writeln!(f, "lexical labels       {}", self.unique_lexical_labels)?;
        writeln!(
            f,
            "words / sentence     {:.2} ± {:.2}",
            self.words_per_sentence.mean, self.words_per_sentence.stdev
        )?;
        write!(
            f,
            "morphemes / word     {:.2} ± {:.2}",
            self.morphemes_per_word.mean, self.morphemes_per_word.stdev
        )
    }
}

/// Computes corpus statistics, classifying gloss labels with `classifier`.
pub fn corpus_stats(corpus: &Corpus, classifier: &TagClassifier) -> CorpusStats {
    let mut grammatical: BTreeSet<&str> = BTreeSet::new();
    let mut lexical: BTreeSet<&str> = BTreeSet::new();
    for s in corpus.sentences() {
        for word in &s.gloss_words {
            for label in word {
                match classifier.classify(label) {
                    MorphemeClass::Grammatical => grammatical.insert(label),
                    MorphemeClass::Lexical => lexical.insert(label),
                };
            }
        }
    }
    CorpusStats {
        sentence_count: corpus.len(),
        document_count: corpus.documents().len(),
        unique_grammatical_labels: grammatical.len(),
        unique_lexical_labels: lexical.len(),
        words_per_sentence: mean_std(corpus.sentences().iter().map(|s| s.word_count() as f64)),
        morphemes_per_word: mean_std(
            corpus
                .sentences()
                .iter()
                .flat_map(|s| s.source_words.iter().map(|w| w.len() as f64)),
        ),
    }
}

/// Parameters for [`generate_synthetic_corpus`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of distinct morphemes (= number of distinct gloss labels).
    pub vocab_size: usize,
    /// How many of the gloss labels are grammatical-style (`G1`, `G2`, ...).
    pub grammatical_label_count: usize,
    pub sentence_count: usize,
    pub document_count: usize,
    /// Inclusive range of words per sentence.
    pub words_per_sentence: (usize, usize),
    /// Inclusive range of morphemes per word.
    pub morphemes_per_word: (usize, usize),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 50,
            grammatical_label_count: 12,
            sentence_count: 200,
            document_count: 10,
            words_per_sentence: (3, 6),
            morphemes_per_word: (1, 2),
        }
    }
}

const CONSONANTS: [char; 10] = ['b', 'd', 'g', 'k', 'm', 'n', 'p', 'r', 's', 't'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

/// Builds `n` distinct morpheme strings from CV syllables. Morphemes are
/// chosen so no two share the same character multiset: the tagger encoder
/// mean-pools character embeddings (order-invariant), so anagrams would be
/// indistinguishable and a bijective corpus would stop being learnable.
fn morpheme_inventory(n: usize) -> Result<Vec<String>> {
    let syllables: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|c| VOWELS.iter().map(move |v| format!("{c}{v}")))
        .collect();
    let mut seen_signatures: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut push = |m: String, out: &mut Vec<String>| {
        let mut sig: Vec<char> = m.chars().collect();
        sig.sort_unstable();
        if seen_signatures.insert(sig.into_iter().collect()) {
            out.push(m);
        }
    };
    for s in &syllables {
        if out.len() == n {
            return Ok(out);
        }
        push(s.clone(), &mut out);
    }
    for a in &syllables {
        for b in &syllables {
            if out.len() == n {
                return Ok(out);
            }
            push(format!("{a}{b}"), &mut out);
        }
    }
    if out.len() >= n {
        out.truncate(n);
        Ok(out)
    } else {
        Err(Error::Argument(format!(
            "vocab_size {} exceeds the available morpheme inventory ({})",
            n,
            out.len()
        )))
    }
}

/// Generates a deterministic corpus in which every morpheme maps to exactly
/// one gloss label (so a perfect tagger exists). Returns the corpus and the
/// gold morpheme-to-gloss mapping.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(Corpus, BTreeMap<String, String>)> {
    if spec.grammatical_label_count < 1 || spec.vocab_size < spec.grammatical_label_count {
        return Err(Error::Argument(format!(
            "need vocab_size >= grammatical_label_count >= 1, got {} and {}",
            spec.vocab_size, spec.grammatical_label_count
        )));
    }
    if spec.document_count < 1 || spec.sentence_count < spec.document_count {
        return Err(Error::Argument(format!(
            "need sentence_count >= document_count >= 1, got {} and {}",
            spec.sentence_count, spec.document_count
        )));
    }
    for (name, (lo, hi)) in [
        ("words_per_sentence", spec.words_per_sentence),
        ("morphemes_per_word", spec.morphemes_per_word),
    ] {
        if lo < 1 || lo > hi {
            return Err(Error::Argument(format!(
                "{name} range ({lo}, {hi}) is not a valid 1-based inclusive range"
            )));
        }
    }

    let morphemes = morpheme_inventory(spec.vocab_size)?;
    let mapping: BTreeMap<String, String> = morphemes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let gloss = if i < spec.grammatical_label_count {
                format!("G{}", i + 1)
            } else {
                format!("w{}", i + 1 - spec.grammatical_label_count)
            };
            (m.clone(), gloss)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = spec.sentence_count / spec.document_count;
    let remainder = spec.sentence_count % spec.document_count;
    let mut sentences = Vec::with_capacity(spec.sentence_count);
    for doc in 0..spec.document_count {
        let doc_id = format!("d{doc:02}");
        let doc_size = base + usize::from(doc < remainder);
        for _ in 0..doc_size {
            let word_count = rng.random_range(spec.words_per_sentence.0..=spec.words_per_sentence.1);
            let mut source_words = Vec::with_capacity(word_count);
            let mut gloss_words = Vec::with_capacity(word_count);
            for _ in 0..word_count {
                let morph_count =
                    rng.random_range(spec.morphemes_per_word.0..=spec.morphemes_per_word.1);
                let mut src = Vec::with_capacity(morph_count);
                let mut gls = Vec::with_capacity(morph_count);
                for _ in 0..morph_count {
                    let m = &morphemes[rng.random_range(0..spec.vocab_size)];
                    src.push(m.clone());
                    gls.push(mapping[m].clone());
                }
                source_words.push(src);
                gloss_words.push(gls);
            }
            sentences.push(IgtSentence::new(
                doc_id.clone(),
                source_words,
                gloss_words,
                None,
                "synthetic",
            )?);
        }
    }
    Ok((Corpus::new(sentences)?, mapping))
}
