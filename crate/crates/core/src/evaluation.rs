//! Token-level gloss evaluation.
//!
//! Predictions are compared against gold glosses positionally, anchored on
//! the gold structure: the t-th morpheme of the w-th word is right or wrong,
//! missing predicted material counts as wrong (ABSENT), and extra predicted
//! material is ignored for accuracy but logged. Accuracy is exact
//! case-sensitive string match.
//!
//! [`error_report`] stratifies the same aligned pairs by gloss class
//! (grammatical vs lexical) and, for lexical morphemes, by how often the
//! source morpheme appeared in training: Infrequent (1–5), Common (6–20),
//! Frequent (>20), with unseen morphemes in their own bin.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lexicon::{MorphemeClass, TagClassifier};

/// Splits a gloss surface into words (single spaces) and labels (hyphens).
/// Lenient on purpose — model output is messy: empty tokens from doubled
/// separators are dropped rather than rejected.
pub fn tokenize_gloss(surface: &str) -> Vec<Vec<String>> {
    surface
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(|w| {
            w.split('-')
                .filter(|m| !m.is_empty())
                .map(str::to_string)
                .collect::<Vec<String>>()
        })
        .filter(|w: &Vec<String>| !w.is_empty())
        .collect()
}

/// One gold morpheme position and what was predicted for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphemePair {
    /// Source morpheme at this position (empty when aligned without source;
    /// see [`align_glosses`]).
    pub source: String,
    /// Gold gloss label.
    pub gold: String,
    /// Predicted label, or `None` when the prediction had no token here.
    pub predicted: Option<String>,
}

impl MorphemePair {
    /// Exact, case-sensitive match; ABSENT never matches.
    pub fn is_correct(&self) -> bool {
        self.predicted.as_deref() == Some(self.gold.as_str())
    }
}

/// A prediction aligned against one gold sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AlignedPrediction {
    /// One pair per gold morpheme, in order.
    pub pairs: Vec<MorphemePair>,
    /// True when predicted and gold word counts differ.
    pub word_count_mismatch: bool,
    /// Word positions (present on both sides) whose morpheme counts differ.
    pub morpheme_count_mismatches: usize,
    /// Predicted morphemes with no gold counterpart (ignored for accuracy).
    pub extra_predicted_morphemes: usize,
}

/// Aligns a predicted gloss structure against gold, anchored on gold.
/// `source` must be shape-identical to `gold` (the corpus invariant); it
/// feeds the frequency bins of [`error_report`].
pub fn align(
    predicted: &[Vec<String>],
    source: &[Vec<String>],
    gold: &[Vec<String>],
) -> Result<AlignedPrediction> {
    if source.len() != gold.len()
        || source
            .iter()
            .zip(gold)
            .any(|(s, g)| s.len() != g.len())
    {
        return Err(Error::Argument(
            "source and gold gloss structures differ in shape".into(),
        ));
    }
    let mut aligned = AlignedPrediction {
        word_count_mismatch: predicted.len() != gold.len(),
        ..AlignedPrediction::default()
    };
    for (w, (src_word, gold_word)) in source.iter().zip(gold).enumerate() {
        let pred_word: &[String] = predicted.get(w).map(Vec::as_slice).unwrap_or(&[]);
        if w < predicted.len() && pred_word.len() != gold_word.len() {
            aligned.morpheme_count_mismatches += 1;
        }
        aligned.extra_predicted_morphemes += pred_word.len().saturating_sub(gold_word.len());
        for (m, (src, gold_label)) in src_word.iter().zip(gold_word).enumerate() {
            aligned.pairs.push(MorphemePair {
                source: src.clone(),
                gold: gold_label.clone(),
                predicted: pred_word.get(m).cloned(),
            });
        }
    }
    // Extra predicted words beyond the gold sentence.
    for pred_word in predicted.iter().skip(gold.len()) {
        aligned.extra_predicted_morphemes += pred_word.len();
    }
    Ok(aligned)
}

/// [`align`] without source morphemes (accuracy-only flows, e.g. the C API).
/// The resulting pairs carry empty `source` strings, so frequency bins in
/// [`error_report`] would be meaningless; use [`align`] when reporting.
pub fn align_glosses(predicted: &[Vec<String>], gold: &[Vec<String>]) -> AlignedPrediction {
    let source: Vec<Vec<String>> = gold
        .iter()
        .map(|w| w.iter().map(|_| String::new()).collect())
        .collect();
    align(predicted, &source, gold).expect("source was built shape-identical to gold")
}

/// Correct/total counts with their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BinStats {
    pub correct: usize,
    pub total: usize,
}

impl BinStats {
    fn add(&mut self, correct: bool) {
        self.correct += usize::from(correct);
        self.total += 1;
    }

    /// Accuracy, or `None` for an empty bin.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Token accuracy over a set of aligned predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

/// Computes exact-match token accuracy over gold positions. Errors when
/// there are no gold morphemes at all (empty test set).
pub fn token_accuracy(aligned: &[AlignedPrediction]) -> Result<Accuracy> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for a in aligned {
        for p in &a.pairs {
            correct += usize::from(p.is_correct());
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("empty test set: no gold morphemes".into()));
    }
    Ok(Accuracy {
        accuracy: correct as f64 / total as f64,
        correct,
        total,
    })
}

/// Accuracy of lexical morphemes bucketed by training frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FrequencyBins {
    /// Source morpheme never seen in training.
    pub unseen: BinStats,
    /// Seen 1–5 times.
    pub infrequent: BinStats,
    /// Seen 6–20 times.
    pub common: BinStats,
    /// Seen more than 20 times.
    pub frequent: BinStats,
}

/// One (gold, predicted) cell of the confusion table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub gold: String,
    /// `None` encodes ABSENT (no predicted token at the position).
    pub predicted: Option<String>,
    pub count: usize,
}

/// Stratified evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: BinStats,
    pub grammatical: BinStats,
    pub lexical: BinStats,
    pub frequency_bins: FrequencyBins,
    /// Test items whose backend call failed (scored all-wrong upstream).
    pub failure_count: usize,
    /// (gold, predicted) pair counts, including correct pairs; sorted by
    /// descending count, then gold, then predicted.
    pub confusion: Vec<ConfusionEntry>,
}

/// Builds the stratified report. `train` supplies source-morpheme token
/// frequencies; `failure_count` is forwarded from the runner.
pub fn error_report(
    aligned: &[AlignedPrediction],
    train: &Corpus,
    classifier: &TagClassifier,
    failure_count: usize,
) -> EvalReport {
    let mut frequency: HashMap<&str, usize> = HashMap::new();
    for s in train.sentences() {
        for word in &s.source_words {
            for m in word {
                *frequency.entry(m.as_str()).or_insert(0) += 1;
            }
        }
    }

    let mut report = EvalReport {
        overall: BinStats::default(),
        grammatical: BinStats::default(),
        lexical: BinStats::default(),
        frequency_bins: FrequencyBins::default(),
        failure_count,
        confusion: Vec::new(),
    };
    let mut confusion: BTreeMap<(String, Option<String>), usize> = BTreeMap::new();

    for a in aligned {
        for p in &a.pairs {
            let correct = p.is_correct();
            report.overall.add(correct);
            match classifier.classify(&p.gold) {
                MorphemeClass::Grammatical => report.grammatical.add(correct),
                MorphemeClass::Lexical => {
                    report.lexical.add(correct);
                    let bin = match frequency.get(p.source.as_str()).copied().unwrap_or(0) {
                        0 => &mut report.frequency_bins.unseen,
                        1..=5 => &mut report.frequency_bins.infrequent,
                        6..=20 => &mut report.frequency_bins.common,
                        _ => &mut report.frequency_bins.frequent,
                    };
                    bin.add(correct);
                }
            }
            *confusion
                .entry((p.gold.clone(), p.predicted.clone()))
                .or_insert(0) += 1;
        }
    }

    report.confusion = confusion
        .into_iter()
        .map(|((gold, predicted), count)| ConfusionEntry {
            gold,
            predicted,
            count,
        })
        .collect();
    report
        .confusion
        .sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.gold.cmp(&b.gold)).then_with(|| a.predicted.cmp(&b.predicted)));
    report
}

fn fmt_bin(name: &str, bin: &BinStats, out: &mut String) {
    match bin.accuracy() {
        Some(acc) => {
            let _ = writeln!(out, "{name:<22} {acc:>7.4}  ({}/{})", bin.correct, bin.total);
        }
        None => {
            let _ = writeln!(out, "{name:<22}      --  (0/0)");
        }
    }
}

/// Renders the report as an aligned plain-text table.
pub fn render_text_report(report: &EvalReport) -> String {
    let mut out = String::new();
    fmt_bin("overall", &report.overall, &mut out);
    fmt_bin("grammatical", &report.grammatical, &mut out);
    fmt_bin("lexical", &report.lexical, &mut out);
    fmt_bin("  unseen (0)", &report.frequency_bins.unseen, &mut out);
    fmt_bin("  infrequent (1-5)", &report.frequency_bins.infrequent, &mut out);
    fmt_bin("  common (6-20)", &report.frequency_bins.common, &mut out);
    fmt_bin("  frequent (>20)", &report.frequency_bins.frequent, &mut out);
    let _ = writeln!(out, "failed items           {}", report.failure_count);
    let errors: Vec<&ConfusionEntry> = report
        .confusion
        .iter()
        .filter(|e| e.predicted.as_deref() != Some(e.gold.as_str()))
        .take(10)
        .collect();
    if !errors.is_empty() {
        let _ = writeln!(out, "top confusions (gold -> predicted):");
        for e in errors {
            let predicted = e.predicted.as_deref().unwrap_or("<ABSENT>");
            let _ = writeln!(out, "  {:<14} -> {:<14} x{}", e.gold, predicted, e.count);
        }
    }
    out
}
