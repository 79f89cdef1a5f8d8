//! Gloss label classification and the training glossary.
//!
//! Interlinear gloss labels fall into two classes: grammatical labels written
//! in caps/digits/dots ("ABL", "3SG", "PST.PTCP") and lexical labels, which
//! are ordinary translations ("horse"). The pipeline needs the distinction
//! for error analysis and for the grammatical-only glossary subset.
//!
//! The [`Glossary`] counts every (morpheme, gloss) pair seen in training and
//! can emit the subsets used when rendering prompts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// The two classes a gloss label can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphemeClass {
    Grammatical,
    Lexical,
}

/// Classifies gloss labels as grammatical or lexical.
///
/// A label is grammatical when it appears in the explicit override set, or —
/// failing that — when every character is an ASCII uppercase letter, an
/// ASCII digit, or `'.'`. The override set only ever *adds* grammatical
/// labels; everything else falls through to the pattern rule.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagClassifier {
    explicit_grammatical: BTreeSet<String>,
}

impl TagClassifier {
    /// Pattern-rule-only classifier.
    pub fn new() -> Self {
        TagClassifier::default()
    }

    /// Classifier with an explicit set of labels to treat as grammatical.
    pub fn with_explicit(labels: impl IntoIterator<Item = String>) -> Self {
        TagClassifier {
            explicit_grammatical: labels.into_iter().collect(),
        }
    }

    /// Loads an override set from a file with one label per line. Blank
    /// lines and `#` comments are skipped.
    pub fn from_label_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::with_explicit(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        ))
    }

    /// Classifies one gloss label. `label` must be non-empty.
    pub fn classify(&self, label: &str) -> MorphemeClass {
        debug_assert!(!label.is_empty(), "gloss labels are never empty");
        if self.explicit_grammatical.contains(label) {
            return MorphemeClass::Grammatical;
        }
        let pattern = !label.is_empty()
            && label
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '.');
        if pattern {
            MorphemeClass::Grammatical
        } else {
            MorphemeClass::Lexical
        }
    }
}

/// Which glossary entries to include in a prompt.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum GlossarySubset {
    /// No dictionary at all.
    None,
    /// The 100 most frequent pairs.
    Top100,
    /// Only pairs whose gloss classifies as grammatical.
    Grammatical,
    /// Every pair seen in training.
    Entire,
}

impl GlossarySubset {
    /// Stable lowercase name, used in condition labels and file names.
    pub fn name(&self) -> &'static str {
        match self {
            GlossarySubset::None => "none",
            GlossarySubset::Top100 => "top100",
            GlossarySubset::Grammatical => "grammatical",
            GlossarySubset::Entire => "entire",
        }
    }
}

/// Counts of (morpheme, gloss) pairs observed in training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Glossary {
    /// morpheme -> glosses with their pair frequency, most frequent first
    /// (ties broken by gloss string).
    entries: BTreeMap<String, Vec<(String, usize)>>,
    total_pair_count: usize,
}

impl Glossary {
    /// Counts every aligned (morpheme, gloss) pair in `train`.
    pub fn build(train: &Corpus) -> Glossary {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for s in train.sentences() {
            for (src, gls) in s.source_words.iter().zip(&s.gloss_words) {
                for (m, g) in src.iter().zip(gls) {
                    *counts.entry((m.clone(), g.clone())).or_insert(0) += 1;
                }
            }
        }
        Glossary::from_counts(counts.into_iter().map(|((m, g), n)| (m, g, n)))
    }

    /// Builds a glossary from raw pair counts (useful for external
    /// dictionaries and tests).
    pub fn from_counts(counts: impl IntoIterator<Item = (String, String, usize)>) -> Glossary {
        let mut entries: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
        let mut total = 0usize;
        for (m, g, n) in counts {
            entries.entry(m).or_default().push((g, n));
            total += 1;
        }
        for glosses in entries.values_mut() {
            glosses.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        }
        Glossary {
            entries,
            total_pair_count: total,
        }
    }

    /// Number of distinct (morpheme, gloss) pairs.
    pub fn total_pair_count(&self) -> usize {
        self.total_pair_count
    }

    /// Glosses recorded for a morpheme, most frequent first.
    pub fn glosses_for(&self, morpheme: &str) -> &[(String, usize)] {
        self.entries
            .get(morpheme)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Selects the pairs for a prompt dictionary, ordered by descending
    /// frequency, then morpheme, then gloss.
    pub fn select_subset(
        &self,
        mode: GlossarySubset,
        classifier: &TagClassifier,
    ) -> Vec<(String, String)> {
        if mode == GlossarySubset::None {
            return Vec::new();
        }
        let mut pairs: Vec<(&String, &String, usize)> = self
            .entries
            .iter()
            .flat_map(|(m, glosses)| glosses.iter().map(move |(g, n)| (m, g, *n)))
            .collect();
        pairs.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)).then_with(|| a.1.cmp(b.1)));
        let selected: Vec<(String, String)> = match mode {
            GlossarySubset::None => unreachable!(),
            GlossarySubset::Entire => pairs
                .into_iter()
                .map(|(m, g, _)| (m.clone(), g.clone()))
                .collect(),
            GlossarySubset::Top100 => pairs
                .into_iter()
                .take(100)
                .map(|(m, g, _)| (m.clone(), g.clone()))
                .collect(),
            GlossarySubset::Grammatical => pairs
                .into_iter()
                .filter(|(_, g, _)| classifier.classify(g) == MorphemeClass::Grammatical)
                .map(|(m, g, _)| (m.clone(), g.clone()))
                .collect(),
        };
        selected
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{surface_to_words, IgtSentence};
    use std::io::Write;

    #[test]
    fn pattern_rule_examples() {
        let c = TagClassifier::new();
        assert_eq!(c.classify("ABL"), MorphemeClass::Grammatical);
        assert_eq!(c.classify("3SG"), MorphemeClass::Grammatical);
        assert_eq!(c.classify("PST.PTCP"), MorphemeClass::Grammatical);
        assert_eq!(c.classify("horse"), MorphemeClass::Lexical);
        assert_eq!(c.classify("Horse"), MorphemeClass::Lexical);
        assert_eq!(c.classify("fall.CVB"), MorphemeClass::Lexical);
    }

    #[test]
    fn explicit_set_adds_grammatical_labels() {
        let c = TagClassifier::with_explicit(vec!["go".to_string()]);
        assert_eq!(c.classify("go"), MorphemeClass::Grammatical);
        assert_eq!(c.classify("went"), MorphemeClass::Lexical);
        // Pattern rule still applies to labels outside the set.
        assert_eq!(c.classify("ABL"), MorphemeClass::Grammatical);
    }

    #[test]
    fn label_file_skips_comments_and_blanks() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"# overrides\nEXIST\n\n  go  \n").unwrap();
        let c = TagClassifier::from_label_file(f.path()).unwrap();
        assert_eq!(c.classify("go"), MorphemeClass::Grammatical);
        assert_eq!(c.classify("EXIST"), MorphemeClass::Grammatical);
    }

    fn sentence(src: &str, gloss: &str) -> IgtSentence {
        IgtSentence::new(
            "d",
            surface_to_words(src, "test").unwrap(),
            surface_to_words(gloss, "test").unwrap(),
            None,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn build_counts_aligned_pairs() {
        let corpus = Corpus::new(vec![
            sentence("ka-ra tuk", "PRS-PL stone"),
            sentence("ka mo", "PRS moon"),
        ])
        .unwrap();
        let glossary = Glossary::build(&corpus);
        assert_eq!(glossary.glosses_for("ka"), &[("PRS".to_string(), 2)]);
        assert_eq!(glossary.glosses_for("tuk"), &[("stone".to_string(), 1)]);
        assert_eq!(glossary.glosses_for("unknown"), &[]);
        // Distinct pairs: ka/PRS counts once even though it occurs twice.
        assert_eq!(glossary.total_pair_count(), 4);
    }

    #[test]
    fn ambiguous_morphemes_sort_by_frequency_then_gloss() {
        let glossary = Glossary::from_counts(vec![
            ("ka".into(), "PRS".into(), 2),
            ("ka".into(), "FUT".into(), 5),
            ("ka".into(), "AUX".into(), 2),
        ]);
        let glosses: Vec<&str> = glossary
            .glosses_for("ka")
            .iter()
            .map(|(g, _)| g.as_str())
            .collect();
        assert_eq!(glosses, ["FUT", "AUX", "PRS"]);
    }

    fn numbered_glossary(n: usize) -> Glossary {
        // Pair i (1-based) has frequency 1000 - i, so the ordering by
        // descending frequency is exactly pair 1, pair 2, ...
        Glossary::from_counts(
            (1..=n).map(|i| (format!("m{i:03}"), format!("g{i:03}"), 1000 - i)),
        )
    }

    #[test]
    fn top100_takes_most_frequent_pairs() {
        let glossary = numbered_glossary(120);
        let top = glossary.select_subset(GlossarySubset::Top100, &TagClassifier::new());
        assert_eq!(top.len(), 100);
        assert_eq!(top[0], ("m001".to_string(), "g001".to_string()));
        assert_eq!(top[99], ("m100".to_string(), "g100".to_string()));
        let entire = glossary.select_subset(GlossarySubset::Entire, &TagClassifier::new());
        assert_eq!(entire.len(), 120);
    }

    #[test]
    fn top100_on_small_glossary_returns_everything() {
        let glossary = numbered_glossary(7);
        let top = glossary.select_subset(GlossarySubset::Top100, &TagClassifier::new());
        assert_eq!(top.len(), 7);
    }

    #[test]
    fn frequency_ties_break_lexicographically() {
        let glossary = Glossary::from_counts(vec![
            ("zz".into(), "B".into(), 4),
            ("aa".into(), "B".into(), 4),
            ("aa".into(), "A".into(), 4),
        ]);
        let all = glossary.select_subset(GlossarySubset::Entire, &TagClassifier::new());
        assert_eq!(
            all,
            vec![
                ("aa".to_string(), "A".to_string()),
                ("aa".to_string(), "B".to_string()),
                ("zz".to_string(), "B".to_string()),
            ]
        );
    }

    #[test]
    fn grammatical_subset_is_contained_in_entire() {
        let glossary = Glossary::from_counts(vec![
            ("ka".into(), "PRS".into(), 3),
            ("tuk".into(), "stone".into(), 2),
            ("ra".into(), "PL".into(), 9),
        ]);
        let classifier = TagClassifier::new();
        let grammatical = glossary.select_subset(GlossarySubset::Grammatical, &classifier);
        let entire = glossary.select_subset(GlossarySubset::Entire, &classifier);
        assert_eq!(
            grammatical,
            vec![
                ("ra".to_string(), "PL".to_string()),
                ("ka".to_string(), "PRS".to_string()),
            ]
        );
        for pair in &grammatical {
            assert!(entire.contains(pair));
        }
        assert!(glossary
            .select_subset(GlossarySubset::None, &classifier)
            .is_empty());
    }
}
