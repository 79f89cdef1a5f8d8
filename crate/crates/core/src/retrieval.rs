//! Character n-gram TF-IDF retrieval for few-shot example selection.
//!
//! Sentences are represented by counts of character n-grams (2–4 by default,
//! after lowercase folding), weighted by smoothed inverse document frequency
//! and L2-normalized:
//!
//! ```text
//! idf(g) = ln((1 + D) / (1 + df(g))) + 1
//! ```
//!
//! Similarity is the cosine of the normalized vectors. Everything is
//! deterministic: the vocabulary is sorted lexicographically, scores are
//! accumulated in fixed order, and ties in rankings break by ascending
//! sentence index.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectorizer settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfIdfConfig {
    /// Smallest n-gram length (inclusive).
    pub ngram_min: usize,
    /// Largest n-gram length (inclusive).
    pub ngram_max: usize,
    /// Whether to lowercase text before extracting n-grams.
    pub lowercase: bool,
}

impl Default for TfIdfConfig {
    fn default() -> Self {
        TfIdfConfig {
            ngram_min: 2,
            ngram_max: 4,
            lowercase: true,
        }
    }
}

/// A sparse vector: (dimension, weight) entries sorted by dimension.
pub type SparseVector = Vec<(u32, f64)>;

/// An immutable TF-IDF index over a list of texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfIndex {
    config: TfIdfConfig,
    /// All n-grams, sorted lexicographically; position = dimension.
    vocabulary: Vec<String>,
    idf: Vec<f64>,
    /// One L2-normalized vector per indexed text (zero vector allowed for
    /// texts shorter than `ngram_min`).
    vectors: Vec<SparseVector>,
}

fn ngram_counts(text: &str, config: &TfIdfConfig) -> BTreeMap<String, u32> {
    let folded;
    let text = if config.lowercase {
        folded = text.to_lowercase();
        folded.as_str()
    } else {
        text
    };
    let chars: Vec<char> = text.chars().collect();
    let mut counts = BTreeMap::new();
    for n in config.ngram_min..=config.ngram_max {
        if chars.len() < n {
            break;
        }
        for window in chars.windows(n) {
            *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    counts
}

fn l2_normalize(vector: &mut SparseVector) {
    let norm = vector.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in vector.iter_mut() {
            *w /= norm;
        }
    }
}

/// Builds an index over `texts` (in order; positions become document ids).
pub fn build_index(texts: &[String], config: &TfIdfConfig) -> Result<TfIdfIndex> {
    if config.ngram_min < 1 || config.ngram_min > config.ngram_max {
        return Err(Error::Argument(format!(
            "invalid n-gram range ({}, {})",
            config.ngram_min, config.ngram_max
        )));
    }
    let per_text: Vec<BTreeMap<String, u32>> =
        texts.iter().map(|t| ngram_counts(t, config)).collect();

    // Document frequency per n-gram; BTreeMap keeps the vocabulary sorted.
    let mut df: BTreeMap<&str, u32> = BTreeMap::new();
    for counts in &per_text {
        for gram in counts.keys() {
            *df.entry(gram).or_insert(0) += 1;
        }
    }
    let vocabulary: Vec<String> = df.keys().map(|g| g.to_string()).collect();
    let dims: BTreeMap<&str, u32> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i as u32))
        .collect();
    let d = texts.len() as f64;
    let idf: Vec<f64> = vocabulary
        .iter()
        .map(|g| ((1.0 + d) / (1.0 + f64::from(df[g.as_str()]))).ln() + 1.0)
        .collect();

    let vectors: Vec<SparseVector> = per_text
        .iter()
        .map(|counts| {
            let mut v: SparseVector = counts
                .iter()
                .map(|(g, &tf)| {
                    let dim = dims[g.as_str()];
                    (dim, f64::from(tf) * idf[dim as usize])
                })
                .collect();
            l2_normalize(&mut v);
            v
        })
        .collect();

    Ok(TfIdfIndex {
        config: config.clone(),
        vocabulary,
        idf,
        vectors,
    })
}

/// Dot product of two sorted sparse vectors.
pub fn sparse_dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let mut sum = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

impl TfIdfIndex {
    /// Number of indexed texts.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    /// True when no texts are indexed.
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Number of dimensions (distinct n-grams).
    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// The sorted n-gram vocabulary.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    /// The stored (normalized) vector of document `i`.
    pub fn doc_vector(&self, i: usize) -> &SparseVector {
        &self.vectors[i]
    }

    /// Cosine similarity between two indexed documents.
    pub fn doc_cosine(&self, i: usize, j: usize) -> f64 {
        sparse_dot(&self.vectors[i], &self.vectors[j])
    }

    /// Vectorizes a query with the index vocabulary and idf weights.
    /// N-grams unseen at build time are ignored.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let counts = ngram_counts(text, &self.config);
        let dims: BTreeMap<&str, u32> = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i as u32))
            .collect();
        let mut v: SparseVector = counts
            .iter()
            .filter_map(|(g, &tf)| {
                dims.get(g.as_str())
                    .map(|&dim| (dim, f64::from(tf) * self.idf[dim as usize]))
            })
            .collect();
        l2_normalize(&mut v);
        v
    }

    /// Cosine similarity between a free-text query and document `i`.
    pub fn query_cosine(&self, query: &str, i: usize) -> f64 {
        sparse_dot(&self.vectorize(query), &self.vectors[i])
    }
}

/// Returns the `min(k, len)` most similar documents to `query`, as
/// `(document index, cosine)` sorted by descending similarity; ties break
/// by ascending index.
pub fn top_k(index: &TfIdfIndex, query: &str, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::Argument("top_k requires k >= 1".into()));
    }
    if index.is_empty() {
        return Err(Error::Argument("top_k over an empty index".into()));
    }
    let q = index.vectorize(query);
    let mut scored: Vec<(usize, f64)> = index
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (i, sparse_dot(&q, v)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosines are finite")
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(k.min(index.len()));
    Ok(scored)
}

/// Samples `k` distinct indices from `0..pool_size` uniformly, without
/// replacement, deterministically per seed (partial Fisher–Yates).
pub fn random_k(pool_size: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > pool_size {
        return Err(Error::Argument(format!(
            "cannot sample {k} items from a pool of {pool_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..pool_size).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = rng.random_range(i..pool_size);
        indices.swap(i, j);
        out.push(indices[i]);
    }
    Ok(out)
}

/// Writes an index to a JSON file.
pub fn save_index(index: &TfIdfIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(index)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads an index back from a JSON file.
pub fn load_index(path: impl AsRef<Path>) -> Result<TfIdfIndex> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
