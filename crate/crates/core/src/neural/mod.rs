//! Neural morpheme tagger: character embeddings mean-pooled per morpheme,
//! stacked bidirectional LSTM layers, a linear emission projection, and a
//! CRF output layer decoded with Viterbi.
//!
//! Everything runs in `f64` with hand-written backpropagation, seeded
//! initialization, and no hidden global state, so training is
//! bit-reproducible for a fixed configuration and data.

pub mod crf;
pub mod lstm;
pub mod train;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::IgtSentence;
use crate::error::{Error, Result};
use lstm::{add_outer, transposed_matvec, BiLayerTape, BiLstmLayer};

pub use train::{train_tagger, train_tagger_with_validation, EarlyStopping, EpochRecord, TrainingOutcome};

/// Version stamp written into checkpoints; bumped on breaking layout changes.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Hyperparameters of the tagger and its training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    /// Dimension of each character embedding (morpheme vectors share it).
    pub char_embed_dim: usize,
    /// Hidden size per LSTM direction; layer outputs are twice this.
    pub hidden_dim: usize,
    /// Number of stacked bidirectional layers.
    pub lstm_layers: usize,
    /// Adam step size.
    pub learning_rate: f64,
    /// Upper bound on training epochs.
    pub max_epochs: usize,
    /// Epochs without validation improvement before training stops.
    pub patience: usize,
    /// Parameters start uniform in `[-init_scale, init_scale)`.
    pub init_scale: f64,
    /// Fraction of training sentences held out for early stopping.
    pub validation_fraction: f64,
    /// Seed for initialization and epoch shuffling.
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            char_embed_dim: 100,
            hidden_dim: 128,
            lstm_layers: 2,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            init_scale: 0.1,
            validation_fraction: 0.1,
            seed: 7,
        }
    }
}

impl TaggerConfig {
    /// Rejects configurations the model cannot be built or trained with.
    pub fn validate(&self) -> Result<()> {
        if self.char_embed_dim == 0 || self.hidden_dim == 0 || self.lstm_layers == 0 {
            return Err(Error::Config(
                "char_embed_dim, hidden_dim, and lstm_layers must all be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::Config(format!(
                "init_scale must be a positive finite number, got {}",
                self.init_scale
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Character inventory. Index 0 is reserved for unseen characters; known
/// characters are numbered from 1 in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

/// Embedding row used for characters outside the training inventory.
pub const UNKNOWN_CHAR_INDEX: usize = 0;

impl CharVocab {
    /// Collects every character of every source morpheme.
    pub fn build(sentences: &[&IgtSentence]) -> CharVocab {
        let mut set = BTreeSet::new();
        for s in sentences {
            for word in &s.source_words {
                for morpheme in word {
                    set.extend(morpheme.chars());
                }
            }
        }
        CharVocab {
            chars: set.into_iter().collect(),
        }
    }

    /// Number of embedding rows (known characters plus the unknown slot).
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false // the unknown slot always exists
    }

    /// Embedding row for `c`, falling back to [`UNKNOWN_CHAR_INDEX`].
    pub fn index_of(&self, c: char) -> usize {
        match self.chars.binary_search(&c) {
            Ok(i) => i + 1,
            Err(_) => UNKNOWN_CHAR_INDEX,
        }
    }
}

/// Every trainable tensor of the tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// `V x E` character embeddings (row 0 = unknown character).
    pub(crate) char_embeddings: Array2<f64>,
    /// Stacked bidirectional layers, bottom first.
    pub(crate) layers: Vec<BiLstmLayer>,
    /// `K x 2H` emission projection.
    pub(crate) proj_weight: Array2<f64>,
    /// `K` emission bias.
    pub(crate) proj_bias: Array1<f64>,
    /// `(K+2) x (K+2)` CRF transition table (START = K, STOP = K+1).
    pub(crate) transitions: Array2<f64>,
}

impl Parameters {
    fn zeros(char_vocab_size: usize, num_labels: usize, config: &TaggerConfig) -> Parameters {
        let mut layers = Vec::with_capacity(config.lstm_layers);
        let mut input_dim = config.char_embed_dim;
        for _ in 0..config.lstm_layers {
            layers.push(BiLstmLayer::zeros(input_dim, config.hidden_dim));
            input_dim = 2 * config.hidden_dim;
        }
        Parameters {
            char_embeddings: Array2::zeros((char_vocab_size, config.char_embed_dim)),
            layers,
            proj_weight: Array2::zeros((num_labels, 2 * config.hidden_dim)),
            proj_bias: Array1::zeros(num_labels),
            transitions: Array2::zeros((num_labels + 2, num_labels + 2)),
        }
    }

    /// Fills every tensor uniformly in `[-scale, scale)` in the fixed tensor
    /// order of [`Parameters::tensor_names`], then zeroes the structurally
    /// impossible transition entries.
    fn init(
        char_vocab_size: usize,
        num_labels: usize,
        config: &TaggerConfig,
        rng: &mut impl Rng,
    ) -> Parameters {
        let mut params = Parameters::zeros(char_vocab_size, num_labels, config);
        let scale = config.init_scale;
        for slice in params.flat_slices_mut() {
            for v in slice {
                *v = rng.random_range(-scale..scale);
            }
        }
        params.zero_forbidden_transitions();
        params
    }

    fn zero_forbidden_transitions(&mut self) {
        let states = self.transitions.nrows();
        let start = states - 2;
        let stop = states - 1;
        for r in 0..states {
            self.transitions[[r, start]] = 0.0;
        }
        for c in 0..states {
            self.transitions[[stop, c]] = 0.0;
        }
    }

    /// A same-shaped parameter set with every value zero.
    pub fn zeros_like(&self) -> Parameters {
        let mut z = self.clone();
        for slice in z.flat_slices_mut() {
            slice.fill(0.0);
        }
        z
    }

    /// Stable names of the tensors, in the same order as
    /// [`Parameters::flat_slices`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["char_embeddings".to_string()];
        for i in 0..self.layers.len() {
            for dir in ["forward", "backward"] {
                names.push(format!("layer{i}.{dir}.w_input"));
                names.push(format!("layer{i}.{dir}.w_hidden"));
                names.push(format!("layer{i}.{dir}.bias"));
            }
        }
        names.push("proj_weight".to_string());
        names.push("proj_bias".to_string());
        names.push("transitions".to_string());
        names
    }

    /// Read-only flat views of every tensor, in [`Parameters::tensor_names`]
    /// order.
    pub fn flat_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.push(self.char_embeddings.as_slice().expect("standard layout"));
        for layer in &self.layers {
            for dir in [&layer.forward_dir, &layer.backward_dir] {
                out.push(dir.w_input.as_slice().expect("standard layout"));
                out.push(dir.w_hidden.as_slice().expect("standard layout"));
                out.push(dir.bias.as_slice().expect("standard layout"));
            }
        }
        out.push(self.proj_weight.as_slice().expect("standard layout"));
        out.push(self.proj_bias.as_slice().expect("standard layout"));
        out.push(self.transitions.as_slice().expect("standard layout"));
        out
    }

    /// Mutable flat views of every tensor, in [`Parameters::tensor_names`]
    /// order.
    pub fn flat_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(self.char_embeddings.as_slice_mut().expect("standard layout"));
        for layer in &mut self.layers {
            out.push(layer.forward_dir.w_input.as_slice_mut().expect("standard layout"));
            out.push(layer.forward_dir.w_hidden.as_slice_mut().expect("standard layout"));
            out.push(layer.forward_dir.bias.as_slice_mut().expect("standard layout"));
            out.push(layer.backward_dir.w_input.as_slice_mut().expect("standard layout"));
            out.push(layer.backward_dir.w_hidden.as_slice_mut().expect("standard layout"));
            out.push(layer.backward_dir.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.proj_weight.as_slice_mut().expect("standard layout"));
        out.push(self.proj_bias.as_slice_mut().expect("standard layout"));
        out.push(self.transitions.as_slice_mut().expect("standard layout"));
        out
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.flat_slices().iter().map(|s| s.len()).sum()
    }

    /// The CRF transition table (exposed for diagnostics and tests).
    pub fn transitions(&self) -> &Array2<f64> {
        &self.transitions
    }
}

/// A sentence rewritten as embedding-row indices and label indices.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncodedSentence {
    /// One inner vector of character indices per morpheme, words flattened
    /// in order.
    pub char_ids: Vec<Vec<usize>>,
    /// Gold label index per morpheme.
    pub labels: Vec<usize>,
}

/// Cached activations of one forward pass.
pub(crate) struct ForwardPass {
    tapes: Vec<BiLayerTape>,
    top: Vec<Array1<f64>>,
    pub emissions: Array2<f64>,
}

/// The trained (or freshly initialized) tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerModel {
    config: TaggerConfig,
    char_vocab: CharVocab,
    labels: Vec<String>,
    params: Parameters,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: TaggerModel,
}

impl TaggerModel {
    /// Builds an untrained model whose vocabularies cover `sentences`.
    /// Labels are sorted, so label index 0 is the lexicographically smallest
    /// gloss label.
    pub fn new_untrained(sentences: &[&IgtSentence], config: &TaggerConfig) -> Result<TaggerModel> {
        config.validate()?;
        if sentences.is_empty() {
            return Err(Error::Data("cannot build a tagger from zero sentences".into()));
        }
        let char_vocab = CharVocab::build(sentences);
        let mut label_set = BTreeSet::new();
        for s in sentences {
            for word in &s.gloss_words {
                label_set.extend(word.iter().cloned());
            }
        }
        let labels: Vec<String> = label_set.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Parameters::init(char_vocab.len(), labels.len(), config, &mut rng);
        Ok(TaggerModel {
            config: config.clone(),
            char_vocab,
            labels,
            params,
        })
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    /// Gloss label inventory, sorted; index = CRF label index.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Mutable parameter access, for optimizers and finite-difference
    /// probing.
    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    fn encode_source(&self, source_words: &[Vec<String>]) -> Result<Vec<Vec<usize>>> {
        let mut char_ids = Vec::new();
        for word in source_words {
            for morpheme in word {
                if morpheme.is_empty() {
                    return Err(Error::Argument("cannot tag an empty morpheme".into()));
                }
                char_ids.push(morpheme.chars().map(|c| self.char_vocab.index_of(c)).collect());
            }
        }
        if char_ids.is_empty() {
            return Err(Error::Argument("cannot tag an empty sentence".into()));
        }
        Ok(char_ids)
    }

    /// Encodes a gold sentence for training; every gloss label must be in
    /// the model's label inventory.
    pub(crate) fn encode(&self, sentence: &IgtSentence) -> Result<EncodedSentence> {
        let char_ids = self.encode_source(&sentence.source_words)?;
        let mut labels = Vec::with_capacity(char_ids.len());
        for word in &sentence.gloss_words {
            for label in word {
                let idx = self
                    .labels
                    .binary_search(label)
                    .map_err(|_| Error::Data(format!("gloss label {label:?} is not in the model's label inventory")))?;
                labels.push(idx);
            }
        }
        Ok(EncodedSentence { char_ids, labels })
    }

    /// Mean of the character embedding rows of each morpheme.
    fn embed_morphemes(&self, char_ids: &[Vec<usize>]) -> Vec<Array1<f64>> {
        char_ids
            .iter()
            .map(|ids| {
                let mut v = Array1::zeros(self.config.char_embed_dim);
                for &id in ids {
                    v += &self.params.char_embeddings.row(id);
                }
                v / ids.len() as f64
            })
            .collect()
    }

    pub(crate) fn forward(&self, char_ids: &[Vec<usize>]) -> ForwardPass {
        let mut tapes = Vec::with_capacity(self.params.layers.len());
        let mut current = self.embed_morphemes(char_ids);
        for layer in &self.params.layers {
            let (outputs, tape) = layer.forward(&current);
            tapes.push(tape);
            current = outputs;
        }
        let n = current.len();
        let k = self.num_labels();
        let mut emissions = Array2::zeros((n, k));
        for (t, hidden) in current.iter().enumerate() {
            let e = self.params.proj_weight.dot(hidden) + &self.params.proj_bias;
            emissions.row_mut(t).assign(&e);
        }
        ForwardPass {
            tapes,
            top: current,
            emissions,
        }
    }

    /// Negative log-likelihood of an encoded sentence.
    pub(crate) fn loss_encoded(&self, sentence: &EncodedSentence) -> Result<f64> {
        let fwd = self.forward(&sentence.char_ids);
        let log_z = crf::log_partition(&fwd.emissions, &self.params.transitions)?;
        let score = crf::path_score(&fwd.emissions, &self.params.transitions, &sentence.labels)?;
        Ok(log_z - score)
    }

    /// Negative log-likelihood and full parameter gradients of an encoded
    /// sentence.
    pub(crate) fn loss_and_gradients_encoded(
        &self,
        sentence: &EncodedSentence,
    ) -> Result<(f64, Parameters)> {
        let fwd = self.forward(&sentence.char_ids);
        let (nll, crf_grads) =
            crf::posterior_gradients(&fwd.emissions, &self.params.transitions, &sentence.labels)?;

        let mut grads = self.params.zeros_like();
        grads.transitions = crf_grads.d_transitions;

        // Emission projection.
        let n = sentence.char_ids.len();
        let mut d_hidden: Vec<Array1<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            let d_emission = crf_grads.d_emissions.row(t);
            add_outer(&mut grads.proj_weight, d_emission, fwd.top[t].view());
            grads.proj_bias += &d_emission;
            d_hidden.push(transposed_matvec(&self.params.proj_weight, d_emission));
        }

        // Stacked layers, top down.
        for (idx, layer) in self.params.layers.iter().enumerate().rev() {
            d_hidden = layer.backward(&fwd.tapes[idx], &d_hidden, &mut grads.layers[idx]);
        }

        // Mean pooling back to character embeddings.
        for (t, ids) in sentence.char_ids.iter().enumerate() {
            let scale = 1.0 / ids.len() as f64;
            for &id in ids {
                grads.char_embeddings.row_mut(id).scaled_add(scale, &d_hidden[t]);
            }
        }
        Ok((nll, grads))
    }

    /// Negative log-likelihood of a gold sentence.
    pub fn loss_for(&self, sentence: &IgtSentence) -> Result<f64> {
        self.loss_encoded(&self.encode(sentence)?)
    }

    /// Negative log-likelihood and gradients for a gold sentence.
    pub fn loss_and_gradients(&self, sentence: &IgtSentence) -> Result<(f64, Parameters)> {
        self.loss_and_gradients_encoded(&self.encode(sentence)?)
    }

    /// Glosses a segmented sentence: Viterbi decode, then the flat label
    /// sequence is regrouped into the word/morpheme shape of the input.
    pub fn gloss(&self, source_words: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        let char_ids = self.encode_source(source_words)?;
        let fwd = self.forward(&char_ids);
        let path = crf::viterbi(&fwd.emissions, &self.params.transitions)?;
        let mut flat = path.iter().map(|&i| self.labels[i].clone());
        Ok(source_words
            .iter()
            .map(|word| word.iter().map(|_| flat.next().expect("path length matches")).collect())
            .collect())
    }

    /// Writes a JSON checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let checkpoint = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(BufWriter::new(file), &checkpoint)?;
        Ok(())
    }

    /// Reads a JSON checkpoint, rejecting unknown format versions.
    pub fn load(path: impl AsRef<Path>) -> Result<TaggerModel> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::parse(format!("{}", path.display()), format!("invalid checkpoint: {e}")))?;
        if checkpoint.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::parse(
                format!("{}", path.display()),
                format!(
                    "unsupported checkpoint format version {} (this build reads {})",
                    checkpoint.format_version, CHECKPOINT_FORMAT_VERSION
                ),
            ));
        }
        Ok(checkpoint.model)
    }
}
