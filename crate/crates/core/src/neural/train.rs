//! Training loop for the tagger: one sentence per update step, Adam, and
//! early stopping on held-out mean negative log-likelihood.
//!
//! The returned model carries the parameters of the epoch with the best
//! validation loss, not the final epoch. Two independent ChaCha streams
//! keep runs bit-reproducible: one (seeded with `config.seed`) initializes
//! parameters inside [`TaggerModel::new_untrained`], the other (seeded with
//! `config.seed` xor a fixed constant) drives the per-epoch shuffle, so the
//! shuffle order never depends on how many draws initialization consumed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{document_split, Corpus, IgtSentence};
use crate::error::{Error, Result};

use super::{EncodedSentence, Parameters, TaggerConfig, TaggerModel};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
/// Decouples the shuffle stream from the initialization stream.
const SHUFFLE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Adam optimizer state (first and second moment estimates per parameter).
struct Adam {
    m: Parameters,
    v: Parameters,
    step: u64,
}

impl Adam {
    fn new(like: &Parameters) -> Adam {
        Adam {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Parameters, grads: &Parameters, learning_rate: f64) {
        self.step += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let mut param_slices = params.flat_slices_mut();
        let grad_slices = grads.flat_slices();
        let mut m_slices = self.m.flat_slices_mut();
        let mut v_slices = self.v.flat_slices_mut();
        for t in 0..param_slices.len() {
            let p = &mut param_slices[t];
            let g = grad_slices[t];
            let m = &mut m_slices[t];
            let v = &mut v_slices[t];
            for i in 0..p.len() {
                let grad = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad * grad;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Stops training after `patience` observations without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records one validation value. Returns true when it strictly improves
    /// on the best seen so far (the first observation always does).
    pub fn observe(&mut self, value: f64) -> bool {
        match self.best {
            Some(best) if !(value < best) => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some(value);
                self.since_best = 0;
                true
            }
        }
    }

    /// True once `patience` consecutive observations failed to improve.
    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    /// Best value observed, if any.
    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Losses of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-sentence negative log-likelihood over the training set,
    /// measured before each sentence's update.
    pub train_nll: f64,
    /// Mean per-sentence negative log-likelihood over the validation set.
    pub validation_nll: f64,
}

/// A trained model plus the loss trajectory that produced it.
#[derive(Debug)]
pub struct TrainingOutcome {
    pub model: TaggerModel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters the model carries (1-based).
    pub best_epoch: usize,
}

fn ensure_finite(loss: f64, epoch: usize, learning_rate: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Training(format!(
            "non-finite loss ({loss}) at epoch {epoch}; training diverged — try a lower learning rate (currently {learning_rate})"
        )))
    }
}

/// Trains on `train`, early-stopping on `validation`. Vocabularies cover
/// both corpora so validation sentences can always be scored.
pub fn train_tagger_with_validation(
    train: &Corpus,
    validation: &Corpus,
    config: &TaggerConfig,
) -> Result<TrainingOutcome> {
    let all: Vec<&IgtSentence> = train
        .sentences()
        .iter()
        .chain(validation.sentences().iter())
        .collect();
    let mut model = TaggerModel::new_untrained(&all, config)?;

    let train_encoded: Vec<EncodedSentence> = train
        .sentences()
        .iter()
        .map(|s| model.encode(s))
        .collect::<Result<_>>()?;
    let validation_encoded: Vec<EncodedSentence> = validation
        .sentences()
        .iter()
        .map(|s| model.encode(s))
        .collect::<Result<_>>()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM_SALT);
    let mut adam = Adam::new(model.params());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = Vec::new();
    let mut best_params = model.params().clone();
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..train_encoded.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_sum = 0.0;
        for &i in &order {
            let (loss, grads) = model.loss_and_gradients_encoded(&train_encoded[i])?;
            ensure_finite(loss, epoch, config.learning_rate)?;
            train_sum += loss;
            adam.update(model.params_mut(), &grads, config.learning_rate);
        }
        let mut validation_sum = 0.0;
        for encoded in &validation_encoded {
            validation_sum += model.loss_encoded(encoded)?;
        }
        let validation_nll =
            ensure_finite(validation_sum / validation_encoded.len() as f64, epoch, config.learning_rate)?;
        history.push(EpochRecord {
            epoch,
            train_nll: train_sum / train_encoded.len() as f64,
            validation_nll,
        });
        if stopper.observe(validation_nll) {
            best_params = model.params().clone();
            best_epoch = epoch;
        }
        if stopper.should_stop() {
            break;
        }
    }

    *model.params_mut() = best_params;
    Ok(TrainingOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Splits off a validation set and trains. Corpora with two or more
/// documents are split at document granularity (no document straddles the
/// boundary); single-document corpora fall back to a seeded sentence-level
/// holdout.
pub fn train_tagger(corpus: &Corpus, config: &TaggerConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let (train, validation) = if corpus.documents().len() >= 2 {
        document_split(corpus, config.validation_fraction, config.seed)?
    } else {
        sentence_holdout(corpus, config.validation_fraction, config.seed)?
    };
    train_tagger_with_validation(&train, &validation, config)
}

/// Seeded sentence-level holdout for single-document corpora: shuffles
/// sentence indices and takes about `fraction` (at least one, never all)
/// for validation, preserving original corpus order on both sides.
fn sentence_holdout(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Data(
            "holding out validation data needs at least 2 sentences".into(),
        ));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let count = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut validation_indices: Vec<usize> = indices[..count].to_vec();
    validation_indices.sort_unstable();
    let validation_set: std::collections::HashSet<usize> =
        validation_indices.iter().copied().collect();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (i, s) in corpus.sentences().iter().enumerate() {
        if validation_set.contains(&i) {
            validation.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((Corpus::new(train)?, Corpus::new(validation)?))
}
