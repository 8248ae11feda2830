//! Supervised training: CRF negative log-likelihood, analytic gradients
//! through the whole network, Adam updates and the per-epoch loop.

mod adam;
mod checkpoint;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, LabelSet, Sentence, MAX_SENTENCE_LEN};
use crate::crf::{CrfError, CrfGrads, CrfParams};
use crate::embeddings::{build_char_vocab, EmbeddingError, EmbeddingTable};
use crate::evaluation::{evaluate, Averages, EvaluationError};
use crate::model::{Model, ModelError};
use crate::network::{self, NetworkConfig, NetworkError, NetworkParams};
use crate::scalar::Scalar;

pub use adam::{AdamHyper, AdamState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, TrainingMetadata,
    CHECKPOINT_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("sentence {0} in the batch has a tag outside the label set")]
    Untagged(usize),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("non-finite loss or gradient")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 16,
            learning_rate: 0.001,
            dropout_rate: 0.5,
            seed: 13,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad(format!("learning_rate {} not in (0, 1)", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} not in [0, 1)"));
            }
        }
        if self.adam_epsilon <= 0.0 || self.clip_norm <= 0.0 {
            return bad("adam_epsilon and clip_norm must be positive".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Gradients congruent with the learned parameters of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub network: NetworkParams<T>,
    pub crf: CrfGrads<T>,
}

/// Names of every learned tensor, network first, then the CRF.
pub const PARAM_NAMES: [&str; 14] = [
    "char_embeddings",
    "conv_filters",
    "conv_bias",
    "lstm_forward.input_weights",
    "lstm_forward.recurrent_weights",
    "lstm_forward.bias",
    "lstm_backward.input_weights",
    "lstm_backward.recurrent_weights",
    "lstm_backward.bias",
    "proj_weights",
    "proj_bias",
    "crf.transitions",
    "crf.start_scores",
    "crf.end_scores",
];

impl<T: Scalar> ModelGrads<T> {
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = self.network.tensors().into();
        v.extend([self.crf.transitions.as_slice(), &self.crf.start_scores, &self.crf.end_scores]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = self.network.tensors_mut().into();
        v.extend([self.crf.transitions.as_mut_slice(), &mut self.crf.start_scores, &mut self.crf.end_scores]);
        v
    }

    pub fn global_norm(&self) -> T {
        self.tensors().iter().flat_map(|t| t.iter()).map(|&g| g * g).sum::<T>().sqrt()
    }
}

/// Mutable views of every learned tensor, in [`PARAM_NAMES`] order.
pub fn param_tensors_mut<T: Scalar>(model: &mut Model<T>) -> Vec<&mut [T]> {
    let mut v: Vec<&mut [T]> = model.network.tensors_mut().into();
    v.extend([model.crf.transitions.as_mut_slice(), &mut model.crf.start_scores, &mut model.crf.end_scores]);
    v
}

pub fn param_tensors<T: Scalar>(model: &Model<T>) -> Vec<&[T]> {
    let mut v: Vec<&[T]> = model.network.tensors().into();
    v.extend([model.crf.transitions.as_slice(), &model.crf.start_scores, &model.crf.end_scores]);
    v
}

/// Mean CRF negative log-likelihood over `batch` and its analytic gradient.
/// With `dropout_seed` set, dropout masks are drawn from one seeded stream in
/// batch order.
pub fn loss_and_gradients<T: Scalar>(
    batch: &[Sentence],
    model: &Model<T>,
    dropout_seed: Option<u64>,
) -> Result<(T, ModelGrads<T>), TrainError> {
    let mut grads = ModelGrads {
        network: NetworkParams::zeros(&model.config, model.char_vocab.size()),
        crf: CrfGrads::zeros(model.config.num_tags),
    };
    if batch.is_empty() {
        return Ok((T::zero(), grads));
    }
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut total = T::zero();
    for (i, sentence) in batch.iter().enumerate() {
        let gold = model.tag_indices(sentence).ok_or(TrainError::Untagged(i))?;
        let trace = network::forward(
            sentence,
            &model.embeddings,
            &model.char_vocab,
            &model.network,
            &model.config,
            rng.as_mut(),
        )?;
        let (nll, d_emit, g) = model.crf.nll_with_grads(&trace.emissions, &gold)?;
        total += nll;
        network::backward(&trace, &d_emit, &model.network, &model.config, &mut grads.network);
        grads.crf.transitions.as_mut_slice().iter_mut().zip(g.transitions.as_slice()).for_each(|(a, &b)| *a += b);
        grads.crf.start_scores.iter_mut().zip(&g.start_scores).for_each(|(a, &b)| *a += b);
        grads.crf.end_scores.iter_mut().zip(&g.end_scores).for_each(|(a, &b)| *a += b);
    }
    let scale = T::one() / T::lit(batch.len() as f64);
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|g| *g *= scale);
    }
    let loss = total * scale;
    if !loss.is_finite() || !grads.global_norm().is_finite() {
        return Err(TrainError::NonFinite);
    }
    Ok((loss, grads))
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Strict micro-averaged dev scores, absent without a dev set.
    pub dev: Option<Averages>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    /// Parameters after the last epoch.
    pub checkpoint: Checkpoint<T>,
    /// Parameters at the epoch with the best dev micro-F1.
    pub best: Option<Checkpoint<T>>,
    pub history: Vec<EpochRecord>,
}

/// Fresh model: seeded uniform(−0.1, 0.1) parameters, forget-gate biases at 1.
pub fn init_model<T: Scalar>(
    train_docs: &[Document],
    table: &EmbeddingTable<T>,
    labels: &LabelSet,
    config: &NetworkConfig,
    rng: &mut impl Rng,
) -> Result<Model<T>, TrainError> {
    let char_vocab = build_char_vocab(train_docs)?;
    let network = NetworkParams::init(config, char_vocab.size(), rng);
    let mut crf = CrfParams::zeros(config.num_tags);
    for t in [crf.transitions.as_mut_slice(), &mut crf.start_scores, &mut crf.end_scores] {
        t.iter_mut().for_each(|v| *v = T::lit(rng.gen_range(-0.1..0.1)));
    }
    let model =
        Model { labels: labels.clone(), config: config.clone(), char_vocab, embeddings: table.clone(), network, crf };
    model.validate()?;
    Ok(model)
}

/// Trains a tagger for a fixed number of epochs. The network configuration's
/// dropout rate is replaced by the training one.
pub fn train<T: Scalar>(
    train_docs: &[Document],
    dev_docs: &[Document],
    table: &EmbeddingTable<T>,
    labels: &LabelSet,
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    train_config.validate()?;
    let config = NetworkConfig { dropout_rate: train_config.dropout_rate, ..net_config.clone() };
    config.validate()?;
    let sentences: Vec<Sentence> =
        train_docs.iter().flat_map(|d| &d.sentences).flat_map(|s| s.chunks(MAX_SENTENCE_LEN)).collect();
    if sentences.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut model = init_model(train_docs, table, labels, &config, &mut rng)?;
    let mut adam = AdamState::new(param_tensors(&model).iter().map(|t| t.len()));
    let hyper = train_config.adam();
    let clip = T::lit(train_config.clip_norm);

    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut best: Option<(f64, Model<T>, usize, f64)> = None;
    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<Sentence> = chunk.iter().map(|&i| sentences[i].clone()).collect();
            let dropout_seed = rng.gen::<u64>();
            let (loss, mut grads) = loss_and_gradients(&batch, &model, Some(dropout_seed))?;
            loss_sum += loss.to_f64_lossy() * batch.len() as f64;
            let norm = grads.global_norm();
            if norm > clip {
                let s = clip / norm;
                for t in grads.tensors_mut() {
                    t.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam.step(&mut param_tensors_mut(&mut model), &grads.tensors(), &hyper);
        }
        let mean_loss = loss_sum / sentences.len() as f64;
        let dev = if dev_docs.is_empty() {
            None
        } else {
            let pred = model.predict_documents(dev_docs)?;
            Some(evaluate(dev_docs, &pred, labels)?.micro)
        };
        match &dev {
            Some(d) => {
                info!("epoch {epoch}: loss {mean_loss:.6} dev P {:.4} R {:.4} F1 {:.4}", d.precision, d.recall, d.f1)
            }
            None => info!("epoch {epoch}: loss {mean_loss:.6}"),
        }
        if let Some(d) = &dev {
            if best.as_ref().is_none_or(|(f1, ..)| d.f1 > *f1) {
                best = Some((d.f1, model.clone(), epoch, mean_loss));
            }
        }
        history.push(EpochRecord { epoch, mean_loss, dev });
    }

    let final_loss = history.last().map_or(0.0, |r| r.mean_loss);
    let metadata = |epochs_completed: usize, final_loss: f64| TrainingMetadata {
        seed: train_config.seed,
        epochs_completed,
        final_loss,
        train_config: train_config.clone(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model.quantized(), metadata(train_config.epochs, final_loss)),
        best: best.map(|(_, m, epoch, loss)| Checkpoint::new(m.quantized(), metadata(epoch, loss))),
        history,
    })
}
