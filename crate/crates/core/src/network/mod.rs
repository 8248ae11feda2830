//! Emission network: character CNN features concatenated with frozen word
//! vectors, a bidirectional LSTM, and a linear projection to tag scores.

mod charcnn;
mod lstm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSet, Sentence};
use crate::embeddings::{CharVocab, EmbeddingTable, DEFAULT_WORD_DIM};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub use lstm::LstmParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("non-finite value after {0}")]
    NonFinite(&'static str),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty sentence")]
    EmptySentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub char_embed_dim: usize,
    /// Must be odd.
    pub char_filter_width: usize,
    pub char_filter_count: usize,
    pub word_dim: usize,
    /// Hidden units per direction.
    pub lstm_hidden: usize,
    pub dropout_rate: f64,
    pub num_tags: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            char_embed_dim: 25,
            char_filter_width: 3,
            char_filter_count: 30,
            word_dim: DEFAULT_WORD_DIM,
            lstm_hidden: 200,
            dropout_rate: 0.5,
            num_tags: LabelSet::default().num_tags(),
        }
    }
}

impl NetworkConfig {
    pub fn for_labels(labels: &LabelSet) -> Self {
        Self { num_tags: labels.num_tags(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let dims = [
            ("char_embed_dim", self.char_embed_dim),
            ("char_filter_width", self.char_filter_width),
            ("char_filter_count", self.char_filter_count),
            ("word_dim", self.word_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("num_tags", self.num_tags),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(NetworkError::Config(format!("{name} must be positive")));
        }
        if self.char_filter_width.is_multiple_of(2) {
            return Err(NetworkError::Config(format!("char_filter_width {} must be odd", self.char_filter_width)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NetworkError::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Width of the LSTM input vector.
    pub fn lstm_input_dim(&self) -> usize {
        self.word_dim + self.char_filter_count
    }
}

/// All learned network tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    /// `|CharVocab| × char_embed_dim`
    pub char_embeddings: Matrix<T>,
    /// `char_filter_count × (char_filter_width · char_embed_dim)`, window-major
    pub conv_filters: Matrix<T>,
    pub conv_bias: Vec<T>,
    pub lstm_forward: LstmParams<T>,
    pub lstm_backward: LstmParams<T>,
    /// `2·lstm_hidden × num_tags`
    pub proj_weights: Matrix<T>,
    pub proj_bias: Vec<T>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn zeros(config: &NetworkConfig, char_vocab_size: usize) -> Self {
        let input = config.lstm_input_dim();
        Self {
            char_embeddings: Matrix::zeros(char_vocab_size, config.char_embed_dim),
            conv_filters: Matrix::zeros(config.char_filter_count, config.char_filter_width * config.char_embed_dim),
            conv_bias: vec![T::zero(); config.char_filter_count],
            lstm_forward: LstmParams::zeros(input, config.lstm_hidden),
            lstm_backward: LstmParams::zeros(input, config.lstm_hidden),
            proj_weights: Matrix::zeros(2 * config.lstm_hidden, config.num_tags),
            proj_bias: vec![T::zero(); config.num_tags],
        }
    }

    /// Uniform(−0.1, 0.1) everywhere except forget-gate biases, which start at 1.
    pub fn init(config: &NetworkConfig, char_vocab_size: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(config, char_vocab_size);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = T::lit(rng.gen_range(-0.1..0.1));
            }
        }
        let h = config.lstm_hidden;
        for l in [&mut p.lstm_forward, &mut p.lstm_backward] {
            l.bias[h..2 * h].iter_mut().for_each(|b| *b = T::one());
        }
        p
    }

    /// Tensor names in canonical order (the order of [`Self::tensors`]).
    pub const TENSOR_NAMES: [&'static str; 11] = [
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
    ];

    pub fn tensors(&self) -> [&[T]; 11] {
        [
            self.char_embeddings.as_slice(),
            self.conv_filters.as_slice(),
            &self.conv_bias,
            self.lstm_forward.input_weights.as_slice(),
            self.lstm_forward.recurrent_weights.as_slice(),
            &self.lstm_forward.bias,
            self.lstm_backward.input_weights.as_slice(),
            self.lstm_backward.recurrent_weights.as_slice(),
            &self.lstm_backward.bias,
            self.proj_weights.as_slice(),
            &self.proj_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 11] {
        [
            self.char_embeddings.as_mut_slice(),
            self.conv_filters.as_mut_slice(),
            &mut self.conv_bias,
            self.lstm_forward.input_weights.as_mut_slice(),
            self.lstm_forward.recurrent_weights.as_mut_slice(),
            &mut self.lstm_forward.bias,
            self.lstm_backward.input_weights.as_mut_slice(),
            self.lstm_backward.recurrent_weights.as_mut_slice(),
            &mut self.lstm_backward.bias,
            self.proj_weights.as_mut_slice(),
            &mut self.proj_bias,
        ]
    }

    /// `(rows, cols)` of each tensor in canonical order; vectors are `(n, 1)`.
    pub fn shapes(&self) -> [(usize, usize); 11] {
        let v = |x: &Vec<T>| (x.len(), 1);
        [
            self.char_embeddings.shape(),
            self.conv_filters.shape(),
            v(&self.conv_bias),
            self.lstm_forward.input_weights.shape(),
            self.lstm_forward.recurrent_weights.shape(),
            v(&self.lstm_forward.bias),
            self.lstm_backward.input_weights.shape(),
            self.lstm_backward.recurrent_weights.shape(),
            v(&self.lstm_backward.bias),
            self.proj_weights.shape(),
            v(&self.proj_bias),
        ]
    }

    /// Checks every tensor against the shapes implied by `config`.
    pub fn check_shapes(&self, config: &NetworkConfig, char_vocab_size: usize) -> Result<(), NetworkError> {
        let expected = Self::zeros(config, char_vocab_size).shapes();
        for ((name, got), want) in Self::TENSOR_NAMES.iter().zip(self.shapes()).zip(expected) {
            if got != want {
                return Err(NetworkError::Shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let m = |x: &Matrix<T>| x.map(|v| U::lit(v.to_f64_lossy()));
        let v = |x: &Vec<T>| x.iter().map(|&v| U::lit(v.to_f64_lossy())).collect();
        let l = |x: &LstmParams<T>| LstmParams {
            input_weights: m(&x.input_weights),
            recurrent_weights: m(&x.recurrent_weights),
            bias: v(&x.bias),
        };
        NetworkParams {
            char_embeddings: m(&self.char_embeddings),
            conv_filters: m(&self.conv_filters),
            conv_bias: v(&self.conv_bias),
            lstm_forward: l(&self.lstm_forward),
            lstm_backward: l(&self.lstm_backward),
            proj_weights: m(&self.proj_weights),
            proj_bias: v(&self.proj_bias),
        }
    }
}

/// Everything the forward pass computed, kept for backpropagation.
pub(crate) struct ForwardTrace<T> {
    chars: Vec<charcnn::CharTrace<T>>,
    /// dropout multipliers per token, `None` when dropout is off
    masks: Option<Vec<Vec<T>>>,
    /// LSTM inputs after dropout
    inputs: Vec<Vec<T>>,
    reversed_inputs: Vec<Vec<T>>,
    fwd: lstm::LstmTrace<T>,
    bwd: lstm::LstmTrace<T>,
    pub emissions: Matrix<T>,
}

fn finite<T: Scalar>(xs: &[Vec<T>], stage: &'static str) -> Result<(), NetworkError> {
    if xs.iter().flatten().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NetworkError::NonFinite(stage))
    }
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1−rate)`.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect()
}

pub(crate) fn forward<T: Scalar>(
    sentence: &Sentence,
    table: &EmbeddingTable<T>,
    vocab: &CharVocab,
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<ForwardTrace<T>, NetworkError> {
    if sentence.is_empty() {
        return Err(NetworkError::EmptySentence);
    }
    if table.dim() != config.word_dim {
        return Err(NetworkError::Shape(format!(
            "embedding dimension {} differs from configured word_dim {}",
            table.dim(),
            config.word_dim
        )));
    }
    let width = config.char_filter_width;
    let chars: Vec<_> = sentence
        .texts()
        .map(|w| charcnn::forward(w, vocab, &params.char_embeddings, &params.conv_filters, &params.conv_bias, width))
        .collect();
    let mut inputs: Vec<Vec<T>> = sentence
        .texts()
        .zip(&chars)
        .map(|(w, c)| table.lookup(w).iter().chain(&c.features).copied().collect())
        .collect();
    finite(&inputs, "character features")?;

    let masks = match dropout {
        Some(rng) if config.dropout_rate > 0.0 => {
            let masks: Vec<Vec<T>> = inputs.iter().map(|x| dropout_mask(x.len(), config.dropout_rate, rng)).collect();
            for (x, m) in inputs.iter_mut().zip(&masks) {
                x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
            Some(masks)
        }
        _ => None,
    };

    let fwd = lstm::run(&params.lstm_forward, &inputs);
    finite(&fwd.hidden, "forward LSTM")?;
    let reversed_inputs: Vec<Vec<T>> = inputs.iter().rev().cloned().collect();
    let bwd = lstm::run(&params.lstm_backward, &reversed_inputs);
    finite(&bwd.hidden, "backward LSTM")?;

    let len = sentence.len();
    let mut emissions = Matrix::zeros(len, config.num_tags);
    for t in 0..len {
        let row = emissions.row_mut(t);
        row.copy_from_slice(&params.proj_bias);
        let h = hcat(&fwd, &bwd, t);
        params.proj_weights.tmul_vec_into(&h, row);
    }
    if !emissions.is_finite() {
        return Err(NetworkError::NonFinite("projection"));
    }
    Ok(ForwardTrace { chars, masks, inputs, reversed_inputs, fwd, bwd, emissions })
}

fn hcat<T: Scalar>(fwd: &lstm::LstmTrace<T>, bwd: &lstm::LstmTrace<T>, t: usize) -> Vec<T> {
    let len = fwd.hidden.len();
    fwd.hidden[t].iter().chain(&bwd.hidden[len - 1 - t]).copied().collect()
}

/// Backpropagates `d_emissions` through the network, accumulating into `grads`.
pub(crate) fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    d_emissions: &Matrix<T>,
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    grads: &mut NetworkParams<T>,
) {
    let len = d_emissions.rows();
    let h = config.lstm_hidden;
    let mut d_fwd = vec![vec![T::zero(); h]; len];
    let mut d_bwd = vec![vec![T::zero(); h]; len];
    for t in 0..len {
        let de = d_emissions.row(t);
        let hc = hcat(&trace.fwd, &trace.bwd, t);
        grads.proj_weights.add_outer(&hc, de);
        for (b, &d) in grads.proj_bias.iter_mut().zip(de) {
            *b += d;
        }
        let mut dh = vec![T::zero(); 2 * h];
        params.proj_weights.mul_vec_into(de, &mut dh);
        d_fwd[t].copy_from_slice(&dh[..h]);
        d_bwd[len - 1 - t].copy_from_slice(&dh[h..]);
    }
    let dx_fwd = lstm::backprop(&params.lstm_forward, &trace.inputs, &trace.fwd, &d_fwd, &mut grads.lstm_forward);
    let dx_bwd =
        lstm::backprop(&params.lstm_backward, &trace.reversed_inputs, &trace.bwd, &d_bwd, &mut grads.lstm_backward);

    let word_dim = config.word_dim;
    for t in 0..len {
        // word vectors are frozen; only the character part needs a gradient
        let mut d_char: Vec<T> =
            (word_dim..config.lstm_input_dim()).map(|k| dx_fwd[t][k] + dx_bwd[len - 1 - t][k]).collect();
        if let Some(masks) = &trace.masks {
            d_char.iter_mut().zip(&masks[t][word_dim..]).for_each(|(d, &m)| *d *= m);
        }
        charcnn::backprop(
            &trace.chars[t],
            &d_char,
            &params.char_embeddings,
            &params.conv_filters,
            config.char_filter_width,
            &mut grads.char_embeddings,
            &mut grads.conv_filters,
            &mut grads.conv_bias,
        );
    }
}

/// Per-token tag scores, `T × num_tags`. With `dropout_seed` set, a seeded
/// inverted-dropout mask is applied to the LSTM inputs.
pub fn emissions<T: Scalar>(
    sentence: &Sentence,
    table: &EmbeddingTable<T>,
    vocab: &CharVocab,
    params: &NetworkParams<T>,
    config: &NetworkConfig,
    dropout_seed: Option<u64>,
) -> Result<Matrix<T>, NetworkError> {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    forward(sentence, table, vocab, params, config, rng.as_mut()).map(|t| t.emissions)
}

/// Pooled character features of a single token.
pub fn char_features<T: Scalar>(
    token: &str,
    vocab: &CharVocab,
    params: &NetworkParams<T>,
    config: &NetworkConfig,
) -> Vec<T> {
    charcnn::forward(
        token,
        vocab,
        &params.char_embeddings,
        &params.conv_filters,
        &params.conv_bias,
        config.char_filter_width,
    )
    .features
}
