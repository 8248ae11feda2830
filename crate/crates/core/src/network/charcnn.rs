//! Character convolution with tanh and max-over-time pooling.

use crate::embeddings::CharVocab;
use crate::scalar::Scalar;
use crate::tensor::{dot, Matrix};

/// Activations of one token kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct CharTrace<T> {
    /// padded character indices
    pub indices: Vec<usize>,
    /// winning window start per filter
    pub argmax: Vec<usize>,
    pub features: Vec<T>,
}

/// Character indices, padded symmetrically with `pad` up to `width` when the
/// token is shorter than the filter.
pub(crate) fn padded_indices(token: &str, vocab: &CharVocab, width: usize) -> Vec<usize> {
    let chars = vocab.encode(token);
    if chars.len() >= width {
        return chars;
    }
    let missing = width - chars.len();
    let left = missing / 2;
    let mut out = vec![vocab.pad_index(); left];
    out.extend(chars);
    out.resize(width, vocab.pad_index());
    out
}

/// Window vector: the embeddings of `width` consecutive characters, concatenated.
fn window<T: Scalar>(embeddings: &Matrix<T>, indices: &[usize], start: usize, width: usize) -> Vec<T> {
    indices[start..start + width].iter().flat_map(|&c| embeddings.row(c).iter().copied()).collect()
}

pub(crate) fn forward<T: Scalar>(
    token: &str,
    vocab: &CharVocab,
    embeddings: &Matrix<T>,
    filters: &Matrix<T>,
    bias: &[T],
    width: usize,
) -> CharTrace<T> {
    let indices = padded_indices(token, vocab, width);
    let windows: Vec<Vec<T>> = (0..=indices.len() - width).map(|p| window(embeddings, &indices, p, width)).collect();
    let mut argmax = Vec::with_capacity(bias.len());
    let mut features = Vec::with_capacity(bias.len());
    for (f, &b) in bias.iter().enumerate() {
        let (mut best, mut arg) = (T::neg_infinity(), 0);
        for (p, w) in windows.iter().enumerate() {
            let a = b + dot(filters.row(f), w);
            if a.is_nan() {
                best = a;
                break;
            }
            if a > best {
                best = a;
                arg = p;
            }
        }
        argmax.push(arg);
        features.push(best.tanh());
    }
    CharTrace { indices, argmax, features }
}

/// Accumulates gradients for the embeddings, filters and bias given the
/// gradient `d_features` at the pooled output.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop<T: Scalar>(
    trace: &CharTrace<T>,
    d_features: &[T],
    embeddings: &Matrix<T>,
    filters: &Matrix<T>,
    width: usize,
    d_embeddings: &mut Matrix<T>,
    d_filters: &mut Matrix<T>,
    d_bias: &mut [T],
) {
    let dim = embeddings.cols();
    for (f, (&d, &y)) in d_features.iter().zip(&trace.features).enumerate() {
        let da = d * (T::one() - y * y);
        if da == T::zero() {
            continue;
        }
        d_bias[f] += da;
        let start = trace.argmax[f];
        for w in 0..width {
            let c = trace.indices[start + w];
            for e in 0..dim {
                d_filters.add_at(f, w * dim + e, da * embeddings.get(c, e));
                d_embeddings.add_at(c, e, da * filters.get(f, w * dim + e));
            }
        }
    }
}
