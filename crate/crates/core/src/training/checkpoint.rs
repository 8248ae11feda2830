//! Checkpoint container: a magic line, one line of JSON metadata, then
//! little-endian `f32` tensor blobs in the order the header declares.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainConfig;
use crate::corpus::LabelSet;
use crate::crf::CrfParams;
use crate::embeddings::{CharVocab, EmbeddingTable};
use crate::model::Model;
use crate::network::{NetworkConfig, NetworkParams};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "CLINICAL-NER-CHECKPOINT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    Integrity(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_completed: usize,
    pub final_loss: f64,
    pub train_config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub metadata: TrainingMetadata,
    pub format_version: u32,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: Model<T>, metadata: TrainingMetadata) -> Self {
        Self { model, metadata, format_version: CHECKPOINT_VERSION }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    labels: LabelSet,
    network_config: NetworkConfig,
    char_vocab: Vec<char>,
    embedding_words: Vec<String>,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
    blob_bytes: usize,
}

fn tensors_of<T: Scalar>(m: &Model<T>) -> Vec<(String, (usize, usize), Vec<f32>)> {
    let f = |s: &[T]| s.iter().map(|x| x.to_f64_lossy() as f32).collect::<Vec<f32>>();
    let mut out: Vec<_> = NetworkParams::<T>::TENSOR_NAMES
        .iter()
        .zip(m.network.shapes())
        .zip(m.network.tensors())
        .map(|((n, s), t)| (n.to_string(), s, f(t)))
        .collect();
    let n = m.crf.num_tags();
    out.push(("crf.transitions".into(), (n, n), f(m.crf.transitions.as_slice())));
    out.push(("crf.start_scores".into(), (n, 1), f(&m.crf.start_scores)));
    out.push(("crf.end_scores".into(), (n, 1), f(&m.crf.end_scores)));
    out.push(("word_embeddings".into(), m.embeddings.vectors().shape(), f(m.embeddings.vectors().as_slice())));
    out
}

pub fn write_checkpoint<T: Scalar>(c: &Checkpoint<T>, mut out: impl Write) -> Result<(), CheckpointError> {
    let tensors = tensors_of(&c.model);
    let blob_bytes = tensors.iter().map(|(_, _, d)| d.len() * 4).sum();
    let header = Header {
        format_version: c.format_version,
        labels: c.model.labels.clone(),
        network_config: c.model.config.clone(),
        char_vocab: c.model.char_vocab.chars().to_vec(),
        embedding_words: c.model.embeddings.words().to_vec(),
        metadata: c.metadata.clone(),
        tensors: tensors
            .iter()
            .map(|(name, (rows, cols), _)| TensorEntry { name: name.clone(), rows: *rows, cols: *cols })
            .collect(),
        blob_bytes,
    };
    let json = serde_json::to_string(&header).map_err(|e| CheckpointError::Integrity(e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + blob_bytes + MAGIC.len() + 2);
    buf.extend_from_slice(MAGIC.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    for (_, _, data) in &tensors {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn integrity(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Integrity(msg.into())
}

pub fn read_checkpoint<T: Scalar>(mut input: impl Read) -> Result<Checkpoint<T>, CheckpointError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let magic_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| integrity("missing header"))?;
    if &bytes[..magic_end] != MAGIC.as_bytes() {
        return Err(integrity("not a checkpoint file"));
    }
    let rest = &bytes[magic_end + 1..];
    let header_end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| integrity("truncated header"))?;
    let header_json: serde_json::Value =
        serde_json::from_slice(&rest[..header_end]).map_err(|e| integrity(format!("header: {e}")))?;
    let version = header_json
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| integrity("header lacks format_version"))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(CheckpointError::UnsupportedVersion { found: version, supported: CHECKPOINT_VERSION });
    }
    let header: Header = serde_json::from_value(header_json).map_err(|e| integrity(format!("header: {e}")))?;
    let blob = &rest[header_end + 1..];
    let declared: usize = header.tensors.iter().map(|t| t.rows * t.cols * 4).sum();
    if declared != header.blob_bytes || blob.len() != header.blob_bytes {
        return Err(integrity(format!("expected {} tensor bytes, found {}", header.blob_bytes, blob.len())));
    }

    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t.rows * t.cols;
        let data: Vec<T> = blob[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        offset += 4 * n;
        tensors.push((t, data));
    }
    let mut tensors = tensors.into_iter();
    let mut take = |name: &str| -> Result<Matrix<T>, CheckpointError> {
        let (entry, data) = tensors.next().ok_or_else(|| integrity(format!("missing tensor {name}")))?;
        if entry.name != name {
            return Err(integrity(format!("expected tensor {name}, found {}", entry.name)));
        }
        Matrix::from_vec(entry.rows, entry.cols, data).ok_or_else(|| integrity(format!("bad shape for {name}")))
    };

    let names = NetworkParams::<T>::TENSOR_NAMES;
    let char_embeddings = take(names[0])?;
    let conv_filters = take(names[1])?;
    let conv_bias = take(names[2])?.into_vec();
    let mut lstm = |base: usize| -> Result<_, CheckpointError> {
        Ok(crate::network::LstmParams {
            input_weights: take(names[base])?,
            recurrent_weights: take(names[base + 1])?,
            bias: take(names[base + 2])?.into_vec(),
        })
    };
    let lstm_forward = lstm(3)?;
    let lstm_backward = lstm(6)?;
    let proj_weights = take(names[9])?;
    let proj_bias = take(names[10])?.into_vec();
    let network = NetworkParams {
        char_embeddings,
        conv_filters,
        conv_bias,
        lstm_forward,
        lstm_backward,
        proj_weights,
        proj_bias,
    };
    let crf = CrfParams {
        transitions: take("crf.transitions")?,
        start_scores: take("crf.start_scores")?.into_vec(),
        end_scores: take("crf.end_scores")?.into_vec(),
    };
    let vectors = take("word_embeddings")?;
    if vectors.rows() != header.embedding_words.len() {
        return Err(integrity("embedding vocabulary and vectors disagree"));
    }
    let dim = vectors.cols();
    let rows = header.embedding_words.into_iter().enumerate().map(|(i, w)| (w, vectors.row(i).to_vec()));
    let embeddings = EmbeddingTable::from_rows(dim, rows).ok_or_else(|| integrity("bad embedding table"))?;
    if embeddings.len() != vectors.rows() {
        return Err(integrity("duplicate embedding words"));
    }

    let model = Model {
        labels: header.labels,
        config: header.network_config,
        char_vocab: CharVocab::from_chars(header.char_vocab.iter().copied()),
        embeddings,
        network,
        crf,
    };
    if model.char_vocab.chars().len() != header.char_vocab.len() {
        return Err(integrity("duplicate characters in vocabulary"));
    }
    model.validate().map_err(|e| integrity(e.to_string()))?;
    Ok(Checkpoint { model, metadata: header.metadata, format_version: header.format_version })
}

pub fn save_checkpoint<T: Scalar>(c: &Checkpoint<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(c, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    read_checkpoint(std::fs::File::open(path)?)
}
