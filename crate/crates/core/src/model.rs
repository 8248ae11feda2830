//! A complete tagger: schema, vocabularies, network and CRF.

use log::warn;
use thiserror::Error;

use crate::corpus::{Document, LabelSet, Sentence, Tag, MAX_SENTENCE_LEN};
use crate::crf::{CrfError, CrfParams};
use crate::embeddings::{CharVocab, EmbeddingTable};
use crate::network::{self, NetworkConfig, NetworkError, NetworkParams};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub labels: LabelSet,
    pub config: NetworkConfig,
    pub char_vocab: CharVocab,
    pub embeddings: EmbeddingTable<T>,
    pub network: NetworkParams<T>,
    pub crf: CrfParams<T>,
}

impl<T: Scalar> Model<T> {
    /// Checks that every component agrees with the configuration.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        if self.config.num_tags != self.labels.num_tags() {
            return Err(ModelError::Inconsistent(format!(
                "config has {} tags, label set implies {}",
                self.config.num_tags,
                self.labels.num_tags()
            )));
        }
        if self.embeddings.dim() != self.config.word_dim {
            return Err(ModelError::Inconsistent(format!(
                "embedding dimension {} differs from word_dim {}",
                self.embeddings.dim(),
                self.config.word_dim
            )));
        }
        self.network.check_shapes(&self.config, self.char_vocab.size())?;
        let n = self.config.num_tags;
        if self.crf.transitions.shape() != (n, n) || self.crf.start_scores.len() != n || self.crf.end_scores.len() != n
        {
            return Err(ModelError::Inconsistent(format!("CRF parameters do not match {n} tags")));
        }
        if !self.network.is_finite() || !self.crf.is_finite() {
            return Err(ModelError::Inconsistent("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn emissions(&self, sentence: &Sentence, dropout_seed: Option<u64>) -> Result<Matrix<T>, ModelError> {
        Ok(network::emissions(sentence, &self.embeddings, &self.char_vocab, &self.network, &self.config, dropout_seed)?)
    }

    /// Gold tag indices of a sentence.
    pub fn tag_indices(&self, sentence: &Sentence) -> Option<Vec<usize>> {
        sentence.tokens().iter().map(|t| self.labels.tag_index(&t.tag)).collect()
    }

    /// Viterbi decoding under the IOB2 transition mask.
    pub fn decode(&self, sentence: &Sentence) -> Result<Vec<Tag>, ModelError> {
        let masked = self.crf.with_bio_mask(&self.labels);
        self.decode_with(sentence, &masked)
    }

    fn decode_with(&self, sentence: &Sentence, masked: &CrfParams<T>) -> Result<Vec<Tag>, ModelError> {
        if sentence.len() > MAX_SENTENCE_LEN {
            warn!("sentence of {} tokens split into pieces of {MAX_SENTENCE_LEN}", sentence.len());
        }
        let mut tags = Vec::with_capacity(sentence.len());
        for piece in sentence.chunks(MAX_SENTENCE_LEN) {
            let e = self.emissions(&piece, None)?;
            let path = masked.viterbi(&e)?;
            tags.extend(path.tags.into_iter().map(|k| self.labels.tag_at(k).unwrap_or(Tag::Outside)));
        }
        Ok(repair_bio(tags))
    }

    pub fn predict_sentence(&self, sentence: &Sentence) -> Result<Sentence, ModelError> {
        let tags = self.decode(sentence)?;
        sentence.with_tags(tags).map_err(|e| ModelError::Inconsistent(e.to_string()))
    }

    /// Tags every sentence; document ids and tokens are preserved.
    pub fn predict_documents(&self, docs: &[Document]) -> Result<Vec<Document>, ModelError> {
        let masked = self.crf.with_bio_mask(&self.labels);
        docs.iter()
            .map(|d| {
                let sentences = d
                    .sentences
                    .iter()
                    .map(|s| {
                        let tags = self.decode_with(s, &masked)?;
                        s.with_tags(tags).map_err(|e| ModelError::Inconsistent(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Document::new(d.id.clone(), sentences))
            })
            .collect()
    }

    /// Rounds every parameter through `f32`, the on-disk precision.
    pub fn quantized(&self) -> Self {
        let q = |x: T| T::lit(x.to_f64_lossy() as f32 as f64);
        let mut m = self.clone();
        for t in m.network.tensors_mut() {
            t.iter_mut().for_each(|v| *v = q(*v));
        }
        for t in [m.crf.transitions.as_mut_slice(), &mut m.crf.start_scores, &mut m.crf.end_scores] {
            t.iter_mut().for_each(|v| *v = q(*v));
        }
        m.embeddings = m.embeddings.cast::<f32>().cast::<T>();
        m
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        Model {
            labels: self.labels.clone(),
            config: self.config.clone(),
            char_vocab: self.char_vocab.clone(),
            embeddings: self.embeddings.cast(),
            network: self.network.cast(),
            crf: CrfParams {
                transitions: self.crf.transitions.map(c),
                start_scores: self.crf.start_scores.iter().map(|&x| c(x)).collect(),
                end_scores: self.crf.end_scores.iter().map(|&x| c(x)).collect(),
            },
        }
    }
}

/// Rewrites any `I-X` that cannot follow its predecessor as `B-X`.
pub fn repair_bio(mut tags: Vec<Tag>) -> Vec<Tag> {
    for i in 0..tags.len() {
        let ok = tags[i].can_follow(i.checked_sub(1).map(|p| &tags[p]));
        if !ok {
            if let Tag::Inside(l) = &tags[i] {
                tags[i] = Tag::Begin(l.clone());
            }
        }
    }
    tags
}
