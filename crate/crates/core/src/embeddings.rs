//! Frozen word-embedding tables and character vocabularies.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};

use thiserror::Error;

use crate::corpus::Document;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Documented default width of the clinical word vectors.
pub const DEFAULT_WORD_DIM: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding file contains no vectors")]
    Empty,
    #[error("cannot build a character vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("i/o error: {0}")]
    Io(String),
}

/// Word → vector table. Lookup is total: exact match, then lowercase match,
/// then the zero `unk` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix<T>,
    unk: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Builds a table from `(word, vector)` rows. Later duplicates are ignored.
    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<T>)>) -> Option<Self> {
        if dim == 0 {
            return None;
        }
        let mut words = Vec::new();
        let mut index = HashMap::new();
        let mut data = Vec::new();
        for (w, v) in rows {
            if v.len() != dim {
                return None;
            }
            if index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), words.len());
            words.push(w);
            data.extend(v);
        }
        let vectors = Matrix::from_vec(words.len(), dim, data)?;
        Some(Self { words, index, vectors, unk: vec![T::zero(); dim] })
    }

    pub fn dim(&self) -> usize {
        self.unk.len()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn unk_vector(&self) -> &[T] {
        &self.unk
    }

    /// Row index of `word` after the case fallback, `None` when out of vocabulary.
    pub fn resolve(&self, word: &str) -> Option<usize> {
        self.index.get(word).or_else(|| self.index.get(&word.to_lowercase())).copied()
    }

    pub fn lookup(&self, word: &str) -> &[T] {
        match self.resolve(word) {
            Some(i) => self.vectors.row(i),
            None => &self.unk,
        }
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingTable<U> {
        EmbeddingTable {
            words: self.words.clone(),
            index: self.index.clone(),
            vectors: self.vectors.map(|x| U::lit(x.to_f64_lossy())),
            unk: vec![U::zero(); self.dim()],
        }
    }
}

/// Reads the whitespace-separated text format, with an optional
/// `<count> <dim>` header line.
pub fn load_embeddings<T: Scalar>(input: impl Read) -> Result<EmbeddingTable<T>, EmbeddingError> {
    let mut dim: Option<usize> = None;
    let mut declared_count: Option<usize> = None;
    let mut rows = Vec::new();
    let mut first_content = true;
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EmbeddingError::Io(e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if std::mem::take(&mut first_content) && fields.len() == 2 {
            if let (Ok(count), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if d == 0 {
                    return Err(EmbeddingError::Format {
                        line: line_no,
                        message: "header declares dimension 0".into(),
                    });
                }
                declared_count = Some(count);
                dim = Some(d);
                continue;
            }
        }
        if fields.len() < 2 {
            return Err(EmbeddingError::Format { line: line_no, message: "expected a word followed by values".into() });
        }
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).map(T::lit).ok_or_else(|| EmbeddingError::Format {
                    line: line_no,
                    message: format!("`{f}` is not a finite number"),
                })
            })
            .collect::<Result<Vec<T>, _>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(EmbeddingError::Format {
                line: line_no,
                message: format!("expected {expected} values, found {}", values.len()),
            });
        }
        rows.push((fields[0].to_string(), values));
    }
    if rows.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    if let Some(count) = declared_count {
        if count != rows.len() {
            return Err(EmbeddingError::Format {
                line: 1,
                message: format!("header declares {count} vectors, found {}", rows.len()),
            });
        }
    }
    let dim = dim.unwrap_or_default();
    EmbeddingTable::from_rows(dim, rows).ok_or(EmbeddingError::Empty)
}

/// Character alphabet for the character CNN, plus reserved `unk` and `pad`
/// indices after the last character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Builds from an explicit character list; duplicates are dropped and the
    /// result sorted by code point.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { chars, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn unk_index(&self) -> usize {
        self.chars.len()
    }

    pub fn pad_index(&self) -> usize {
        self.chars.len() + 1
    }

    /// Total rows needed in a character-embedding matrix.
    pub fn size(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.unk_index())
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.index(c)).collect()
    }
}

pub fn build_char_vocab(docs: &[Document]) -> Result<CharVocab, EmbeddingError> {
    let chars: BTreeSet<char> =
        docs.iter().flat_map(|d| &d.sentences).flat_map(|s| s.texts()).flat_map(str::chars).collect();
    if chars.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    Ok(CharVocab::from_chars(chars))
}
