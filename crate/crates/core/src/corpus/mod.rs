//! Tagged corpora: label schema, BIO tags, entity spans and the CoNLL codec.

mod conll;
mod split;
mod stats;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conll::{parse_conll, parse_conll_untagged, read_conll_file, write_conll, DOCSTART};
pub use split::split_corpus;
pub use stats::{corpus_stats, CorpusStats};
pub use tokenize::tokenize_raw;

/// Sentences longer than this are split before entering the network.
pub const MAX_SENTENCE_LEN: usize = 512;

/// The twelve entity categories of the immune-mediated / infectious disease schema.
pub const DEFAULT_LABELS: [&str; 12] = [
    "Bacterial_Infection",
    "Biomarker",
    "Fungal_Infection",
    "Geographical_Location",
    "Immune_Mediated_Disease",
    "Other_Disease_Disorder",
    "Other_Test",
    "Rad_Test",
    "Symptom",
    "Test_Result",
    "Treatment",
    "Viral_Infection",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown entity label `{label}`")]
    Schema { line: usize, label: String },
    #[error("line {line}: tag `{tag}` cannot follow `{previous}`")]
    Tagging { line: usize, tag: String, previous: String },
    #[error("invalid label set: {0}")]
    LabelSet(String),
    #[error("invalid spans: {0}")]
    Validation(String),
    #[error("cannot split corpus: {0}")]
    Split(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Ordered set of entity labels. Order fixes tag indices and report rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(CorpusError::LabelSet("empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if !is_valid_label(l) {
                return Err(CorpusError::LabelSet(format!("`{l}` is not a valid label name")));
            }
            if labels[..i].contains(l) {
                return Err(CorpusError::LabelSet(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    /// Number of BIO tags: `B-` and `I-` per label plus `O`.
    pub fn num_tags(&self) -> usize {
        2 * self.labels.len() + 1
    }

    /// Dense tag index: `O` is 0, `B-label_i` is `2i+1`, `I-label_i` is `2i+2`.
    pub fn tag_index(&self, tag: &Tag) -> Option<usize> {
        match tag {
            Tag::Outside => Some(0),
            Tag::Begin(l) => self.index_of(l).map(|i| 2 * i + 1),
            Tag::Inside(l) => self.index_of(l).map(|i| 2 * i + 2),
        }
    }

    pub fn tag_at(&self, index: usize) -> Option<Tag> {
        match index {
            0 => Some(Tag::Outside),
            k if k < self.num_tags() => {
                let label = self.labels[(k - 1) / 2].clone();
                Some(if k % 2 == 1 { Tag::Begin(label) } else { Tag::Inside(label) })
            }
            _ => None,
        }
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self { labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect() }
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = CorpusError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(l: LabelSet) -> Self {
        l.labels
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.labels.join(", "))
    }
}

fn is_valid_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// IOB2 tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn label(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(l) | Tag::Inside(l) => Some(l),
        }
    }

    /// Whether `self` may directly follow `previous` (`None` = sentence start).
    pub fn can_follow(&self, previous: Option<&Tag>) -> bool {
        match self {
            Tag::Inside(l) => matches!(previous, Some(Tag::Begin(p) | Tag::Inside(p)) if p == l),
            _ => true,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(l) => write!(f, "B-{l}"),
            Tag::Inside(l) => write!(f, "I-{l}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        match s.split_once('-') {
            Some(("B", l)) if !l.is_empty() => Ok(Tag::Begin(l.to_string())),
            Some(("I", l)) if !l.is_empty() => Ok(Tag::Inside(l.to_string())),
            _ => Err(format!("malformed tag `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub tag: Tag,
}

impl Token {
    pub fn new(text: impl Into<String>, tag: Tag) -> Self {
        Self { text: text.into(), tag }
    }

    pub fn untagged(text: impl Into<String>) -> Self {
        Self::new(text, Tag::Outside)
    }
}

/// A non-empty, BIO-valid token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::Validation("empty sentence".into()));
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.text.is_empty() || t.text.chars().any(char::is_whitespace) {
                return Err(CorpusError::Validation(format!("token {i} `{}` is empty or contains whitespace", t.text)));
            }
            let prev = i.checked_sub(1).map(|p| &tokens[p].tag);
            if !t.tag.can_follow(prev) {
                return Err(CorpusError::Validation(format!(
                    "token {i}: `{}` cannot follow `{}`",
                    t.tag,
                    prev.map_or("<start>".to_string(), Tag::to_string)
                )));
            }
        }
        Ok(Self { tokens })
    }

    /// Builds a sentence from texts and tag strings.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, CorpusError> {
        let tokens = pairs
            .into_iter()
            .map(|(w, t)| t.parse::<Tag>().map(|tag| Token::new(w, tag)).map_err(CorpusError::Validation))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    pub fn tags(&self) -> Vec<Tag> {
        self.tokens.iter().map(|t| t.tag.clone()).collect()
    }

    /// Entity spans of this sentence, stamped with `sentence_index`.
    pub fn spans(&self, sentence_index: usize) -> Vec<EntitySpan> {
        let mut spans = tags_to_spans(&self.tags());
        for s in &mut spans {
            s.sentence_index = sentence_index;
        }
        spans
    }

    /// Same tokens, new tags. Tags must be BIO-valid.
    pub fn with_tags(&self, tags: Vec<Tag>) -> Result<Self, CorpusError> {
        if tags.len() != self.tokens.len() {
            return Err(CorpusError::Validation(format!("{} tags for {} tokens", tags.len(), self.tokens.len())));
        }
        let tokens = self.tokens.iter().zip(tags).map(|(t, tag)| Token::new(t.text.clone(), tag)).collect();
        Self::new(tokens)
    }

    pub fn untagged(&self) -> Self {
        Self { tokens: self.tokens.iter().map(|t| Token::untagged(t.text.clone())).collect() }
    }

    /// Splits into consecutive pieces of at most `max_len` tokens. A piece
    /// starting with `I-X` has it rewritten to `B-X`.
    pub fn chunks(&self, max_len: usize) -> Vec<Sentence> {
        assert!(max_len > 0);
        self.tokens
            .chunks(max_len)
            .map(|c| {
                let mut tokens = c.to_vec();
                if let Tag::Inside(l) = &tokens[0].tag {
                    tokens[0].tag = Tag::Begin(l.clone());
                }
                Sentence { tokens }
            })
            .collect()
    }

    /// Checks that every tag label belongs to `labels`.
    pub fn check_labels(&self, labels: &LabelSet) -> Result<(), CorpusError> {
        for t in &self.tokens {
            if let Some(l) = t.tag.label() {
                if !labels.contains(l) {
                    return Err(CorpusError::Schema { line: 0, label: l.to_string() });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn new(id: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Self { id: id.into(), sentences }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// All spans of the document, sentence by sentence.
    pub fn spans(&self) -> Vec<EntitySpan> {
        self.sentences.iter().enumerate().flat_map(|(i, s)| s.spans(i)).collect()
    }

    /// Surface text of a span, tokens joined by single spaces.
    pub fn span_text(&self, span: &EntitySpan) -> String {
        let tokens = self.sentences[span.sentence_index].tokens();
        tokens[span.start..span.end].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
    }
}

/// Labeled half-open token range `[start, end)` within one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub sentence_index: usize,
}

impl EntitySpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self { label: label.into(), start, end, sentence_index: 0 }
    }

    pub fn in_sentence(mut self, sentence_index: usize) -> Self {
        self.sentence_index = sentence_index;
        self
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.sentence_index == other.sentence_index && self.start < other.end && other.start < self.end
    }

    pub fn same_extent(&self, other: &EntitySpan) -> bool {
        self.sentence_index == other.sentence_index && self.start == other.start && self.end == other.end
    }
}

/// Decodes IOB2 tags into spans (sentence index 0). A stray `I-X` that does
/// not continue an `X` span opens a new span.
pub fn tags_to_spans(tags: &[Tag]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Inside(l) if open.as_ref().is_some_and(|s| &s.label == l) => {
                if let Some(s) = open.as_mut() {
                    s.end = i + 1;
                }
            }
            Tag::Begin(l) | Tag::Inside(l) => {
                spans.extend(open.take());
                open = Some(EntitySpan::new(l.clone(), i, i + 1));
            }
            Tag::Outside => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

/// Encodes non-overlapping spans as IOB2 tags over `length` tokens.
pub fn spans_to_tags(length: usize, spans: &[EntitySpan]) -> Result<Vec<Tag>, CorpusError> {
    let mut tags = vec![Tag::Outside; length];
    let mut covered = vec![false; length];
    for s in spans {
        if s.start >= s.end || s.end > length {
            return Err(CorpusError::Validation(format!(
                "span {}[{}, {}) out of bounds for length {length}",
                s.label, s.start, s.end
            )));
        }
        if covered[s.start..s.end].iter().any(|&c| c) {
            return Err(CorpusError::Validation(format!(
                "span {}[{}, {}) overlaps another span",
                s.label, s.start, s.end
            )));
        }
        covered[s.start..s.end].iter_mut().for_each(|c| *c = true);
        tags[s.start] = Tag::Begin(s.label.clone());
        for t in &mut tags[s.start + 1..s.end] {
            *t = Tag::Inside(s.label.clone());
        }
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &[&str]) -> Vec<Tag> {
        s.iter().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn default_labels_in_schema_order() {
        let l = LabelSet::default();
        assert_eq!(l.len(), 12);
        assert_eq!(l.labels()[0], "Bacterial_Infection");
        assert_eq!(l.labels()[4], "Immune_Mediated_Disease");
        assert_eq!(l.labels()[11], "Viral_Infection");
        assert_eq!(l.num_tags(), 25);
    }

    #[test]
    fn label_set_rejects_bad_input() {
        assert!(LabelSet::new(Vec::<String>::new()).is_err());
        assert!(LabelSet::new(["A", "A"]).is_err());
        assert!(LabelSet::new(["1abc"]).is_err());
        assert!(LabelSet::new(["has-dash"]).is_err());
        assert!(LabelSet::new(["Ok_1"]).is_ok());
    }

    #[test]
    fn tag_index_round_trip() {
        let l = LabelSet::new(["A", "B"]).unwrap();
        for k in 0..l.num_tags() {
            assert_eq!(l.tag_index(&l.tag_at(k).unwrap()), Some(k));
        }
        assert_eq!(l.tag_at(5), None);
        assert_eq!(l.tag_index(&Tag::Begin("Z".into())), None);
    }

    #[test]
    fn tag_parse_and_display() {
        for s in ["O", "B-Symptom", "I-Rad_Test"] {
            assert_eq!(s.parse::<Tag>().unwrap().to_string(), s);
        }
        assert!("X-Foo".parse::<Tag>().is_err());
        assert!("B-".parse::<Tag>().is_err());
    }

    #[test]
    fn spans_from_tags_examples() {
        assert!(tags_to_spans(&tags(&["O", "O", "O"])).is_empty());
        assert_eq!(
            tags_to_spans(&tags(&["B-Symptom", "I-Symptom", "O", "B-Treatment"])),
            vec![EntitySpan::new("Symptom", 0, 2), EntitySpan::new("Treatment", 3, 4)]
        );
        assert_eq!(
            tags_to_spans(&tags(&["B-Symptom", "B-Symptom"])),
            vec![EntitySpan::new("Symptom", 0, 1), EntitySpan::new("Symptom", 1, 2)]
        );
    }

    #[test]
    fn tags_from_spans_examples() {
        assert_eq!(spans_to_tags(3, &[]).unwrap(), tags(&["O", "O", "O"]));
        assert_eq!(
            spans_to_tags(4, &[EntitySpan::new("Biomarker", 1, 3)]).unwrap(),
            tags(&["O", "B-Biomarker", "I-Biomarker", "O"])
        );
        let overlap = spans_to_tags(2, &[EntitySpan::new("Symptom", 0, 1), EntitySpan::new("Symptom", 0, 2)]);
        assert!(matches!(overlap, Err(CorpusError::Validation(_))));
        assert!(spans_to_tags(2, &[EntitySpan::new("Symptom", 1, 3)]).is_err());
        assert!(spans_to_tags(2, &[EntitySpan::new("Symptom", 1, 1)]).is_err());
    }

    #[test]
    fn sentence_rejects_invalid_bio() {
        assert!(Sentence::from_pairs([("a", "I-X")]).is_err());
        assert!(Sentence::from_pairs([("a", "O"), ("b", "I-X")]).is_err());
        assert!(Sentence::from_pairs([("a", "B-Y"), ("b", "I-X")]).is_err());
        assert!(Sentence::from_pairs([("a", "B-X"), ("b", "I-X"), ("c", "I-X")]).is_ok());
        assert!(Sentence::new(vec![]).is_err());
        assert!(Sentence::new(vec![Token::untagged("a b")]).is_err());
    }

    #[test]
    fn chunks_repair_leading_inside() {
        let s = Sentence::from_pairs([("a", "B-X"), ("b", "I-X"), ("c", "I-X")]).unwrap();
        let parts = s.chunks(2);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1].tokens()[0].tag, Tag::Begin("X".into()));
    }

    #[test]
    fn document_span_text() {
        let s = Sentence::from_pairs([("joint", "B-Symptom"), ("pain", "I-Symptom")]).unwrap();
        let d = Document::new("d", vec![s]);
        let spans = d.spans();
        assert_eq!(d.span_text(&spans[0]), "joint pain");
    }
}
