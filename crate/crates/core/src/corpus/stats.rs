use std::collections::BTreeMap;
use std::ops::Add;

use serde::Serialize;

use super::Document;

/// Raw size and entity counts of a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub document_count: usize,
    pub sentence_count: usize,
    pub token_count: usize,
    /// Only labels with at least one entity appear.
    pub entity_counts: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn entity_total(&self) -> usize {
        self.entity_counts.values().sum()
    }

    pub fn count(&self, label: &str) -> usize {
        self.entity_counts.get(label).copied().unwrap_or(0)
    }
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(mut self, rhs: CorpusStats) -> CorpusStats {
        self.document_count += rhs.document_count;
        self.sentence_count += rhs.sentence_count;
        self.token_count += rhs.token_count;
        for (k, v) in rhs.entity_counts {
            *self.entity_counts.entry(k).or_default() += v;
        }
        self
    }
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let mut stats = CorpusStats { document_count: docs.len(), ..Default::default() };
    for d in docs {
        stats.sentence_count += d.sentences.len();
        stats.token_count += d.token_count();
        for span in d.spans() {
            *stats.entity_counts.entry(span.label).or_default() += 1;
        }
    }
    stats
}
