use serde::Serialize;

use super::{aggregate, check_alignment, match_counts, EvaluationError, LabelMetrics};
use crate::corpus::Document;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementReport {
    /// Percentage of tokens with identical tags, in `[0, 100]`.
    pub token_agreement_pct: f64,
    /// Strict entity micro-F1 of `b` scored against `a`.
    pub entity_f1_a_as_gold: f64,
    pub token_count: usize,
}

/// Agreement between two annotations of the same tokens. When neither side
/// marks any entity (or there are no tokens) agreement is complete.
pub fn iaa(annotation_a: &[Document], annotation_b: &[Document]) -> Result<AgreementReport, EvaluationError> {
    check_alignment(annotation_a, annotation_b)?;
    let mut total = 0usize;
    let mut same = 0usize;
    for (a, b) in annotation_a.iter().zip(annotation_b) {
        for (sa, sb) in a.sentences.iter().zip(&b.sentences) {
            for (ta, tb) in sa.tokens().iter().zip(sb.tokens()) {
                total += 1;
                same += usize::from(ta.tag == tb.tag);
            }
        }
    }
    let token_agreement_pct = if total == 0 { 100.0 } else { 100.0 * same as f64 / total as f64 };

    let counts = match_counts(annotation_a, annotation_b);
    let entity_f1_a_as_gold = if counts.is_empty() {
        1.0
    } else {
        let rows: Vec<LabelMetrics> =
            counts.into_iter().map(|(l, (tp, fp, fn_))| LabelMetrics::from_counts(l, tp, fp, fn_)).collect();
        aggregate(&rows).0.f1
    };
    Ok(AgreementReport { token_agreement_pct, entity_f1_a_as_gold, token_count: total })
}
