use serde::Serialize;

use super::{check_alignment, EvaluationError};
use crate::corpus::{Document, EntitySpan};

/// Counts of predicted spans by error class, plus missed gold spans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ErrorBreakdown {
    pub correct: usize,
    /// Same extent, different label.
    pub label_error: usize,
    /// Same label, overlapping but unequal extent.
    pub boundary_error: usize,
    /// No gold span accounts for the prediction.
    pub spurious: usize,
    /// Gold spans left unaccounted for by any prediction.
    pub missed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Correct,
    LabelError,
    BoundaryError,
    Spurious,
    Missed,
}

/// One classified span, for review in the retraining loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorInstance {
    pub kind: ErrorKind,
    pub document: String,
    pub sentence_index: usize,
    pub gold: Option<(String, String)>,
    pub predicted: Option<(String, String)>,
}

fn classify(gold: &[EntitySpan], pred: &EntitySpan) -> (ErrorKind, Option<usize>) {
    if let Some(i) = gold.iter().position(|g| g == pred) {
        return (ErrorKind::Correct, Some(i));
    }
    if let Some(i) = gold.iter().position(|g| g.same_extent(pred)) {
        return (ErrorKind::LabelError, Some(i));
    }
    if let Some(i) = gold.iter().position(|g| g.label == pred.label && g.overlaps(pred)) {
        return (ErrorKind::BoundaryError, Some(i));
    }
    (ErrorKind::Spurious, None)
}

/// Classifies every predicted span and every unaccounted gold span.
pub fn error_details(gold: &[Document], pred: &[Document]) -> Result<Vec<ErrorInstance>, EvaluationError> {
    check_alignment(gold, pred)?;
    let mut out = Vec::new();
    for (g, p) in gold.iter().zip(pred) {
        let gold_spans = g.spans();
        let mut used = vec![false; gold_spans.len()];
        for ps in p.spans() {
            let (kind, partner) = classify(&gold_spans, &ps);
            if let Some(i) = partner {
                used[i] = true;
            }
            out.push(ErrorInstance {
                kind,
                document: g.id.clone(),
                sentence_index: ps.sentence_index,
                gold: partner.map(|i| (gold_spans[i].label.clone(), g.span_text(&gold_spans[i]))),
                predicted: Some((ps.label.clone(), p.span_text(&ps))),
            });
        }
        for (gs, _) in gold_spans.iter().zip(&used).filter(|(_, u)| !**u) {
            out.push(ErrorInstance {
                kind: ErrorKind::Missed,
                document: g.id.clone(),
                sentence_index: gs.sentence_index,
                gold: Some((gs.label.clone(), g.span_text(gs))),
                predicted: None,
            });
        }
    }
    Ok(out)
}

pub fn error_breakdown(gold: &[Document], pred: &[Document]) -> Result<ErrorBreakdown, EvaluationError> {
    let mut b = ErrorBreakdown::default();
    for e in error_details(gold, pred)? {
        match e.kind {
            ErrorKind::Correct => b.correct += 1,
            ErrorKind::LabelError => b.label_error += 1,
            ErrorKind::BoundaryError => b.boundary_error += 1,
            ErrorKind::Spurious => b.spurious += 1,
            ErrorKind::Missed => b.missed += 1,
        }
    }
    Ok(b)
}
