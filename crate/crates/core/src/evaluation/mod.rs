//! Strict entity-level scoring, error taxonomy and inter-annotator agreement.

mod errors;
mod iaa;
mod report;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, EntitySpan, LabelSet};

pub use errors::{error_breakdown, error_details, ErrorBreakdown, ErrorInstance, ErrorKind};
pub use iaa::{iaa, AgreementReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("annotations diverge at {location}: {message}")]
    Alignment { location: String, message: String },
    #[error("label `{0}` is not part of the label set")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold entity count.
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl LabelMetrics {
    pub fn from_counts(label: impl Into<String>, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self { label: label.into(), precision, recall, f1: harmonic(precision, recall), support: tp + fn_, tp, fp, fn_ }
    }

    /// Row from already-computed metrics, as printed in a published report.
    /// Counts are reconstructed from recall and precision by rounding.
    pub fn from_reported(label: impl Into<String>, precision: f64, recall: f64, f1: f64, support: usize) -> Self {
        let tp = (recall * support as f64).round() as usize;
        let fp = if precision > 0.0 { (tp as f64 / precision - tp as f64).round() as usize } else { 0 };
        Self { label: label.into(), precision, recall, f1, support, tp, fp, fn_: support - tp.min(support) }
    }

    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }
}

/// Precision, recall and F1 of one averaging scheme.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_label: Vec<LabelMetrics>,
    pub micro: Averages,
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub total_support: usize,
}

/// Micro (summed counts), macro (unweighted mean) and support-weighted
/// averages of per-label rows.
pub fn aggregate(per_label: &[LabelMetrics]) -> (Averages, Averages, Averages) {
    let (tp, fp, fn_) = per_label.iter().fold((0, 0, 0), |(a, b, c), m| (a + m.tp, b + m.fp, c + m.fn_));
    let mp = ratio(tp, tp + fp);
    let mr = ratio(tp, tp + fn_);
    let micro = Averages { precision: mp, recall: mr, f1: harmonic(mp, mr) };

    // labels with neither gold nor predicted spans stay out of the macro mean
    let active: Vec<&LabelMetrics> = per_label.iter().filter(|m| m.support > 0 || m.predicted() > 0).collect();
    let n = active.len().max(1) as f64;
    let macro_avg = Averages {
        precision: active.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: active.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: active.iter().map(|m| m.f1).sum::<f64>() / n,
    };

    let total: usize = per_label.iter().map(|m| m.support).sum();
    let weighted = if total == 0 {
        Averages::default()
    } else {
        let w =
            |f: fn(&LabelMetrics) -> f64| per_label.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64;
        Averages { precision: w(|m| m.precision), recall: w(|m| m.recall), f1: w(|m| m.f1) }
    };
    (micro, macro_avg, weighted)
}

impl EvalReport {
    pub fn from_label_metrics(per_label: Vec<LabelMetrics>) -> Self {
        let (micro, macro_avg, weighted) = aggregate(&per_label);
        let total_support = per_label.iter().map(|m| m.support).sum();
        Self { per_label, micro, macro_avg, weighted, total_support }
    }

    pub fn label(&self, label: &str) -> Option<&LabelMetrics> {
        self.per_label.iter().find(|m| m.label == label)
    }
}

fn location(doc: usize, sentence: Option<usize>, token: Option<usize>) -> String {
    let mut s = format!("document {}", doc + 1);
    if let Some(i) = sentence {
        s += &format!(", sentence {}", i + 1);
    }
    if let Some(t) = token {
        s += &format!(", token {}", t + 1);
    }
    s
}

/// Requires identical document, sentence and token structure.
pub(crate) fn check_alignment(gold: &[Document], pred: &[Document]) -> Result<(), EvaluationError> {
    if gold.len() != pred.len() {
        return Err(EvaluationError::Alignment {
            location: "corpus".into(),
            message: format!("{} vs {} documents", gold.len(), pred.len()),
        });
    }
    for (d, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.sentences.len() != p.sentences.len() {
            return Err(EvaluationError::Alignment {
                location: location(d, None, None),
                message: format!("{} vs {} sentences", g.sentences.len(), p.sentences.len()),
            });
        }
        for (s, (gs, ps)) in g.sentences.iter().zip(&p.sentences).enumerate() {
            for (t, (gt, pt)) in gs.tokens().iter().zip(ps.tokens()).enumerate() {
                if gt.text != pt.text {
                    return Err(EvaluationError::Alignment {
                        location: location(d, Some(s), Some(t)),
                        message: format!("`{}` vs `{}`", gt.text, pt.text),
                    });
                }
            }
            if gs.len() != ps.len() {
                let t = gs.len().min(ps.len());
                return Err(EvaluationError::Alignment {
                    location: location(d, Some(s), Some(t)),
                    message: format!("{} vs {} tokens", gs.len(), ps.len()),
                });
            }
        }
    }
    Ok(())
}

/// Per-label `(tp, fp, fn)` under strict matching, keyed by label name.
pub(crate) fn match_counts(gold: &[Document], pred: &[Document]) -> BTreeMap<String, (usize, usize, usize)> {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (d, (g, p)) in gold.iter().zip(pred).enumerate() {
        let gold_spans: HashSet<(usize, EntitySpan)> = g.spans().into_iter().map(|s| (d, s)).collect();
        let pred_spans: HashSet<(usize, EntitySpan)> = p.spans().into_iter().map(|s| (d, s)).collect();
        for (_, s) in &pred_spans {
            let c = counts.entry(s.label.clone()).or_default();
            if gold_spans.contains(&(d, s.clone())) {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for (_, s) in &gold_spans {
            if !pred_spans.contains(&(d, s.clone())) {
                counts.entry(s.label.clone()).or_default().2 += 1;
            }
        }
    }
    counts
}

/// Strict entity-level evaluation: a prediction is a true positive iff a gold
/// span with the same label, sentence, start and end exists.
pub fn evaluate(gold: &[Document], pred: &[Document], labels: &LabelSet) -> Result<EvalReport, EvaluationError> {
    check_alignment(gold, pred)?;
    let counts = match_counts(gold, pred);
    if let Some(l) = counts.keys().find(|l| !labels.contains(l)) {
        return Err(EvaluationError::UnknownLabel(l.clone()));
    }
    let per_label = labels
        .labels()
        .iter()
        .map(|l| {
            let (tp, fp, fn_) = counts.get(l).copied().unwrap_or_default();
            LabelMetrics::from_counts(l.clone(), tp, fp, fn_)
        })
        .collect();
    Ok(EvalReport::from_label_metrics(per_label))
}

/// Token-level diagnostic scoring: each entity token is a unit and matches
/// when gold and predicted labels agree, ignoring `B-`/`I-`.
pub fn evaluate_tokens(gold: &[Document], pred: &[Document], labels: &LabelSet) -> Result<EvalReport, EvaluationError> {
    check_alignment(gold, pred)?;
    let mut counts = vec![(0usize, 0usize, 0usize); labels.len()];
    let index = |l: &str| labels.index_of(l).ok_or_else(|| EvaluationError::UnknownLabel(l.to_string()));
    for (g, p) in gold.iter().zip(pred) {
        for (gs, ps) in g.sentences.iter().zip(&p.sentences) {
            for (gt, pt) in gs.tokens().iter().zip(ps.tokens()) {
                match (gt.tag.label(), pt.tag.label()) {
                    (Some(a), Some(b)) if a == b => counts[index(a)?].0 += 1,
                    (a, b) => {
                        if let Some(b) = b {
                            counts[index(b)?].1 += 1;
                        }
                        if let Some(a) = a {
                            counts[index(a)?].2 += 1;
                        }
                    }
                }
            }
        }
    }
    let per_label = labels
        .labels()
        .iter()
        .zip(counts)
        .map(|(l, (tp, fp, fn_))| LabelMetrics::from_counts(l.clone(), tp, fp, fn_))
        .collect();
    Ok(EvalReport::from_label_metrics(per_label))
}
