use std::fmt;

use super::{Averages, EvalReport};

impl fmt::Display for EvalReport {
    /// Category / Precision / Recall / F1-Score / Support rows, then the
    /// micro, macro and weighted averages.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.per_label.iter().map(|m| m.label.len()).max().unwrap_or(0).max("weighted avg".len());
        writeln!(
            f,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "Category", "Precision", "Recall", "F1-Score", "Support"
        )?;
        for m in &self.per_label {
            writeln!(
                f,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                m.label, m.precision, m.recall, m.f1, m.support
            )?;
        }
        let row = |f: &mut fmt::Formatter<'_>, name: &str, a: &Averages| {
            writeln!(
                f,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                name, a.precision, a.recall, a.f1, self.total_support
            )
        };
        row(f, "micro avg", &self.micro)?;
        row(f, "macro avg", &self.macro_avg)?;
        row(f, "weighted avg", &self.weighted)
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
