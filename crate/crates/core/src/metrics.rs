//! Correction metrics: token-level precision/recall, F-beta, exact match,
//! modified accuracy, and per-error-type reporting.

use std::collections::HashMap;

use crate::charlex::Lexicon;
use crate::error::{Error, Result};
use crate::errorgen::ErrorType;

/// One evaluated item: the gold target and the ranked candidate corrections.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub gold: String,
    pub top_k: Vec<String>,
    pub error_type: ErrorType,
}

impl Prediction {
    pub fn top1(&self) -> &str {
        self.top_k.first().map(String::as_str).unwrap_or("")
    }
}

/// Collapse whitespace runs to single spaces and trim the ends.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Token-multiset sizes for one item: (|gold|, |predicted|, |matched|),
/// where matched is a greedy one-to-one exact matching between the
/// whitespace-delimited tokens of both sides.
pub fn match_sets(gold: &str, predicted: &str) -> (usize, usize, usize) {
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    let mut n_gold = 0usize;
    for tok in gold.split_whitespace() {
        *gold_counts.entry(tok).or_insert(0) += 1;
        n_gold += 1;
    }
    let mut n_pred = 0usize;
    let mut matched = 0usize;
    for tok in predicted.split_whitespace() {
        n_pred += 1;
        if let Some(c) = gold_counts.get_mut(tok) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    (n_gold, n_pred, matched)
}

fn pooled_counts(preds: &[Prediction]) -> (usize, usize, usize) {
    let mut totals = (0, 0, 0);
    for p in preds {
        let (g, e, m) = match_sets(&p.gold, p.top1());
        totals.0 += g;
        totals.1 += e;
        totals.2 += m;
    }
    totals
}

/// Pooled precision and recall over the top-1 candidates.
pub fn precision_recall(preds: &[Prediction]) -> Result<(f64, f64)> {
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("no predictions".into()));
    }
    let (g, e, m) = pooled_counts(preds);
    if e == 0 {
        return Err(Error::UndefinedMetric(
            "every prediction is empty (|e| = 0)".into(),
        ));
    }
    if g == 0 {
        return Err(Error::UndefinedMetric("every gold is empty (|g| = 0)".into()));
    }
    Ok((m as f64 / e as f64, m as f64 / g as f64))
}

/// F-beta of a precision/recall pair; 0 (with a warning) when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        log::warn!("f_beta undefined at P = R = 0; reporting 0");
        return 0.0;
    }
    (1.0 + b2) * precision * recall / denom
}

/// Fraction of items whose top-1 equals the gold verbatim after whitespace
/// normalization.
pub fn exact_match(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds
        .iter()
        .filter(|p| normalize(p.top1()) == normalize(&p.gold))
        .count();
    hits as f64 / preds.len() as f64
}

/// What "found in the desired corpus" means for modified accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaMode {
    /// Any of the first K candidates is a lexicon word.
    #[default]
    Lexicon,
    /// Any of the first K candidates equals the gold.
    Gold,
}

/// Fraction of items with a positive top-K outcome under `mode`.
pub fn modified_accuracy(preds: &[Prediction], lexicon: &Lexicon, k: usize, mode: MaMode) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds
        .iter()
        .filter(|p| {
            p.top_k.iter().take(k.max(1)).any(|cand| match mode {
                MaMode::Lexicon => lexicon.contains(normalize(cand).as_str()),
                MaMode::Gold => normalize(cand) == normalize(&p.gold),
            })
        })
        .count();
    hits as f64 / preds.len() as f64
}

/// Metrics of one error type (or of the weighted-average row).
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub label: String,
    pub count: usize,
    pub em: f64,
    pub ma: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f05: f64,
}

/// Per-error-type and weighted-average evaluation table.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub weighted: ReportRow,
}

fn row_metrics(label: String, preds: &[Prediction], lexicon: &Lexicon, k: usize, mode: MaMode) -> ReportRow {
    let (g, e, m) = pooled_counts(preds);
    let precision = if e == 0 {
        log::warn!("{label}: |e| = 0, reporting precision 0");
        0.0
    } else {
        m as f64 / e as f64
    };
    let recall = if g == 0 {
        log::warn!("{label}: |g| = 0, reporting recall 0");
        0.0
    } else {
        m as f64 / g as f64
    };
    ReportRow {
        label,
        count: preds.len(),
        em: exact_match(preds),
        ma: modified_accuracy(preds, lexicon, k, mode),
        precision,
        recall,
        f1: f_beta(precision, recall, 1.0),
        f05: f_beta(precision, recall, 0.5),
    }
}

/// Build the per-type table plus the count-weighted average row.
pub fn build_report(
    preds: &[Prediction],
    lexicon: &Lexicon,
    k: usize,
    mode: MaMode,
) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("no predictions to report".into()));
    }
    let mut rows = Vec::new();
    for ty in ErrorType::ALL {
        let of_type: Vec<Prediction> = preds
            .iter()
            .filter(|p| p.error_type == ty)
            .cloned()
            .collect();
        if of_type.is_empty() {
            continue;
        }
        rows.push(row_metrics(ty.label().to_string(), &of_type, lexicon, k, mode));
    }
    let total: usize = rows.iter().map(|r| r.count).sum();
    let wavg = |f: fn(&ReportRow) -> f64| {
        rows.iter().map(|r| f(r) * r.count as f64).sum::<f64>() / total as f64
    };
    let weighted = ReportRow {
        label: "weighted_average".to_string(),
        count: total,
        em: wavg(|r| r.em),
        ma: wavg(|r| r.ma),
        precision: wavg(|r| r.precision),
        recall: wavg(|r| r.recall),
        f1: wavg(|r| r.f1),
        f05: wavg(|r| r.f05),
    };
    Ok(EvalReport { rows, weighted })
}

impl EvalReport {
    /// Aligned plain-text table; columns fixed as
    /// count, EM, MA, P, R, F1, F0.5.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "error type", "count", "EM", "MA", "P", "R", "F1", "F0.5"
        ));
        for row in self.rows.iter().chain(std::iter::once(&self.weighted)) {
            out.push_str(&format!(
                "{:<22} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                row.label, row.count, row.em, row.ma, row.precision, row.recall, row.f1, row.f05
            ));
        }
        out
    }

    /// Machine-readable CSV mirroring the text table.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("error_type,count,em,ma,precision,recall,f1,f0_5\n");
        for row in self.rows.iter().chain(std::iter::once(&self.weighted)) {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                row.label, row.count, row.em, row.ma, row.precision, row.recall, row.f1, row.f05
            ));
        }
        out
    }
}
