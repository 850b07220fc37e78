//! F1-based evaluation: two-class macro F1 for binary tasks,
//! support-weighted F1 for multi-label type classification.
//!
//! Any F1 whose denominator `2tp + fp + fn` is zero is reported as 0.

use std::fmt::{self, Write as _};

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{Task, MAMI_B_LABELS};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl LabelCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// F1 of the positive class.
    pub fn f1(&self) -> f64 {
        f1_score(self.tp, self.fp, self.fn_)
    }

    /// Counts with the roles of the two classes swapped.
    pub fn inverted(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    /// Unweighted mean of positive-class and negative-class F1.
    pub fn macro_f1(&self) -> f64 {
        0.5 * (self.f1() + self.inverted().f1())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub samples: u64,
    pub labels: Vec<LabelCounts>,
}

fn check_binary<'a, I: IntoIterator<Item = &'a u8>>(values: I) -> Result<()> {
    if values.into_iter().any(|&v| v > 1) {
        return Err(Error::Argument("label values must be 0 or 1".into()));
    }
    Ok(())
}

/// Per-label confusion counts of `rows x labels` 0/1 matrices.
pub fn confusion(y_true: ArrayView2<u8>, y_pred: ArrayView2<u8>) -> Result<ConfusionCounts> {
    if y_true.dim() != y_pred.dim() {
        return Err(Error::Shape(format!(
            "y_true {:?} vs y_pred {:?}",
            y_true.dim(),
            y_pred.dim()
        )));
    }
    check_binary(y_true.iter())?;
    check_binary(y_pred.iter())?;
    let labels = y_true
        .columns()
        .into_iter()
        .zip(y_pred.columns())
        .map(|(t, p)| column_counts(t, p))
        .collect();
    Ok(ConfusionCounts {
        samples: y_true.nrows() as u64,
        labels,
    })
}

fn column_counts(t: ArrayView1<u8>, p: ArrayView1<u8>) -> LabelCounts {
    let mut c = LabelCounts::default();
    for (&t, &p) in t.iter().zip(p.iter()) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    c
}

/// Two-class macro F1 for a single binary label.
pub fn macro_f1(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Argument("macro F1 of an empty sample".into()));
    }
    check_binary(y_true)?;
    check_binary(y_pred)?;
    let c = column_counts(ArrayView1::from(y_true), ArrayView1::from(y_pred));
    Ok(c.macro_f1())
}

/// Per-label F1 weighted by true-label support.
pub fn weighted_f1(y_true: ArrayView2<u8>, y_pred: ArrayView2<u8>) -> Result<f64> {
    weighted_from_counts(&confusion(y_true, y_pred)?.labels)
}

fn weighted_from_counts(counts: &[LabelCounts]) -> Result<f64> {
    let total: u64 = counts.iter().map(LabelCounts::support).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "weighted F1 needs at least one label with positive support".into(),
        ));
    }
    let weighted: f64 = counts.iter().map(|c| c.f1() * c.support() as f64).sum();
    Ok(weighted / total as f64)
}

/// Mean over labels of each label's two-class macro F1. Equals
/// [`macro_f1`] for a single label.
pub fn mean_label_macro_f1(y_true: ArrayView2<u8>, y_pred: ArrayView2<u8>) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Argument("macro F1 of an empty sample".into()));
    }
    let c = confusion(y_true, y_pred)?;
    Ok(c.labels.iter().map(LabelCounts::macro_f1).sum::<f64>() / c.labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PrototypeBased,
    ExampleBased,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::PrototypeBased => "prototype_based",
            Method::ExampleBased => "example_based",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub model_tag: String,
    pub method: Method,
    pub source: String,
    pub samples: u64,
    pub per_label: Vec<LabelScore>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// Labels entering `weighted_f1`.
    pub weighted_labels: Vec<String>,
}

impl EvalReport {
    /// Headline score for the task: weighted F1 for misogyny types,
    /// macro F1 otherwise.
    pub fn primary(&self) -> f64 {
        match self.task {
            Task::MamiB => self.weighted_f1,
            _ => self.macro_f1,
        }
    }
}

/// Labels averaged by the weighted F1 of `task`. For misogyny types the
/// default is the four type labels; `include_misogynous` adds the fifth.
pub fn weighted_label_set(task: Task, include_misogynous: bool) -> Vec<String> {
    match task {
        Task::MamiB if !include_misogynous => {
            MAMI_B_LABELS[1..].iter().map(|s| s.to_string()).collect()
        }
        _ => task.labels(),
    }
}

pub struct EvalInput<'a> {
    pub task: Task,
    pub model_tag: &'a str,
    pub method: Method,
    pub source: &'a str,
    pub include_misogynous: bool,
}

pub fn evaluate(
    input: &EvalInput<'_>,
    y_true: ArrayView2<u8>,
    y_pred: ArrayView2<u8>,
) -> Result<EvalReport> {
    let labels = input.task.labels();
    if y_true.ncols() != labels.len() {
        return Err(Error::Shape(format!(
            "{} label columns for a {}-label task",
            y_true.ncols(),
            labels.len()
        )));
    }
    if y_true.nrows() == 0 {
        return Err(Error::Argument("cannot evaluate an empty sample".into()));
    }
    let c = confusion(y_true, y_pred)?;
    let weighted_labels = weighted_label_set(input.task, input.include_misogynous);
    let selected: Vec<LabelCounts> = labels
        .iter()
        .zip(&c.labels)
        .filter(|(l, _)| weighted_labels.contains(l))
        .map(|(_, c)| *c)
        .collect();
    let weighted_f1 = match weighted_from_counts(&selected) {
        Ok(v) => v,
        Err(Error::UndefinedMetric(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        task: input.task,
        model_tag: input.model_tag.to_owned(),
        method: input.method,
        source: input.source.to_owned(),
        samples: c.samples,
        per_label: labels
            .iter()
            .zip(&c.labels)
            .map(|(l, c)| LabelScore {
                label: l.clone(),
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                support: c.support(),
            })
            .collect(),
        macro_f1: c.labels.iter().map(LabelCounts::macro_f1).sum::<f64>() / c.labels.len() as f64,
        weighted_f1,
        weighted_labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub source: String,
    pub model_tag: String,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub best_macro: bool,
    pub best_weighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub task: Task,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side table of reports for one task, best score per column flagged.
pub fn compare_report(reports: &[EvalReport]) -> Result<ComparisonTable> {
    let task = reports
        .first()
        .ok_or_else(|| Error::Argument("no reports to compare".into()))?
        .task;
    if let Some(r) = reports.iter().find(|r| r.task != task) {
        return Err(Error::Argument(format!(
            "cannot compare {} with {} reports",
            task, r.task
        )));
    }
    let best = |f: fn(&EvalReport) -> f64| reports.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let best_macro = best(|r| r.macro_f1);
    let best_weighted = best(|r| r.weighted_f1);
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            method: r.method,
            source: r.source.clone(),
            model_tag: r.model_tag.clone(),
            macro_f1: r.macro_f1,
            weighted_f1: r.weighted_f1,
            best_macro: r.macro_f1 == best_macro,
            best_weighted: r.weighted_f1 == best_weighted,
        })
        .collect();
    rows.sort_by(|a, b| (a.method, &a.source).cmp(&(b.method, &b.source)));
    Ok(ComparisonTable { task, rows })
}

impl ComparisonTable {
    /// Model tags of one method ordered by the task's headline score.
    pub fn ranking(&self, method: Method) -> Vec<&str> {
        let mut rows: Vec<&ComparisonRow> = self.rows.iter().filter(|r| r.method == method).collect();
        let key = |r: &ComparisonRow| match self.task {
            Task::MamiB => r.weighted_f1,
            _ => r.macro_f1,
        };
        rows.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.source.cmp(&b.source)));
        rows.into_iter().map(|r| r.source.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let header = ["method", "source", "macro_f1", "weighted_f1"];
        let cells: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                let mark = |v: f64, best: bool| format!("{v:.3}{}", if best { " *" } else { "" });
                [
                    r.method.to_string(),
                    r.source.clone(),
                    mark(r.macro_f1, r.best_macro),
                    mark(r.weighted_f1, r.best_weighted),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = format!("task: {}\n", self.task);
        let line = |out: &mut String, row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        for row in &cells {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

/// Distribution of shared-task participant scores, for context rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompetitionStats {
    pub min: f64,
    pub q1: f64,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub q3: f64,
    pub max: f64,
}

/// MAMI sub-task A participants, macro F1.
pub const MAMI_A_COMPETITION: CompetitionStats = CompetitionStats {
    min: 0.481,
    q1: 0.649,
    mean: 0.680,
    median: 0.679,
    std_dev: 0.064,
    q3: 0.722,
    max: 0.834,
};

/// MAMI sub-task B participants, weighted F1.
pub const MAMI_B_COMPETITION: CompetitionStats = CompetitionStats {
    min: 0.467,
    q1: 0.634,
    mean: 0.663,
    median: 0.680,
    std_dev: 0.059,
    q3: 0.706,
    max: 0.731,
};

/// Published scores as (method, source, mami_a, mami_b, hateful).
pub const REPORTED_RESULTS: [(Method, &str, f64, f64, f64); 8] = [
    (Method::PrototypeBased, "bert_base", 0.537, 0.524, 0.485),
    (Method::PrototypeBased, "bertweet", 0.543, 0.534, 0.445),
    (Method::PrototypeBased, "clip", 0.642, 0.629, 0.540),
    (Method::PrototypeBased, "clip_bertweet", 0.648, 0.626, 0.541),
    (Method::ExampleBased, "bert_base", 0.602, 0.589, 0.521),
    (Method::ExampleBased, "bertweet", 0.600, 0.594, 0.503),
    (Method::ExampleBased, "clip", 0.685, 0.686, 0.557),
    (Method::ExampleBased, "clip_bertweet", 0.701, 0.688, 0.583),
];
