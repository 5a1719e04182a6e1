//! Confusion matrices and accuracy reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{ClassRegistry, ExerciseLabel, PoseSequence};
use crate::model::{forward, Mode, ModelConfig, ModelParams};

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: ClassRegistry,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: ClassRegistry) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_pairs(
        classes: ClassRegistry,
        pairs: impl IntoIterator<Item = (ExerciseLabel, ExerciseLabel)>,
    ) -> Result<Self> {
        let mut m = Self::new(classes);
        for (truth, pred) in pairs {
            m.record(truth, pred)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: ExerciseLabel, predicted: ExerciseLabel) -> Result<()> {
        let k = self.classes.len();
        if truth.index() >= k || predicted.index() >= k {
            return Err(Error::Contract(format!(
                "label pair ({}, {}) outside {k} classes",
                truth.index(),
                predicted.index()
            )));
        }
        self.counts[truth.index()][predicted.index()] += 1;
        Ok(())
    }

    pub fn get(&self, truth: ExerciseLabel, predicted: ExerciseLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_name: String,
    pub confusion: ConfusionMatrix,
    /// `None` for classes with no examples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub overall_accuracy: f64,
    pub support: Vec<u64>,
}

impl EvalReport {
    pub fn from_confusion(
        split_name: impl Into<String>,
        confusion: ConfusionMatrix,
    ) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::MalformedInput(
                "cannot report on zero sequences".into(),
            ));
        }
        let support = confusion.support();
        let per_class_accuracy = support
            .iter()
            .enumerate()
            .map(|(i, &n)| (n > 0).then(|| confusion.counts[i][i] as f64 / n as f64))
            .collect();
        Ok(Self {
            split_name: split_name.into(),
            overall_accuracy: confusion.trace() as f64 / total as f64,
            per_class_accuracy,
            support,
            confusion,
        })
    }
}

/// Classifies every sequence (argmax of inference-mode output, ties to the
/// lowest index) and tallies the results.
pub fn predict_labels(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    sequences: &[PoseSequence],
) -> Result<Vec<ExerciseLabel>> {
    sequences
        .par_iter()
        .map(|s| forward(s, params, config, Mode::Infer).map(|(p, _)| p.label))
        .collect()
}

pub fn evaluate(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    registry: &ClassRegistry,
    sequences: &[PoseSequence],
    split_name: &str,
) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::MalformedInput("evaluation set is empty".into()));
    }
    let truths: Vec<ExerciseLabel> = sequences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label
                .ok_or_else(|| Error::MalformedInput(format!("sequence {i} has no label")))
        })
        .collect::<Result<_>>()?;
    let preds = predict_labels(params, config, sequences)?;
    let m = ConfusionMatrix::from_pairs(registry.clone(), truths.into_iter().zip(preds))?;
    EvalReport::from_confusion(split_name, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}", 100.0 * a))
}

/// Renders a report as an accuracy table plus confusion grid, or as JSON.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serializes") + "\n"
        }
        ReportFormat::Table => render_table(report),
    }
}

fn render_table(report: &EvalReport) -> String {
    let names = report.confusion.classes.names();
    let row_label = format!("{} Accuracy [%]", capitalize(&report.split_name));
    let first = names
        .iter()
        .map(String::len)
        .chain([row_label.len(), "true \\ predicted".len(), "Support".len()])
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = names.iter().map(|n| n.len().max(8)).collect();

    let mut out = String::new();
    let _ = write!(out, "{:<first$}", "");
    for (n, w) in names.iter().zip(&widths) {
        let _ = write!(out, "  {n:>w$}");
    }
    out.push('\n');
    let _ = write!(out, "{row_label:<first$}");
    for (a, w) in report.per_class_accuracy.iter().zip(&widths) {
        let _ = write!(out, "  {:>w$}", pct(*a));
    }
    out.push('\n');
    let _ = write!(out, "{:<first$}", "Support");
    for (s, w) in report.support.iter().zip(&widths) {
        let _ = write!(out, "  {s:>w$}");
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "Overall accuracy: {}% ({}/{})\n",
        pct(Some(report.overall_accuracy)),
        report.confusion.trace(),
        report.confusion.total()
    );
    let _ = write!(out, "{:<first$}", "true \\ predicted");
    for (n, w) in names.iter().zip(&widths) {
        let _ = write!(out, "  {n:>w$}");
    }
    out.push('\n');
    for (name, row) in names.iter().zip(&report.confusion.counts) {
        let _ = write!(out, "{name:<first$}");
        for (c, w) in row.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
