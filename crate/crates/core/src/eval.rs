//! Fidelity, efficacy and efficiency metrics plus report files and tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::NetworkModel;
use crate::{Error, Result};

/// Predicted and true labels gathered over one or more datasets.
#[derive(Debug, Clone, Default)]
pub struct Predictions {
    pub predicted: Vec<usize>,
    pub actual: Vec<usize>,
    pub classes: usize,
}

impl Predictions {
    pub fn collect(model: &NetworkModel, sets: &[&Dataset]) -> Result<Self> {
        let mut out = Predictions {
            classes: model.architecture().classes(),
            ..Default::default()
        };
        for ds in sets {
            let (x, y) = ds.all();
            out.predicted.extend(model.predict(&x)?);
            out.actual.extend(y);
        }
        if out.actual.is_empty() {
            return Err(Error::EmptyDataset("nothing to evaluate".into()));
        }
        Ok(out)
    }

    fn correct(&self) -> usize {
        self.predicted
            .iter()
            .zip(&self.actual)
            .filter(|(p, a)| p == a)
            .count()
    }

    /// Percentage of correct predictions.
    pub fn accuracy(&self) -> f64 {
        100.0 * self.correct() as f64 / self.actual.len() as f64
    }

    /// Percentage of wrong predictions, counted independently of `accuracy`.
    pub fn error(&self) -> f64 {
        let wrong = self.actual.len() - self.correct();
        100.0 * wrong as f64 / self.actual.len() as f64
    }

    /// Positive-class F1 for binary tasks, macro F1 otherwise (percent).
    pub fn f1(&self) -> f64 {
        f1_score(&self.predicted, &self.actual, self.classes)
    }
}

pub fn accuracy(model: &NetworkModel, ds: &Dataset) -> Result<f64> {
    Ok(Predictions::collect(model, &[ds])?.accuracy())
}

pub fn f1(model: &NetworkModel, ds: &Dataset) -> Result<f64> {
    Ok(Predictions::collect(model, &[ds])?.f1())
}

fn class_f1(predicted: &[usize], actual: &[usize], c: usize) -> f64 {
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p == c, a == c) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    if tp + fp + fne == 0 {
        // class neither predicted nor present
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fne) as f64
}

pub fn f1_score(predicted: &[usize], actual: &[usize], classes: usize) -> f64 {
    if classes <= 2 {
        return 100.0 * class_f1(predicted, actual, 1);
    }
    let sum: f64 = (0..classes).map(|c| class_f1(predicted, actual, c)).sum();
    100.0 * sum / classes as f64
}

/// Signed forgotten-set error difference to the retrained model, one decimal.
pub fn efficacy_gap(error_f_method: f64, error_f_retrain: f64) -> f64 {
    round_to(error_f_method - error_f_retrain, 1)
}

pub fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    let r = (x * s).round() / s;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub error_t: f64,
    pub error_r: f64,
    pub error_f: f64,
    /// `None` until a retrain reference is known.
    pub efficacy_gap: Option<f64>,
    pub runtime_seconds: f64,
    pub config_digest: String,
}

impl MetricsReport {
    /// Evaluates a model on the test set, the retained data and the
    /// forgotten data.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        method: &str,
        model: &NetworkModel,
        test: &Dataset,
        retained: &[&Dataset],
        forgotten: &Dataset,
        runtime_seconds: f64,
        seed: u64,
        config_digest: &str,
    ) -> Result<Self> {
        let t = Predictions::collect(model, &[test])?;
        let r = Predictions::collect(model, retained)?;
        let f = Predictions::collect(model, &[forgotten])?;
        Ok(Self {
            method: method.to_string(),
            seed,
            accuracy: t.accuracy(),
            f1: t.f1(),
            error_t: t.error(),
            error_r: r.error(),
            error_f: f.error(),
            efficacy_gap: None,
            runtime_seconds: round_to(runtime_seconds, 3),
            config_digest: config_digest.to_string(),
        })
    }

    pub fn with_reference(mut self, retrain_error_f: f64) -> Self {
        self.efficacy_gap = Some(efficacy_gap(self.error_f, retrain_error_f));
        self
    }

    /// Equality ignoring the runtime field.
    pub fn same_metrics(&self, other: &MetricsReport) -> bool {
        let mut a = self.clone();
        a.runtime_seconds = other.runtime_seconds;
        &a == other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub reports: Vec<MetricsReport>,
}

pub fn write_reports(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Report("no reports to write".into()));
    }
    let doc = ReportFile {
        reports: reports.to_vec(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Report(e.to_string()))?;
    std::fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let doc: ReportFile = serde_json::from_str(&text)
        .map_err(|e| Error::Report(format!("{}: {e}", path.as_ref().display())))?;
    Ok(doc.reports)
}

/// Writes the report file and returns the console table.
pub fn emit_report(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<String> {
    write_reports(reports, path)?;
    Ok(render_table(reports))
}

/// Fills efficacy gaps from the `retrain` row, when there is one.
pub fn attach_reference(reports: &mut [MetricsReport]) {
    let Some(reference) = reports.iter().find(|r| r.method == "retrain").map(|r| r.error_f) else {
        return;
    };
    for r in reports.iter_mut() {
        r.efficacy_gap = Some(efficacy_gap(r.error_f, reference));
    }
}

/// `runtime(retrain) / runtime(method)`, one decimal.
pub fn speedup(retrain_seconds: f64, method_seconds: f64) -> Option<f64> {
    (method_seconds > 0.0).then(|| round_to(retrain_seconds / method_seconds, 1))
}

/// Fixed-width comparison table, rows sorted by accuracy (descending).
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut rows: Vec<&MetricsReport> = reports.iter().collect();
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then_with(|| a.method.cmp(&b.method)));
    let retrain = reports.iter().find(|r| r.method == "retrain").map(|r| r.runtime_seconds);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20}| {:^35} | {:^17} | {:^21}",
        "", "Fidelity", "Efficacy", "Efficiency"
    );
    let _ = writeln!(
        s,
        "{:<20}| {:>8} {:>8} {:>8} {:>8} | {:>8} {:>8} | {:>11} {:>9}",
        "Method", "Accuracy", "F1", "Error^t", "Error^r", "Error^f", "(gap)", "Runtime(s)", "Speedup"
    );
    let _ = writeln!(s, "{}", "-".repeat(102));
    for r in rows {
        let gap = r
            .efficacy_gap
            .map_or_else(|| "-".to_string(), |g| format!("({g:+.1})"));
        let speed = retrain
            .and_then(|t| speedup(t, r.runtime_seconds))
            .map_or_else(|| "-".to_string(), |x| format!("{x:.1}x"));
        let _ = writeln!(
            s,
            "{:<20}| {:>8.2} {:>8.2} {:>8.2} {:>8.2} | {:>8.2} {:>8} | {:>11.3} {:>9}",
            r.method, r.accuracy, r.f1, r.error_t, r.error_r, r.error_f, gap, r.runtime_seconds, speed
        );
    }
    s
}
