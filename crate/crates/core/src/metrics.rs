//! Edit-distance metrics, string accuracy and F1 over year classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::YearLabel;
use crate::models::{ArchId, StringPrediction};

/// Minimum number of single-character insertions, deletions and
/// substitutions turning `a` into `b`.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the ground-truth length.
pub fn nld(ground_truth: &str, prediction: &str) -> Result<f64> {
    let n = ground_truth.chars().count();
    if n == 0 {
        return Err(Error::Metric("ground truth is empty".into()));
    }
    Ok(levenshtein(ground_truth, prediction) as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NldRecord {
    pub ground_truth: String,
    pub prediction: String,
    pub ld: usize,
    pub nld: f64,
}

impl NldRecord {
    pub fn new(ground_truth: &str, prediction: &str) -> Result<Self> {
        Ok(Self {
            ground_truth: ground_truth.to_string(),
            prediction: prediction.to_string(),
            ld: levenshtein(ground_truth, prediction),
            nld: nld(ground_truth, prediction)?,
        })
    }
}

/// Mean NLD over the records.
pub fn anld(records: &[NldRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Metric("no records to average".into()));
    }
    Ok(records.iter().map(|r| r.nld).sum::<f64>() / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTally {
    pub label: YearLabel,
    /// Ground-truth samples of this class.
    pub support: usize,
    /// Of those, predicted exactly.
    pub correct: usize,
    /// Samples predicted as this class.
    pub predicted: usize,
    /// `None` when the class is neither present nor predicted.
    pub f1: Option<f64>,
}

/// Most frequent digit substitutions at a fixed position, over predictions
/// of the right length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub position: usize,
    pub truth: char,
    pub predicted: char,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arch: Option<ArchId>,
    /// Content hash of the evaluated split, for comparing reports.
    pub test_hash: Option<String>,
    /// Number of evaluated strings.
    pub count: usize,
    pub accuracy: f64,
    /// Mean per-class F1 over classes that occur in the truth or the predictions.
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Per-class F1 weighted by support.
    pub weighted_f1: f64,
    pub anld: f64,
    /// Predictions that are not one of the year classes.
    pub out_of_set: usize,
    pub per_class: Vec<ClassTally>,
    pub records: Vec<NldRecord>,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

pub fn evaluate(predictions: &[StringPrediction], ground_truth: &[YearLabel]) -> Result<EvalReport> {
    evaluate_texts(predictions, ground_truth)
}

/// Scores decoded strings. A prediction that is not a year class counts as
/// a miss for its true class and is not a positive for any class.
pub fn evaluate_texts<S: AsRef<str>>(predictions: &[S], ground_truth: &[YearLabel]) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} ground-truth labels",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Metric("nothing to evaluate".into()));
    }
    let mut records = Vec::with_capacity(predictions.len());
    let mut tallies = BTreeMap::<YearLabel, (usize, usize, usize)>::new();
    let mut correct = 0;
    let mut out_of_set = 0;
    for (p, &truth) in predictions.iter().zip(ground_truth) {
        let text = p.as_ref();
        records.push(NldRecord::new(&truth.text(), text)?);
        tallies.entry(truth).or_default().0 += 1;
        match text.parse::<YearLabel>() {
            Ok(pred) if text.len() == 4 => {
                tallies.entry(pred).or_default().2 += 1;
                if pred == truth {
                    tallies.entry(truth).or_default().1 += 1;
                    correct += 1;
                }
            }
            _ => out_of_set += 1,
        }
    }
    let per_class: Vec<ClassTally> = tallies
        .into_iter()
        .map(|(label, (support, correct, predicted))| ClassTally {
            label,
            support,
            correct,
            predicted,
            f1: f1(correct, predicted - correct, support - correct),
        })
        .collect();
    let scored: Vec<f64> = per_class.iter().filter_map(|c| c.f1).collect();
    let macro_f1 = scored.iter().sum::<f64>() / scored.len() as f64;
    let (tp, fp, fn_) = per_class.iter().fold((0, 0, 0), |(tp, fp, fn_), c| {
        (tp + c.correct, fp + c.predicted - c.correct, fn_ + c.support - c.correct)
    });
    let micro_f1 = f1(tp, fp, fn_).unwrap_or(0.0);
    let n = ground_truth.len();
    let weighted_f1 = per_class.iter().map(|c| c.support as f64 * c.f1.unwrap_or(0.0)).sum::<f64>() / n as f64;
    Ok(EvalReport {
        arch: None,
        test_hash: None,
        count: n,
        accuracy: correct as f64 / n as f64,
        macro_f1,
        micro_f1,
        weighted_f1,
        anld: anld(&records)?,
        out_of_set,
        per_class,
        records,
    })
}

fn one_decimal(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

impl EvalReport {
    /// Accuracy, macro-F1 and ANLD as percentages with one decimal.
    pub fn percent_row(&self) -> (f64, f64, f64) {
        (one_decimal(self.accuracy), one_decimal(self.macro_f1), one_decimal(self.anld))
    }

    /// The `limit` most frequent position-wise digit confusions.
    pub fn confusion_pairs(&self, limit: usize) -> Vec<ConfusionPair> {
        let mut counts = BTreeMap::<(usize, char, char), usize>::new();
        for r in &self.records {
            if r.prediction.chars().count() != r.ground_truth.chars().count() {
                continue;
            }
            for (i, (t, p)) in r.ground_truth.chars().zip(r.prediction.chars()).enumerate() {
                if t != p {
                    *counts.entry((i, t, p)).or_default() += 1;
                }
            }
        }
        let mut pairs: Vec<ConfusionPair> = counts
            .into_iter()
            .map(|((position, truth, predicted), count)| ConfusionPair { position, truth, predicted, count })
            .collect();
        pairs.sort_by(|a, b| b.count.cmp(&a.count).then((a.position, a.truth, a.predicted).cmp(&(b.position, b.truth, b.predicted))));
        pairs.truncate(limit);
        pairs
    }

    /// Per-class listing of support, errors and F1.
    pub fn class_listing(&self) -> String {
        let mut s = String::from("class  support  correct  errors  accuracy  F1\n");
        for c in &self.per_class {
            let acc = if c.support > 0 { format!("{:7.1}", 100.0 * c.correct as f64 / c.support as f64) } else { "      -".into() };
            let f1 = c.f1.map_or("    -".to_string(), |f| format!("{:5.1}", 100.0 * f));
            let _ = writeln!(s, "{}  {:7}  {:7}  {:6}  {acc}  {f1}", c.label, c.support, c.correct, c.support - c.correct);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Comparison table with Accuracy / F1-score / ANLD columns in percent.
pub fn comparison_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(9);
    let mut s = format!("{:<width$}  {:>8}  {:>8}  {:>6}\n", "Framework", "Accuracy", "F1-score", "ANLD");
    for (name, r) in rows {
        let (a, f, d) = r.percent_row();
        let _ = writeln!(s, "{name:<width$}  {a:>8.1}  {f:>8.1}  {d:>6.1}");
    }
    s
}
