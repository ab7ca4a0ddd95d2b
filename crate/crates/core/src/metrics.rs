//! Token- and entity-level precision, recall and F1.
//!
//! Zero denominators yield 0. `O` is never a class: token-level rows are the
//! eight `B-`/`I-` tags, entity-level rows are the four entity types. Macro
//! averages run over labels with non-zero gold support; weighted averages
//! weight by gold support.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::iob::{decode, IobTag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("gold has {gold} sequences but predictions have {pred}")]
    SequenceCount { gold: usize, pred: usize },
    #[error("sequence {index}: gold length {gold} != predicted length {pred}")]
    Length {
        index: usize,
        gold: usize,
        pred: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Token,
    Entity,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Raw match counts for one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl Counts {
    pub fn scores(&self) -> LabelScores {
        let precision = ratio(self.true_positives, self.predicted);
        let recall = ratio(self.true_positives, self.gold);
        LabelScores {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: self.gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub granularity: Granularity,
    pub per_label: BTreeMap<String, LabelScores>,
    pub micro: LabelScores,
    #[serde(rename = "macro")]
    pub macro_avg: LabelScores,
    pub weighted: LabelScores,
    /// Token level only; `O` tokens included.
    pub accuracy: Option<f64>,
}

impl EvalReport {
    /// Aggregate from per-label counts. Labels with neither gold nor
    /// predicted items are omitted from the rows.
    pub fn from_counts(granularity: Granularity, counts: &BTreeMap<String, Counts>) -> Self {
        let per_label: BTreeMap<String, LabelScores> = counts
            .iter()
            .filter(|(_, c)| c.gold > 0 || c.predicted > 0)
            .map(|(k, c)| (k.clone(), c.scores()))
            .collect();
        let total = counts.values().fold(Counts::default(), |acc, c| Counts {
            true_positives: acc.true_positives + c.true_positives,
            predicted: acc.predicted + c.predicted,
            gold: acc.gold + c.gold,
        });
        let micro = total.scores();

        let supported: Vec<&LabelScores> = per_label.values().filter(|s| s.support > 0).collect();
        let mean = |f: fn(&LabelScores) -> f64| {
            if supported.is_empty() {
                0.0
            } else {
                supported.iter().map(|s| f(s)).sum::<f64>() / supported.len() as f64
            }
        };
        let macro_avg = LabelScores {
            precision: mean(|s| s.precision),
            recall: mean(|s| s.recall),
            f1: mean(|s| s.f1),
            support: total.gold,
        };
        let weighted_mean = |f: fn(&LabelScores) -> f64| {
            if total.gold == 0 {
                0.0
            } else {
                per_label
                    .values()
                    .map(|s| s.support as f64 * f(s))
                    .sum::<f64>()
                    / total.gold as f64
            }
        };
        let weighted = LabelScores {
            precision: weighted_mean(|s| s.precision),
            recall: weighted_mean(|s| s.recall),
            f1: weighted_mean(|s| s.f1),
            support: total.gold,
        };
        EvalReport {
            granularity,
            per_label,
            micro,
            macro_avg,
            weighted,
            accuracy: None,
        }
    }

    /// Named metric for threshold checks, e.g. `micro_f1`, `macro_recall`,
    /// `weighted_precision`, `accuracy`, or `<LABEL>_f1`.
    pub fn metric(&self, name: &str) -> Option<f64> {
        if name == "accuracy" {
            return self.accuracy;
        }
        let (scope, field) = name.rsplit_once('_')?;
        let scores = match scope {
            "micro" => &self.micro,
            "macro" => &self.macro_avg,
            "weighted" => &self.weighted,
            label => self.per_label.get(label)?,
        };
        match field {
            "precision" => Some(scores.precision),
            "recall" => Some(scores.recall),
            "f1" => Some(scores.f1),
            "support" => Some(scores.support as f64),
            _ => None,
        }
    }
}

fn check_shapes(gold: &[Vec<IobTag>], pred: &[Vec<IobTag>]) -> Result<(), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::SequenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(MetricsError::Length {
                index,
                gold: g.len(),
                pred: p.len(),
            });
        }
    }
    Ok(())
}

/// Exact tag matches, one class per non-`O` tag.
pub fn token_level(gold: &[Vec<IobTag>], pred: &[Vec<IobTag>]) -> Result<EvalReport, MetricsError> {
    check_shapes(gold, pred)?;
    let mut counts: BTreeMap<String, Counts> = IobTag::ALL[1..]
        .iter()
        .map(|t| (t.to_string(), Counts::default()))
        .collect();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        for (&gt, &pt) in g.iter().zip(p) {
            total += 1;
            if gt == pt {
                correct += 1;
            }
            if gt != IobTag::O {
                let c = counts.get_mut(&gt.to_string()).expect("closed tag set");
                c.gold += 1;
                if gt == pt {
                    c.true_positives += 1;
                }
            }
            if pt != IobTag::O {
                counts.get_mut(&pt.to_string()).expect("closed tag set").predicted += 1;
            }
        }
    }
    let mut report = EvalReport::from_counts(Granularity::Token, &counts);
    report.accuracy = Some(ratio(correct, total));
    Ok(report)
}

/// Spans decoded from both sides; a prediction is correct iff type, start and
/// end all match.
pub fn entity_level(gold: &[Vec<IobTag>], pred: &[Vec<IobTag>]) -> Result<EvalReport, MetricsError> {
    check_shapes(gold, pred)?;
    let mut counts: BTreeMap<String, Counts> = crate::brat::EntityType::ALL
        .iter()
        .map(|t| (t.to_string(), Counts::default()))
        .collect();
    for (g, p) in gold.iter().zip(pred) {
        let gold_spans = decode(g);
        let pred_spans: HashSet<_> = decode(p).into_iter().collect();
        for s in &gold_spans {
            let c = counts.get_mut(s.entity_type.as_str()).expect("closed type set");
            c.gold += 1;
            if pred_spans.contains(s) {
                c.true_positives += 1;
            }
        }
        for s in &pred_spans {
            counts.get_mut(s.entity_type.as_str()).expect("closed type set").predicted += 1;
        }
    }
    Ok(EvalReport::from_counts(Granularity::Entity, &counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Tsv,
    JsonLines,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "tsv" => Ok(ReportFormat::Tsv),
            "json-lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub const MICRO_ROW: &str = "micro-avg";
pub const MACRO_ROW: &str = "macro-avg";
pub const WEIGHTED_ROW: &str = "macro-weighted";

fn rows(report: &EvalReport) -> Vec<(&str, &LabelScores)> {
    let mut out: Vec<(&str, &LabelScores)> = report
        .per_label
        .iter()
        .map(|(k, v)| (k.as_str(), v))
        .collect();
    out.push((MICRO_ROW, &report.micro));
    out.push((MACRO_ROW, &report.macro_avg));
    out.push((WEIGHTED_ROW, &report.weighted));
    out
}

/// Labels in alphabetical order, then micro, macro and weighted rows; all
/// scores with four decimals.
pub fn render(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Table => {
            let width = rows(report).iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
            writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
                "label", "precision", "recall", "f1-score", "support"
            )
            .unwrap();
            for (label, s) in rows(report) {
                writeln!(
                    out,
                    "{label:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                    s.precision, s.recall, s.f1, s.support
                )
                .unwrap();
            }
            if let Some(acc) = report.accuracy {
                writeln!(out, "\naccuracy  {acc:.4}").unwrap();
            }
        }
        ReportFormat::Tsv => {
            out.push_str("label\tprecision\trecall\tf1\tsupport\n");
            for (label, s) in rows(report) {
                writeln!(
                    out,
                    "{label}\t{:.4}\t{:.4}\t{:.4}\t{}",
                    s.precision, s.recall, s.f1, s.support
                )
                .unwrap();
            }
        }
        ReportFormat::JsonLines => {
            let level = match report.granularity {
                Granularity::Token => "token",
                Granularity::Entity => "entity",
            };
            for (label, s) in rows(report) {
                writeln!(
                    out,
                    "{{\"level\":\"{level}\",\"label\":{},\"precision\":{:.4},\"recall\":{:.4},\"f1\":{:.4},\"support\":{}}}",
                    serde_json::to_string(label).expect("string"),
                    s.precision,
                    s.recall,
                    s.f1,
                    s.support
                )
                .unwrap();
            }
        }
    }
    out
}

/// Read back a TSV rendering.
pub fn parse_tsv(text: &str) -> Result<Vec<(String, LabelScores)>, MetricsError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let err = |message: &str| MetricsError::Parse {
            line: idx + 1,
            message: message.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err("expected 5 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
        out.push((
            f[0].to_string(),
            LabelScores {
                precision: num(f[1])?,
                recall: num(f[2])?,
                f1: num(f[3])?,
                support: f[4].parse().map_err(|_| err("bad support"))?,
            },
        ));
    }
    Ok(out)
}
