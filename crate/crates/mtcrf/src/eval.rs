//! Span-level evaluation, token-level metrics, coupling heatmap export, and
//! cross-variant comparison tables.
//!
//! Span F1 uses the exact-match criterion: a predicted span is a true
//! positive iff its type, start, and end all equal a gold span's. Counts are
//! micro-aggregated corpus-wide before the precision/recall formulas apply.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MultiTaskSentence, SplitSize};
use crate::factorial::FactorialModel;
use crate::tagset::{LabelId, MultiTaskSchema, Scheme, TaskSchema};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {pred}")]
    SentenceCountMismatch { gold: usize, pred: usize },
    #[error("sentence {sentence}: gold length {gold} but prediction length {pred}")]
    LengthMismatch {
        sentence: usize,
        gold: usize,
        pred: usize,
    },
    #[error("sentence {sentence}: expected {expected} tasks, found {found}")]
    TaskCountMismatch {
        sentence: usize,
        expected: usize,
        found: usize,
    },
    #[error("model stores no coupling for pair ({0}, {1})")]
    MissingCoupling(String, String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("no run summaries to tabulate")]
    NoRecords,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A labeled token range, start inclusive, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

/// Decodes BIO labels into maximal spans. An I-X with no live X span starts
/// a fresh span instead of failing; the second return counts those repairs
/// so reports can surface how often predictions were malformed.
pub fn extract_spans(schema: &TaskSchema, labels: &[LabelId]) -> (Vec<Span>, usize) {
    let mut spans = Vec::new();
    let mut repairs = 0usize;
    let mut open: Option<(String, usize)> = None;
    for (t, &id) in labels.iter().enumerate() {
        let surface = &schema.labels[id].surface;
        let part = TaskSchema::bio_parts(surface);
        match part {
            None => {
                if let Some((kind, start)) = open.take() {
                    spans.push(Span { kind, start, end: t });
                }
            }
            Some(('B', kind)) => {
                if let Some((k, start)) = open.take() {
                    spans.push(Span {
                        kind: k,
                        start,
                        end: t,
                    });
                }
                open = Some((kind.to_string(), t));
            }
            Some((_, kind)) => {
                let continues = matches!(&open, Some((k, _)) if k == kind);
                if !continues {
                    if let Some((k, start)) = open.take() {
                        spans.push(Span {
                            kind: k,
                            start,
                            end: t,
                        });
                    }
                    open = Some((kind.to_string(), t));
                    repairs += 1;
                }
            }
        }
    }
    if let Some((kind, start)) = open {
        spans.push(Span {
            kind,
            start,
            end: labels.len(),
        });
    }
    (spans, repairs)
}

/// Renders spans back into a BIO label sequence. Inverse of [`extract_spans`]
/// on scheme-valid input.
pub fn spans_to_bio(
    schema: &TaskSchema,
    t_len: usize,
    spans: &[Span],
) -> Result<Vec<LabelId>, crate::tagset::TagsetError> {
    let mut labels = vec![0usize; t_len];
    for span in spans {
        labels[span.start] = schema.encode(&format!("B-{}", span.kind))?;
        for slot in labels[span.start + 1..span.end].iter_mut() {
            *slot = schema.encode(&format!("I-{}", span.kind))?;
        }
    }
    Ok(labels)
}

fn prf(matched: usize, pred_total: usize, gold_total: usize) -> (f64, f64, f64) {
    let p = if pred_total == 0 {
        0.0
    } else {
        matched as f64 / pred_total as f64
    };
    let r = if gold_total == 0 {
        0.0
    } else {
        matched as f64 / gold_total as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Per-task metrics. BIO tasks score exact-match spans; FLAT tasks score
/// tokens, with precision/recall/F1 micro-averaged over non-"O" tokens.
/// Token accuracy is reported for every task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub scheme: Scheme,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_count: usize,
    pub pred_count: usize,
    pub matched: usize,
    pub token_accuracy: f64,
    pub gold_repairs: usize,
    pub pred_repairs: usize,
}

impl TaskReport {
    /// The number this task is selected and compared on: span F1 for BIO
    /// tasks, token accuracy for FLAT tasks.
    pub fn primary_metric(&self) -> f64 {
        match self.scheme {
            Scheme::Bio => self.f1,
            Scheme::Flat => self.token_accuracy,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F1Report {
    pub tasks: Vec<TaskReport>,
}

impl F1Report {
    pub fn task(&self, name: &str) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task,scheme,precision,recall,f1,gold,pred,matched,token_accuracy,gold_repairs,pred_repairs\n",
        );
        for t in &self.tasks {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                t.task,
                t.scheme,
                t.precision,
                t.recall,
                t.f1,
                t.gold_count,
                t.pred_count,
                t.matched,
                t.token_accuracy,
                t.gold_repairs,
                t.pred_repairs,
            )
            .unwrap();
        }
        out
    }
}

/// Scores predictions against gold, micro-aggregating counts over the whole
/// corpus before applying the precision/recall formulas. `pred[i][j][t]` is
/// the predicted label for sentence i, task j, position t.
pub fn evaluate(
    schema: &MultiTaskSchema,
    gold: &[MultiTaskSentence],
    pred: &[Vec<Vec<LabelId>>],
) -> Result<F1Report, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let num_tasks = schema.num_tasks();
    let mut tasks = Vec::with_capacity(num_tasks);
    for (j, task) in schema.tasks.iter().enumerate() {
        let mut matched = 0usize;
        let mut gold_total = 0usize;
        let mut pred_total = 0usize;
        let mut token_hits = 0usize;
        let mut tokens = 0usize;
        let mut gold_repairs = 0usize;
        let mut pred_repairs = 0usize;
        for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
            if g.gold.len() != num_tasks {
                return Err(EvalError::TaskCountMismatch {
                    sentence: i,
                    expected: num_tasks,
                    found: g.gold.len(),
                });
            }
            if p.len() != num_tasks {
                return Err(EvalError::TaskCountMismatch {
                    sentence: i,
                    expected: num_tasks,
                    found: p.len(),
                });
            }
            let gj = &g.gold[j];
            let pj = &p[j];
            if gj.len() != pj.len() {
                return Err(EvalError::LengthMismatch {
                    sentence: i,
                    gold: gj.len(),
                    pred: pj.len(),
                });
            }
            tokens += gj.len();
            token_hits += gj.iter().zip(pj).filter(|(a, b)| a == b).count();
            match task.scheme {
                Scheme::Bio => {
                    let (gs, gr) = extract_spans(task, gj);
                    let (ps, pr) = extract_spans(task, pj);
                    gold_repairs += gr;
                    pred_repairs += pr;
                    gold_total += gs.len();
                    pred_total += ps.len();
                    // Spans within one sentence are unique, so set
                    // intersection counts true positives.
                    matched += ps.iter().filter(|s| gs.contains(s)).count();
                }
                Scheme::Flat => {
                    for (a, b) in gj.iter().zip(pj) {
                        if *a != 0 {
                            gold_total += 1;
                        }
                        if *b != 0 {
                            pred_total += 1;
                        }
                        if a == b && *a != 0 {
                            matched += 1;
                        }
                    }
                }
            }
        }
        let (precision, recall, f1) = prf(matched, pred_total, gold_total);
        tasks.push(TaskReport {
            task: task.name.clone(),
            scheme: task.scheme,
            precision,
            recall,
            f1,
            gold_count: gold_total,
            pred_count: pred_total,
            matched,
            token_accuracy: if tokens == 0 {
                0.0
            } else {
                token_hits as f64 / tokens as f64
            },
            gold_repairs,
            pred_repairs,
        });
    }
    Ok(F1Report { tasks })
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes a coupling matrix as two CSVs under `out_dir`: `coupling_pos.csv`
/// holding max(C, 0) and `coupling_neg.csv` holding min(C, 0), so the two
/// tables sum back to C exactly. Rows are labeled with `task_b` surfaces,
/// columns with `task_a` surfaces, matching the orientation of
/// `coupling_value(task_a, task_b, row, col)`.
pub fn export_coupling_heatmap(
    model: &FactorialModel,
    schema: &MultiTaskSchema,
    task_a: &str,
    task_b: &str,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf), EvalError> {
    let j = schema
        .task_index(task_a)
        .ok_or_else(|| EvalError::UnknownTask(task_a.to_string()))?;
    let jh = schema
        .task_index(task_b)
        .ok_or_else(|| EvalError::UnknownTask(task_b.to_string()))?;
    if model.pair_index(j.min(jh), j.max(jh)).is_none() || j == jh {
        return Err(EvalError::MissingCoupling(
            task_a.to_string(),
            task_b.to_string(),
        ));
    }
    let rows = &schema.tasks[jh].labels;
    let cols = &schema.tasks[j].labels;
    std::fs::create_dir_all(out_dir)?;
    let pos_path = out_dir.join("coupling_pos.csv");
    let neg_path = out_dir.join("coupling_neg.csv");
    for (path, keep) in [
        (&pos_path, f64::max as fn(f64, f64) -> f64),
        (&neg_path, f64::min as fn(f64, f64) -> f64),
    ] {
        let mut out = String::new();
        out.push_str("label");
        for c in cols {
            out.push(',');
            out.push_str(&csv_field(&c.surface));
        }
        out.push('\n');
        for r in rows {
            out.push_str(&csv_field(&r.surface));
            for c in cols {
                let v = model.coupling_value(j, jh, r.id, c.id);
                write!(out, ",{}", keep(v, 0.0)).unwrap();
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
    }
    Ok((pos_path, neg_path))
}

/// One aggregated protocol result: a variant evaluated on one task at one
/// split size, already reduced to mean and standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub variant: String,
    pub split: String,
    pub task: String,
    pub mean: f64,
    pub std: f64,
}

fn split_key(s: &str) -> (u8, usize) {
    match s.parse::<SplitSize>() {
        Ok(SplitSize::N(n)) => (0, n),
        Ok(SplitSize::Full) => (1, 0),
        Err(_) => (2, 0),
    }
}

fn variant_key(v: &str) -> (usize, String) {
    const ORDER: [&str; 5] = ["st", "mh", "fac", "wfac", "cfac"];
    match ORDER.iter().position(|&o| o == v) {
        Some(i) => (i, String::new()),
        None => (ORDER.len(), v.to_string()),
    }
}

/// A (task, split) × variant table of mean ± std metrics.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub variants: Vec<String>,
    /// Rows keyed (task, split), each mapping variant -> (mean, std).
    pub rows: Vec<((String, String), BTreeMap<String, (f64, f64)>)>,
}

impl ComparisonReport {
    pub fn from_points(points: &[SummaryPoint]) -> Result<Self, EvalError> {
        if points.is_empty() {
            return Err(EvalError::NoRecords);
        }
        let mut variants: Vec<String> = Vec::new();
        for p in points {
            if !variants.contains(&p.variant) {
                variants.push(p.variant.clone());
            }
        }
        variants.sort_by_key(|v| variant_key(v));
        let mut rows: Vec<((String, String), BTreeMap<String, (f64, f64)>)> = Vec::new();
        for p in points {
            let key = (p.task.clone(), p.split.clone());
            let row = match rows.iter_mut().find(|(k, _)| *k == key) {
                Some((_, row)) => row,
                None => {
                    rows.push((key, BTreeMap::new()));
                    &mut rows.last_mut().unwrap().1
                }
            };
            row.insert(p.variant.clone(), (p.mean, p.std));
        }
        rows.sort_by(|(a, _), (b, _)| {
            a.0.cmp(&b.0).then(split_key(&a.1).cmp(&split_key(&b.1)))
        });
        Ok(ComparisonReport { variants, rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,split");
        for v in &self.variants {
            write!(out, ",{v}_mean,{v}_std").unwrap();
        }
        out.push('\n');
        for ((task, split), cells) in &self.rows {
            write!(out, "{},{}", csv_field(task), split).unwrap();
            for v in &self.variants {
                match cells.get(v) {
                    Some((m, s)) => write!(out, ",{m},{s}").unwrap(),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["task".to_string(), "split".to_string()];
        header.extend(self.variants.iter().cloned());
        let mut body: Vec<Vec<String>> = Vec::new();
        for ((task, split), cells) in &self.rows {
            let mut row = vec![task.clone(), split.clone()];
            for v in &self.variants {
                row.push(match cells.get(v) {
                    Some((m, s)) => format!("{m:.4} ± {s:.4}"),
                    None => "-".to_string(),
                });
            }
            body.push(row);
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let render = |out: &mut String, row: &[String]| {
            for (i, (cell, w)) in row.iter().zip(&widths).enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                write!(out, "{cell:<w$}", w = *w).unwrap();
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        };
        render(&mut out, &header);
        for row in &body {
            render(&mut out, row);
        }
        out
    }

    /// Learning-curve data: one line per (variant, split, task) point.
    pub fn learning_curve_csv(points: &[SummaryPoint]) -> String {
        let mut sorted: Vec<&SummaryPoint> = points.iter().collect();
        sorted.sort_by(|a, b| {
            variant_key(&a.variant)
                .cmp(&variant_key(&b.variant))
                .then(split_key(&a.split).cmp(&split_key(&b.split)))
                .then(a.task.cmp(&b.task))
        });
        let mut out = String::from("variant,split_size,task,mean_f1,std_f1\n");
        for p in sorted {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.variant,
                p.split,
                csv_field(&p.task),
                p.mean,
                p.std
            )
            .unwrap();
        }
        out
    }
}
