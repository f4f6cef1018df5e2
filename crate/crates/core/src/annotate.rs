//! Model-perspective difficulty labels from multi-evaluator correctness logs,
//! and transition accounting against the original (human) labels.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::label::DifficultyLabel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotateError {
    #[error("record has no evaluators")]
    NoEvaluators,
    #[error("cutoffs must satisfy easy_min > medium_min >= 0 (got easy_min={easy_min}, medium_min={medium_min})")]
    BadCutoffs { easy_min: usize, medium_min: usize },
    #[error("cutoff easy_min={easy_min} exceeds the evaluator count {evaluators}")]
    CutoffExceedsEvaluators { easy_min: usize, evaluators: usize },
    #[error("no records")]
    Empty,
    #[error("{left} records but {right} aligned entries")]
    Misaligned { left: usize, right: usize },
    #[error("record `{id}` has evaluators {got:?}, expected {expected:?}")]
    EvaluatorMismatch { id: String, got: Vec<String>, expected: Vec<String> },
    #[error("line {line}: {msg}")]
    Schema { line: u64, msg: String },
    #[error("{0}")]
    Io(String),
}

/// One question with its original label and per-evaluator correctness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionRecord {
    pub question_id: String,
    pub original_difficulty: DifficultyLabel,
    pub evaluator_correct: BTreeMap<String, bool>,
}

impl QuestionRecord {
    pub fn new(
        question_id: impl Into<String>,
        original_difficulty: DifficultyLabel,
        evaluator_correct: BTreeMap<String, bool>,
    ) -> Result<Self, AnnotateError> {
        if evaluator_correct.is_empty() {
            return Err(AnnotateError::NoEvaluators);
        }
        Ok(Self { question_id: question_id.into(), original_difficulty, evaluator_correct })
    }

    pub fn correct_votes(&self) -> usize {
        self.evaluator_correct.values().filter(|&&c| c).count()
    }
}

/// Vote cutoffs: easy when at least `easy_min` evaluators are correct,
/// medium when at least `medium_min`, hard otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Cutoffs {
    pub easy_min: usize,
    pub medium_min: usize,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self { easy_min: 3, medium_min: 2 }
    }
}

impl Cutoffs {
    pub fn new(easy_min: usize, medium_min: usize) -> Result<Self, AnnotateError> {
        let c = Self { easy_min, medium_min };
        if easy_min <= medium_min {
            return Err(AnnotateError::BadCutoffs { easy_min, medium_min });
        }
        Ok(c)
    }

    pub fn check(&self, evaluators: usize) -> Result<(), AnnotateError> {
        Self::new(self.easy_min, self.medium_min)?;
        if self.easy_min > evaluators {
            return Err(AnnotateError::CutoffExceedsEvaluators { easy_min: self.easy_min, evaluators });
        }
        Ok(())
    }

    pub fn label(&self, correct: usize) -> DifficultyLabel {
        if correct >= self.easy_min {
            DifficultyLabel::Easy
        } else if correct >= self.medium_min {
            DifficultyLabel::Medium
        } else {
            DifficultyLabel::Hard
        }
    }
}

pub fn assign_model_difficulty(record: &QuestionRecord, cutoffs: Cutoffs) -> Result<DifficultyLabel, AnnotateError> {
    cutoffs.check(record.evaluator_correct.len())?;
    Ok(cutoffs.label(record.correct_votes()))
}

/// Original-by-new label counts, indexed `counts[original][new]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransitionTable {
    pub counts: [[usize; 3]; 3],
}

impl TransitionTable {
    pub fn record(&mut self, original: DifficultyLabel, new: DifficultyLabel) {
        self.counts[original.index()][new.index()] += 1;
    }

    pub fn merge(&mut self, other: &TransitionTable) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, x) in row.iter_mut().zip(o) {
                *c += x;
            }
        }
    }

    pub fn count(&self, original: DifficultyLabel, new: DifficultyLabel) -> usize {
        self.counts[original.index()][new.index()]
    }

    pub fn orig_totals(&self) -> [usize; 3] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn new_totals(&self) -> [usize; 3] {
        std::array::from_fn(|n| self.counts.iter().map(|row| row[n]).sum())
    }

    pub fn unchanged(&self) -> [usize; 3] {
        std::array::from_fn(|o| self.counts[o][o])
    }

    pub fn changed(&self) -> [usize; 3] {
        let (tot, un) = (self.orig_totals(), self.unchanged());
        std::array::from_fn(|o| tot[o] - un[o])
    }

    pub fn total(&self) -> usize {
        self.orig_totals().iter().sum()
    }

    /// Writes the table as CSV with columns
    /// `orig_diff,orig_total,new_total,unchanged,changed,new_diff,changed_num`:
    /// two rows per original label (one per off-diagonal target), then a
    /// `total` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnnotateError> {
        let io = |e: csv::Error| AnnotateError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["orig_diff", "orig_total", "new_total", "unchanged", "changed", "new_diff", "changed_num"])
            .map_err(io)?;
        let (ot, nt, un, ch) = (self.orig_totals(), self.new_totals(), self.unchanged(), self.changed());
        for o in DifficultyLabel::ALL {
            let i = o.index();
            for n in DifficultyLabel::ALL.into_iter().filter(|&n| n != o) {
                w.write_record([
                    o.as_str().to_string(),
                    ot[i].to_string(),
                    nt[i].to_string(),
                    un[i].to_string(),
                    ch[i].to_string(),
                    n.as_str().to_string(),
                    self.count(o, n).to_string(),
                ])
                .map_err(io)?;
            }
        }
        let total = self.total();
        let un_total: usize = un.iter().sum();
        let ch_total: usize = ch.iter().sum();
        w.write_record([
            "total".to_string(),
            total.to_string(),
            total.to_string(),
            un_total.to_string(),
            ch_total.to_string(),
            String::new(),
            ch_total.to_string(),
        ])
        .map_err(io)?;
        w.flush().map_err(|e| AnnotateError::Io(e.to_string()))
    }
}

pub fn transition_table(
    records: &[QuestionRecord],
    new_labels: &[DifficultyLabel],
) -> Result<TransitionTable, AnnotateError> {
    if records.is_empty() {
        return Err(AnnotateError::Empty);
    }
    if records.len() != new_labels.len() {
        return Err(AnnotateError::Misaligned { left: records.len(), right: new_labels.len() });
    }
    let mut t = TransitionTable::default();
    for (r, &n) in records.iter().zip(new_labels) {
        t.record(r.original_difficulty, n);
    }
    Ok(t)
}

/// Per-question outcome of the model under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub correct: bool,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    pub accuracy: f64,
    pub mean_length: f64,
    /// Natural log of the mean length.
    pub log_mean_length: f64,
}

/// Accuracy and length statistics grouped by original and by model-perspective
/// label. Empty groups are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyReport {
    pub by_original: [Option<GroupStats>; 3],
    pub by_model: [Option<GroupStats>; 3],
}

fn group_stats(outcomes: &[Outcome]) -> Option<GroupStats> {
    if outcomes.is_empty() {
        return None;
    }
    let n = outcomes.len() as f64;
    let correct = outcomes.iter().filter(|o| o.correct).count() as f64;
    // Integer sum first so the mean does not depend on record order.
    let total: u128 = outcomes.iter().map(|o| o.length as u128).sum();
    let mean_length = total as f64 / n;
    Some(GroupStats { count: outcomes.len(), accuracy: correct / n, mean_length, log_mean_length: mean_length.ln() })
}

pub fn difficulty_report(
    records: &[QuestionRecord],
    model_labels: &[DifficultyLabel],
    outcomes: &[Outcome],
) -> Result<DifficultyReport, AnnotateError> {
    if records.len() != model_labels.len() {
        return Err(AnnotateError::Misaligned { left: records.len(), right: model_labels.len() });
    }
    if records.len() != outcomes.len() {
        return Err(AnnotateError::Misaligned { left: records.len(), right: outcomes.len() });
    }
    let mut orig: [Vec<Outcome>; 3] = Default::default();
    let mut model: [Vec<Outcome>; 3] = Default::default();
    for ((r, m), &o) in records.iter().zip(model_labels).zip(outcomes) {
        orig[r.original_difficulty.index()].push(o);
        model[m.index()].push(o);
    }
    Ok(DifficultyReport {
        by_original: orig.each_ref().map(|g| group_stats(g)),
        by_model: model.each_ref().map(|g| group_stats(g)),
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(input)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(e: csv::Error) -> AnnotateError {
    let line = e.position().map_or(0, |p| p.line());
    AnnotateError::Schema { line, msg: e.to_string() }
}

/// Parses an evaluation log: header `question_id,original_difficulty,<evaluator>...`,
/// then one record per line with a boolean (`1`/`0`/`true`/`false`) per
/// evaluator.
pub fn parse_eval_log<R: Read>(input: R) -> Result<Vec<QuestionRecord>, AnnotateError> {
    let mut rdr = csv_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let schema = |msg: String| AnnotateError::Schema { line: 1, msg };
    if header.len() < 2 || &header[0] != "question_id" || &header[1] != "original_difficulty" {
        return Err(schema("header must start with `question_id,original_difficulty`".into()));
    }
    let evaluators: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    if evaluators.is_empty() {
        return Err(schema("no evaluator columns".into()));
    }
    if let Some(dup) = evaluators.iter().enumerate().find(|(i, e)| evaluators[..*i].contains(e)) {
        return Err(schema(format!("duplicate evaluator column `{}`", dup.1)));
    }

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = line_of(&row);
        let err = |msg: String| AnnotateError::Schema { line, msg };
        if row.len() != header.len() {
            return Err(err(format!("expected {} fields, got {}", header.len(), row.len())));
        }
        if row[0].is_empty() {
            return Err(err("empty question_id".into()));
        }
        let original: DifficultyLabel = row[1].parse().map_err(|e| err(format!("{e}")))?;
        let mut votes = BTreeMap::new();
        for (name, v) in evaluators.iter().zip(row.iter().skip(2)) {
            let b = parse_bool(v).ok_or_else(|| err(format!("evaluator `{name}`: expected a boolean, got `{v}`")))?;
            votes.insert(name.clone(), b);
        }
        records.push(QuestionRecord::new(&row[0], original, votes)?);
    }
    if records.is_empty() {
        return Err(AnnotateError::Empty);
    }
    Ok(records)
}

/// Checks that every record carries the same evaluator set.
pub fn check_evaluators(records: &[QuestionRecord]) -> Result<usize, AnnotateError> {
    let first = records.first().ok_or(AnnotateError::Empty)?;
    let expected: Vec<&String> = first.evaluator_correct.keys().collect();
    for r in records {
        if !r.evaluator_correct.keys().eq(expected.iter().copied()) {
            return Err(AnnotateError::EvaluatorMismatch {
                id: r.question_id.clone(),
                got: r.evaluator_correct.keys().cloned().collect(),
                expected: expected.into_iter().cloned().collect(),
            });
        }
    }
    Ok(expected.len())
}

/// Parses per-question outcomes (`question_id,correct,length`) and aligns
/// them with `records`, which must list the same ids in the same order.
pub fn parse_outcomes<R: Read>(input: R, records: &[QuestionRecord]) -> Result<Vec<Outcome>, AnnotateError> {
    let mut rdr = csv_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["question_id", "correct", "length"] {
        return Err(AnnotateError::Schema { line: 1, msg: "header must be `question_id,correct,length`".into() });
    }
    let mut out = Vec::with_capacity(records.len());
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = line_of(&row);
        let err = |msg: String| AnnotateError::Schema { line, msg };
        if row.len() != 3 {
            return Err(err(format!("expected 3 fields, got {}", row.len())));
        }
        let expected = records.get(out.len()).ok_or_else(|| err("more outcomes than records".into()))?;
        if row[0] != expected.question_id {
            return Err(err(format!("question `{}` out of order, expected `{}`", &row[0], expected.question_id)));
        }
        let correct = parse_bool(&row[1]).ok_or_else(|| err(format!("expected a boolean, got `{}`", &row[1])))?;
        let length = row[2].parse().map_err(|e| err(format!("bad length `{}`: {e}", &row[2])))?;
        out.push(Outcome { correct, length });
    }
    if out.len() != records.len() {
        return Err(AnnotateError::Misaligned { left: records.len(), right: out.len() });
    }
    Ok(out)
}
