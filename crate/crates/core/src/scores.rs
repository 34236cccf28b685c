//! Score records, file ingestion, and the split of a score set into
//! positive-prediction and negative-prediction confidences.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One scored example: the model's positive-class sigmoid output plus optional
/// ground truth and group tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub raw_score: f64,
    pub label: Option<bool>,
    pub group: Option<String>,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, raw_score: f64, label: Option<bool>) -> Self {
        Self {
            id: id.into(),
            raw_score,
            label,
            group: None,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

/// An ordered collection of score records evaluated at decision threshold `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    records: Vec<ScoreRecord>,
    threshold: f64,
}

impl ScoreSet {
    /// Validates every record's score and the threshold. An empty set is legal
    /// here; estimation operations reject it.
    pub fn new(records: Vec<ScoreRecord>, threshold: f64) -> Result<Self> {
        check_unit("threshold", threshold)?;
        for r in &records {
            if !(0.0..=1.0).contains(&r.raw_score) {
                return Err(Error::Invalid(format!(
                    "record {:?}: score {} outside [0, 1]",
                    r.id, r.raw_score
                )));
            }
        }
        Ok(Self { records, threshold })
    }

    /// Builds a set from parallel score and label slices with ids `0..n`.
    pub fn from_scores(scores: &[f64], labels: Option<&[bool]>, threshold: f64) -> Result<Self> {
        if let Some(l) = labels {
            if l.len() != scores.len() {
                return Err(Error::Invalid(format!(
                    "{} scores but {} labels",
                    scores.len(),
                    l.len()
                )));
            }
        }
        let records = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoreRecord::new(i.to_string(), s, labels.map(|l| l[i])))
            .collect();
        Self::new(records, threshold)
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ScoreRecord> {
        self.records
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same records evaluated at a different decision threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        check_unit("threshold", threshold)?;
        Ok(Self {
            records: self.records.clone(),
            threshold,
        })
    }

    /// True iff the set is non-empty and every record carries a label.
    pub fn labelled(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.label.is_some())
    }

    pub fn raw_scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.raw_score).collect()
    }

    /// Labels of a fully labelled set; mixed or missing labelling is an error.
    pub fn labels(&self) -> Result<Vec<bool>> {
        if self.records.is_empty() {
            return Err(Error::EmptySet);
        }
        self.records.iter().map(|r| r.label.ok_or(Error::Unlabelled)).collect()
    }

    /// Fraction of positive labels.
    pub fn prevalence(&self) -> Result<f64> {
        let labels = self.labels()?;
        Ok(labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64)
    }

    /// Records carrying the given group tag, in input order.
    pub fn filter_group(&self, group: &str) -> Self {
        Self {
            records: self
                .records
                .iter()
                .filter(|r| r.group.as_deref() == Some(group))
                .cloned()
                .collect(),
            threshold: self.threshold,
        }
    }

    /// Records carrying the given label, in input order.
    pub fn filter_label(&self, label: bool) -> Self {
        Self {
            records: self
                .records
                .iter()
                .filter(|r| r.label == Some(label))
                .cloned()
                .collect(),
            threshold: self.threshold,
        }
    }

    /// Writes the set in the CSV ingestion format. The `label` column is
    /// emitted when any record is labelled, `group` when any record is tagged.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_label = self.records.iter().any(|r| r.label.is_some());
        let with_group = self.records.iter().any(|r| r.group.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id", "score"];
        if with_label {
            header.push("label");
        }
        if with_group {
            header.push("group");
        }
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.id.clone(), r.raw_score.to_string()];
            if with_label {
                row.push(match r.label {
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                    None => String::new(),
                });
            }
            if with_group {
                row.push(r.group.clone().unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn check_unit(what: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{what} {v} outside [0, 1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreFormat {
    Csv,
    Jsonl,
}

impl ScoreFormat {
    /// `.jsonl` / `.ndjson` are JSON lines, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => ScoreFormat::Jsonl,
            _ => ScoreFormat::Csv,
        }
    }
}

/// Reads a score file. Input order is preserved.
pub fn load_scores(path: &Path, format: ScoreFormat, threshold: f64) -> Result<ScoreSet> {
    check_unit("threshold", threshold)?;
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records = match format {
        ScoreFormat::Csv => read_csv(path, file)?,
        ScoreFormat::Jsonl => read_jsonl(path, file)?,
    };
    if records.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(ScoreSet { records, threshold })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_score(path: &Path, line: usize, v: f64) -> Result<f64> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("score {v} outside [0, 1]")))
    }
}

fn parse_label_str(path: &Path, line: usize, s: &str) -> Result<Option<bool>> {
    match s.trim() {
        "" => Ok(None),
        "1" | "1.0" => Ok(Some(true)),
        "0" | "0.0" => Ok(Some(false)),
        other => Err(parse_err(path, line, format!("label {other:?} is not 0 or 1"))),
    }
}

fn read_csv(path: &Path, file: File) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| parse_err(path, 1, "missing `id` column"))?;
    let score_col = col("score").ok_or_else(|| parse_err(path, 1, "missing `score` column"))?;
    let label_col = col("label");
    let group_col = col("group");

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| {
            row.get(c)
                .ok_or_else(|| parse_err(path, line, format!("missing column {}", &headers[c])))
        };
        let id = field(id_col)?.to_string();
        let raw = field(score_col)?;
        let score: f64 = raw
            .parse()
            .map_err(|_| parse_err(path, line, format!("score {raw:?} is not a number")))?;
        let raw_score = parse_score(path, line, score)?;
        let label = match label_col {
            Some(c) => parse_label_str(path, line, row.get(c).unwrap_or(""))?,
            None => None,
        };
        let group = group_col
            .and_then(|c| row.get(c))
            .filter(|g| !g.is_empty())
            .map(str::to_string);
        records.push(ScoreRecord {
            id,
            raw_score,
            label,
            group,
        });
    }
    Ok(records)
}

fn read_jsonl(path: &Path, file: File) -> Result<Vec<ScoreRecord>> {
    use serde_json::Value;

    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| Error::Io {
            path: PathBuf::from(path),
            source,
        })?;
        let text = line.trim_end_matches('\r').trim();
        if text.is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(text).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let obj = obj
            .as_object()
            .ok_or_else(|| parse_err(path, line_no, "expected a JSON object"))?;
        let id = match obj.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(parse_err(path, line_no, "missing `id`")),
        };
        let score = obj
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| parse_err(path, line_no, "missing numeric `score`"))?;
        let raw_score = parse_score(path, line_no, score)?;
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::Bool(b)) => Some(*b),
            Some(Value::Number(n)) => match n.as_f64() {
                Some(1.0) => Some(true),
                Some(0.0) => Some(false),
                _ => return Err(parse_err(path, line_no, format!("label {n} is not 0 or 1"))),
            },
            Some(Value::String(s)) => parse_label_str(path, line_no, s)?,
            Some(other) => return Err(parse_err(path, line_no, format!("label {other} is not 0 or 1"))),
        };
        let group = match obj.get("group") {
            Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
            _ => None,
        };
        records.push(ScoreRecord {
            id,
            raw_score,
            label,
            group,
        });
    }
    Ok(records)
}

/// Confidence in the predicted class. The boundary `raw_score == t` counts as
/// a positive prediction.
#[inline]
pub fn predicted_confidence(raw_score: f64, t: f64) -> f64 {
    if raw_score >= t {
        raw_score
    } else {
        1.0 - raw_score
    }
}

/// Predicted-class confidences partitioned by predicted side.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSplit {
    /// Raw scores of records with `s >= t`.
    pub positives: Vec<f64>,
    /// `1 - s` for records with `s < t`.
    pub negatives: Vec<f64>,
    pub labels_pos: Option<Vec<bool>>,
    pub labels_neg: Option<Vec<bool>>,
    pub threshold: f64,
}

impl PredictionSplit {
    pub fn n_pos(&self) -> usize {
        self.positives.len()
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len()
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All predicted-class confidences, positives first.
    pub fn all_confidences(&self) -> Vec<f64> {
        self.positives.iter().chain(self.negatives.iter()).copied().collect()
    }

    pub fn is_labelled(&self) -> bool {
        self.labels_pos.is_some() && self.labels_neg.is_some()
    }
}

/// Splits a set into positive and negative predictions at its threshold.
/// Labels are carried along only when every record is labelled.
pub fn split_predictions(set: &ScoreSet) -> Result<PredictionSplit> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let t = set.threshold();
    let labelled = set.labelled();
    let mut split = PredictionSplit {
        positives: Vec::new(),
        negatives: Vec::new(),
        labels_pos: labelled.then(Vec::new),
        labels_neg: labelled.then(Vec::new),
        threshold: t,
    };
    for r in set.records() {
        if r.raw_score >= t {
            split.positives.push(r.raw_score);
            if let (Some(ls), Some(y)) = (split.labels_pos.as_mut(), r.label) {
                ls.push(y);
            }
        } else {
            split.negatives.push(1.0 - r.raw_score);
            if let (Some(ls), Some(y)) = (split.labels_neg.as_mut(), r.label) {
                ls.push(y);
            }
        }
    }
    Ok(split)
}
