//! Ground-truth metrics on labelled score sets: confusion matrices, counting
//! metrics, ROC AUC, and calibration diagnostics (root Brier score, adaptive
//! calibration error).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::ScoreSet;

pub const DEFAULT_ACE_BINS: usize = 15;

/// Number of interior quantile thresholds used for ROC construction.
pub const ROC_QUANTILES: usize = 100;

/// The metrics reported for every run. Order here is the column order of every
/// output file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    BalancedAccuracy,
    Recall,
    Specificity,
    Ppv,
    Npv,
    F1,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Accuracy,
        Metric::BalancedAccuracy,
        Metric::Recall,
        Metric::Specificity,
        Metric::Ppv,
        Metric::Npv,
        Metric::F1,
        Metric::Auc,
    ];

    /// Metrics computable from a confusion matrix at one threshold.
    pub const COUNTING: [Metric; 7] = [
        Metric::Accuracy,
        Metric::BalancedAccuracy,
        Metric::Recall,
        Metric::Specificity,
        Metric::Ppv,
        Metric::Npv,
        Metric::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::Recall => "recall",
            Metric::Specificity => "specificity",
            Metric::Ppv => "ppv",
            Metric::Npv => "npv",
            Metric::F1 => "f1",
            Metric::Auc => "auc",
        }
    }

    pub fn is_counting(self) -> bool {
        self != Metric::Auc
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or(match s.as_str() {
                "precision" => Some(Metric::Ppv),
                "sensitivity" | "tpr" => Some(Metric::Recall),
                "tnr" => Some(Metric::Specificity),
                "f1_score" => Some(Metric::F1),
                "bal_acc" => Some(Metric::BalancedAccuracy),
                _ => None,
            })
            .ok_or_else(|| Error::Invalid(format!("unknown metric {s:?}")))
    }
}

/// State of one metric cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Value(f64),
    /// A zero denominator, or an estimator precondition that failed for this cell.
    Undefined,
    /// The producing method does not estimate this metric.
    Unsupported,
}

impl MetricValue {
    pub fn from_ratio(num: f64, den: f64) -> Self {
        if den > 0.0 {
            MetricValue::Value(num / den)
        } else {
            MetricValue::Undefined
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_undefined(self) -> bool {
        self == MetricValue::Undefined
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v}"),
            MetricValue::Undefined => f.write_str("undefined"),
            MetricValue::Unsupported => f.write_str("unsupported"),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Value(v) => s.serialize_f64(*v),
            MetricValue::Undefined => s.serialize_str("undefined"),
            MetricValue::Unsupported => s.serialize_str("unsupported"),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(MetricValue::Value(v)),
            Raw::Str(s) if s == "undefined" => Ok(MetricValue::Undefined),
            Raw::Str(s) if s == "unsupported" => Ok(MetricValue::Unsupported),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad metric value {s:?}"))),
        }
    }
}

/// Metric name to value. Metrics that were never computed read as
/// [`MetricValue::Unsupported`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    values: BTreeMap<Metric, MetricValue>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, metric: Metric, value: MetricValue) {
        self.values.insert(metric, value);
    }

    pub fn get(&self, metric: Metric) -> MetricValue {
        self.values.get(&metric).copied().unwrap_or(MetricValue::Unsupported)
    }

    pub fn value(&self, metric: Metric) -> Option<f64> {
        self.get(metric).value()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Metric, MetricValue)> + '_ {
        self.values.iter().map(|(&m, &v)| (m, v))
    }

    /// CSV header matching [`MetricReport::csv_row`].
    pub fn csv_header() -> Vec<&'static str> {
        Metric::ALL.iter().map(|m| m.name()).collect()
    }

    /// Flat row over [`Metric::ALL`]; undefined cells serialise as `undefined`.
    pub fn csv_row(&self) -> Vec<String> {
        Metric::ALL.iter().map(|&m| self.get(m).to_string()).collect()
    }
}

/// Which procedure produced a confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmSource {
    Realized,
    Cbpe,
    CmAtc,
    CmDoc,
    NaiveAtc,
    NaiveDoc,
}

impl CmSource {
    pub fn name(self) -> &'static str {
        match self {
            CmSource::Realized => "realized",
            CmSource::Cbpe => "cbpe",
            CmSource::CmAtc => "cm_atc",
            CmSource::CmDoc => "cm_doc",
            CmSource::NaiveAtc => "naive_atc",
            CmSource::NaiveDoc => "naive_doc",
        }
    }
}

impl fmt::Display for CmSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Confusion matrix with real-valued entries: integer counts when realized,
/// fractional when estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub source: CmSource,
}

impl ConfusionMatrix {
    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn n_pos(&self) -> f64 {
        self.tp + self.fp
    }

    pub fn n_neg(&self) -> f64 {
        self.tn + self.fn_
    }
}

/// Integer confusion matrix of a fully labelled set at its threshold.
pub fn realized_confusion_matrix(set: &ScoreSet) -> Result<ConfusionMatrix> {
    let labels = set.labels()?;
    let t = set.threshold();
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (r, &y) in set.records().iter().zip(&labels) {
        match (r.raw_score >= t, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionMatrix {
        tp: tp as f64,
        fp: fp as f64,
        tn: tn as f64,
        fn_: fn_ as f64,
        source: CmSource::Realized,
    })
}

/// Every counting metric of a confusion matrix. AUC is left unsupported.
pub fn counting_metrics(cm: &ConfusionMatrix) -> MetricReport {
    let ConfusionMatrix { tp, fp, tn, fn_, .. } = *cm;
    let recall = MetricValue::from_ratio(tp, tp + fn_);
    let specificity = MetricValue::from_ratio(tn, tn + fp);
    let ppv = MetricValue::from_ratio(tp, tp + fp);
    let npv = MetricValue::from_ratio(tn, tn + fn_);
    let balanced = match (recall, specificity) {
        (MetricValue::Value(r), MetricValue::Value(s)) => MetricValue::Value((r + s) / 2.0),
        _ => MetricValue::Undefined,
    };
    let f1 = match (ppv, recall) {
        (MetricValue::Value(p), MetricValue::Value(r)) => MetricValue::from_ratio(2.0 * p * r, p + r),
        _ => MetricValue::Undefined,
    };

    let mut report = MetricReport::new();
    report.set(Metric::Accuracy, MetricValue::from_ratio(tp + tn, cm.total()));
    report.set(Metric::BalancedAccuracy, balanced);
    report.set(Metric::Recall, recall);
    report.set(Metric::Specificity, specificity);
    report.set(Metric::Ppv, ppv);
    report.set(Metric::Npv, npv);
    report.set(Metric::F1, f1);
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMethod {
    /// Mann-Whitney statistic, ties counted half.
    RankExact,
    /// Trapezoidal integration over the ROC points at 100 score quantiles.
    #[serde(rename = "quantile_100")]
    Quantile100,
}

/// ROC AUC of a labelled set.
pub fn realized_auc(set: &ScoreSet, method: AucMethod) -> Result<f64> {
    let labels = set.labels()?;
    let scores = set.raw_scores();
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::AucUndefined);
    }
    match method {
        AucMethod::RankExact => Ok(rank_auc(&scores, &labels)),
        AucMethod::Quantile100 => {
            let points: Vec<(f64, f64)> = quantile_thresholds(&scores, ROC_QUANTILES)
                .into_iter()
                .filter_map(|t| {
                    let cm = count_at(&scores, &labels, t);
                    Some((
                        MetricValue::from_ratio(cm.fp, cm.fp + cm.tn).value()?,
                        MetricValue::from_ratio(cm.tp, cm.tp + cm.fn_).value()?,
                    ))
                })
                .collect();
            Ok(trapezoid_roc(points))
        }
    }
}

fn count_at(scores: &[f64], labels: &[bool], t: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix {
        tp: 0.0,
        fp: 0.0,
        tn: 0.0,
        fn_: 0.0,
        source: CmSource::Realized,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y) {
            (true, true) => cm.tp += 1.0,
            (true, false) => cm.fp += 1.0,
            (false, false) => cm.tn += 1.0,
            (false, true) => cm.fn_ += 1.0,
        }
    }
    cm
}

/// Mann-Whitney AUC via midranks.
fn rank_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares its mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Linear-interpolation quantile of sorted data (the common "type 7"
/// definition).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The `count` interior quantiles `j / (count + 1)`, `j = 1..=count`, of `scores`.
pub fn quantile_thresholds(scores: &[f64], count: usize) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..=count)
        .map(|j| quantile_sorted(&sorted, j as f64 / (count + 1) as f64))
        .collect()
}

/// Area under a ROC curve given as (FPR, TPR) points. The endpoints (0,0) and
/// (1,1) are appended, points sorted by FPR then TPR, and integrated with the
/// trapezoidal rule. Monotonicity is not enforced.
pub fn trapezoid_roc(mut points: Vec<(f64, f64)>) -> f64 {
    points.push((0.0, 0.0));
    points.push((1.0, 1.0));
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Square root of the mean squared gap between raw score and label.
pub fn root_brier_score(set: &ScoreSet) -> Result<f64> {
    let labels = set.labels()?;
    let sse: f64 = set
        .records()
        .iter()
        .zip(&labels)
        .map(|(r, &y)| {
            let d = r.raw_score - if y { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok((sse / labels.len() as f64).sqrt())
}

/// Adaptive calibration error: records sorted by raw score are cut into `bins`
/// equal-frequency bins (the lowest `n % bins` bins take one extra record) and
/// the absolute gap between mean score and positive fraction is averaged over
/// bins.
pub fn adaptive_calibration_error(set: &ScoreSet, bins: usize) -> Result<f64> {
    let labels = set.labels()?;
    if bins == 0 {
        return Err(Error::Invalid("ACE needs at least one bin".into()));
    }
    let n = labels.len();
    if n < bins {
        return Err(Error::Invalid(format!("ACE needs n >= bins, got n={n}, bins={bins}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let records = set.records();
    order.sort_by(|&a, &b| records[a].raw_score.total_cmp(&records[b].raw_score));

    let base = n / bins;
    let extra = n % bins;
    let mut start = 0;
    let mut total = 0.0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        let idx = &order[start..start + size];
        let mean_score = idx.iter().map(|&i| records[i].raw_score).sum::<f64>() / size as f64;
        let frac_pos = idx.iter().filter(|&&i| labels[i]).count() as f64 / size as f64;
        total += (mean_score - frac_pos).abs();
        start += size;
    }
    Ok(total / bins as f64)
}

/// Realized counting metrics plus rank-exact AUC (undefined for single-class
/// sets).
pub fn realized_report(set: &ScoreSet) -> Result<MetricReport> {
    let cm = realized_confusion_matrix(set)?;
    let mut report = counting_metrics(&cm);
    let auc = match realized_auc(set, AucMethod::RankExact) {
        Ok(v) => MetricValue::Value(v),
        Err(Error::AucUndefined) => MetricValue::Undefined,
        Err(e) => return Err(e),
    };
    report.set(Metric::Auc, auc);
    Ok(report)
}
