//! Label-free estimators.
//!
//! * CBPE averages predicted-class confidences, overall for accuracy and per
//!   predicted side for PPV / NPV.
//! * ATC learns a confidence threshold on validation data so that the fraction
//!   of confidences above it matches a validation metric, then reports that
//!   fraction on test data.
//! * DoC shifts a validation metric by the drop in mean confidence between
//!   validation and test.
//!
//! The naive variants apply ATC / DoC to one metric at a time over all
//! confidences. The confusion-matrix variants (CM-ATC, CM-DoC) run them
//! separately on the positive and negative prediction sides to estimate PPV
//! and NPV, which fixes the whole confusion matrix and hence every counting
//! metric. AUC is estimated by repeating a confusion-matrix estimate at 100
//! score quantiles and integrating the resulting ROC curve.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::realized::{
    counting_metrics, quantile_sorted, realized_confusion_matrix, trapezoid_roc, CmSource, ConfusionMatrix, Metric,
    MetricReport, MetricValue, ROC_QUANTILES,
};
use crate::scores::{split_predictions, PredictionSplit, ScoreSet};

/// Sentinel threshold meaning "every confidence passes".
pub const ATC_ALL_PASS: f64 = -1.0;

/// Estimation method tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cbpe,
    NaiveAtc,
    NaiveDoc,
    CmAtc,
    CmDoc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cbpe,
        Method::NaiveAtc,
        Method::NaiveDoc,
        Method::CmAtc,
        Method::CmDoc,
    ];

    pub fn name(self) -> &'static str {
        self.source().name()
    }

    pub fn source(self) -> CmSource {
        match self {
            Method::Cbpe => CmSource::Cbpe,
            Method::NaiveAtc => CmSource::NaiveAtc,
            Method::NaiveDoc => CmSource::NaiveDoc,
            Method::CmAtc => CmSource::CmAtc,
            Method::CmDoc => CmSource::CmDoc,
        }
    }

    /// Whether the method yields a confusion matrix (and therefore AUC).
    pub fn estimates_cm(self) -> bool {
        matches!(self, Method::Cbpe | Method::CmAtc | Method::CmDoc)
    }

    /// Parses a comma-separated method list.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cbpe" => Ok(Method::Cbpe),
            "atc" | "naive_atc" => Ok(Method::NaiveAtc),
            "doc" | "naive_doc" => Ok(Method::NaiveDoc),
            "cm_atc" => Ok(Method::CmAtc),
            "cm_doc" => Ok(Method::CmDoc),
            other => Err(Error::Invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// A learned ATC threshold. Membership is strict: a confidence counts when it
/// is `> value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtcThreshold {
    pub value: f64,
    pub side: Side,
    pub target: f64,
    /// Fraction of the learning set strictly above `value`.
    pub achieved: f64,
    /// Learning-set values equal to `value` other than the order statistic
    /// itself; these are what can push `achieved` further than 1/n off target.
    pub ties: usize,
}

/// A DoC confidence offset: mean validation confidence minus mean test
/// confidence on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocOffset {
    pub delta: f64,
    pub side: Side,
    pub base_metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocEstimate {
    pub value: f64,
    /// Value before clipping to [0, 1].
    pub raw: f64,
    pub clipped: bool,
}

/// Method-specific intermediate quantities, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodDetail {
    Cbpe {
        ppv: MetricValue,
        npv: MetricValue,
    },
    CmAtc {
        positive: AtcThreshold,
        negative: AtcThreshold,
    },
    CmDoc {
        positive: DocOffset,
        negative: DocOffset,
    },
    Naive {
        thresholds: BTreeMap<Metric, AtcThreshold>,
    },
}

/// Output of one estimation method on one validation/test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: Method,
    pub cm: Option<ConfusionMatrix>,
    pub metrics: MetricReport,
    /// Metrics whose estimate was clipped into [0, 1].
    pub clipped: BTreeSet<Metric>,
    pub detail: Option<MethodDetail>,
    /// Per-metric problems that left a cell undefined.
    pub notes: Vec<String>,
}

impl EstimationResult {
    fn from_cm(method: Method, cm: ConfusionMatrix, detail: MethodDetail) -> Self {
        Self {
            method,
            metrics: counting_metrics(&cm),
            cm: Some(cm),
            clipped: BTreeSet::new(),
            detail: Some(detail),
            notes: Vec::new(),
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn clip_unit(v: f64) -> (f64, bool) {
    let c = v.clamp(0.0, 1.0);
    (c, c != v)
}

/// CBPE accuracy: the mean predicted-class confidence.
pub fn cbpe_accuracy(test: &PredictionSplit) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySet);
    }
    let sum: f64 = test.positives.iter().chain(&test.negatives).sum();
    Ok(sum / test.len() as f64)
}

/// CBPE PPV / NPV: mean confidence on each predicted side. An empty side
/// reads as undefined.
pub fn cbpe_pv(test: &PredictionSplit) -> (MetricValue, MetricValue) {
    let side = |v: &[f64]| mean(v).map_or(MetricValue::Undefined, MetricValue::Value);
    (side(&test.positives), side(&test.negatives))
}

/// Confusion-matrix point estimate from predictive values and side counts.
/// A side with zero count contributes zeros whatever its predictive value.
pub fn cm_from_pv(
    n_pos: usize,
    n_neg: usize,
    ppv: MetricValue,
    npv: MetricValue,
    source: CmSource,
) -> Result<ConfusionMatrix> {
    fn side(n: usize, pv: MetricValue, what: &str) -> Result<f64> {
        if n == 0 {
            return Ok(0.0);
        }
        match pv {
            MetricValue::Value(v) if (0.0..=1.0).contains(&v) => Ok(n as f64 * v),
            MetricValue::Value(v) => Err(Error::Invalid(format!("{what} estimate {v} outside [0, 1]"))),
            _ => Err(Error::Invalid(format!(
                "{what} estimate undefined with {n} predictions"
            ))),
        }
    }
    let tp = side(n_pos, ppv, "PPV")?;
    let tn = side(n_neg, npv, "NPV")?;
    Ok(ConfusionMatrix {
        tp,
        fp: n_pos as f64 - tp,
        tn,
        fn_: n_neg as f64 - tn,
        source,
    })
}

/// CBPE on a test split: confusion matrix from the per-side mean confidences.
pub fn cbpe(test: &PredictionSplit) -> Result<EstimationResult> {
    if test.is_empty() {
        return Err(Error::EmptySet);
    }
    let (ppv, npv) = cbpe_pv(test);
    let cm = cm_from_pv(test.n_pos(), test.n_neg(), ppv, npv, CmSource::Cbpe)?;
    Ok(EstimationResult::from_cm(
        Method::Cbpe,
        cm,
        MethodDetail::Cbpe { ppv, npv },
    ))
}

/// Learns a threshold on `confidences` so that the fraction strictly above it
/// matches `target`: with the values ascending and `k = round(n * (1 - target))`
/// the threshold is the k-th smallest value, or the all-pass sentinel when
/// `k = 0`.
pub fn learn_atc_threshold(confidences: &[f64], target: f64, side: Side) -> Result<AtcThreshold> {
    if confidences.is_empty() {
        return Err(Error::EmptySide(side));
    }
    let mut sorted = confidences.to_vec();
    sorted.sort_by(f64::total_cmp);
    threshold_from_sorted(&sorted, target, side)
}

fn threshold_from_sorted(sorted: &[f64], target: f64, side: Side) -> Result<AtcThreshold> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Invalid(format!("ATC target {target} outside [0, 1]")));
    }
    let n = sorted.len();
    let k = order_statistic_rank(n, target);
    if k == 0 {
        return Ok(AtcThreshold {
            value: ATC_ALL_PASS,
            side,
            target,
            achieved: 1.0,
            ties: 0,
        });
    }
    let value = sorted[k - 1];
    let above = n - sorted.partition_point(|&x| x <= value);
    let equal = sorted.partition_point(|&x| x <= value) - sorted.partition_point(|&x| x < value);
    Ok(AtcThreshold {
        value,
        side,
        target,
        achieved: above as f64 / n as f64,
        ties: equal - 1,
    })
}

#[inline]
fn order_statistic_rank(n: usize, target: f64) -> usize {
    ((n as f64 * (1.0 - target)).round() as usize).min(n)
}

/// Fraction of `confidences` strictly above the learned threshold.
pub fn atc_estimate(confidences: &[f64], th: &AtcThreshold) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::EmptySide(th.side));
    }
    let above = confidences.iter().filter(|&&c| c > th.value).count();
    Ok(above as f64 / confidences.len() as f64)
}

/// DoC: `base_metric - (mean(val) - mean(test))`, clipped to [0, 1].
pub fn doc_estimate(base_metric: f64, val: &[f64], test: &[f64]) -> Result<DocEstimate> {
    let (Some(mv), Some(mt)) = (mean(val), mean(test)) else {
        return Err(Error::Invalid(
            "DoC needs non-empty validation and test confidences".into(),
        ));
    };
    let raw = base_metric - (mv - mt);
    let (value, clipped) = clip_unit(raw);
    Ok(DocEstimate { value, raw, clipped })
}

/// Realized PPV / NPV and per-side counts of a labelled validation split.
struct ValidationSides {
    tp: usize,
    tn: usize,
    n_pos: usize,
    n_neg: usize,
}

impl ValidationSides {
    fn from_split(val: &PredictionSplit) -> Result<Self> {
        let (Some(lp), Some(ln)) = (&val.labels_pos, &val.labels_neg) else {
            return Err(Error::Unlabelled);
        };
        if lp.is_empty() {
            return Err(Error::EmptySide(Side::Positive));
        }
        if ln.is_empty() {
            return Err(Error::EmptySide(Side::Negative));
        }
        Ok(Self {
            tp: lp.iter().filter(|&&y| y).count(),
            tn: ln.iter().filter(|&&y| !y).count(),
            n_pos: lp.len(),
            n_neg: ln.len(),
        })
    }

    fn ppv(&self) -> f64 {
        self.tp as f64 / self.n_pos as f64
    }

    fn npv(&self) -> f64 {
        self.tn as f64 / self.n_neg as f64
    }
}

/// CM-ATC: per-side thresholds learned so the validation fraction above them
/// equals validation PPV (positive side) and NPV (negative side).
pub fn cm_atc(val: &PredictionSplit, test: &PredictionSplit) -> Result<EstimationResult> {
    let v = ValidationSides::from_split(val)?;
    let positive = learn_atc_threshold(&val.positives, v.ppv(), Side::Positive)?;
    let negative = learn_atc_threshold(&val.negatives, v.npv(), Side::Negative)?;
    let side_estimate = |c: &[f64], th: &AtcThreshold| -> Result<MetricValue> {
        if c.is_empty() {
            Ok(MetricValue::Undefined)
        } else {
            atc_estimate(c, th).map(MetricValue::Value)
        }
    };
    let ppv = side_estimate(&test.positives, &positive)?;
    let npv = side_estimate(&test.negatives, &negative)?;
    let cm = cm_from_pv(test.n_pos(), test.n_neg(), ppv, npv, CmSource::CmAtc)?;
    Ok(EstimationResult::from_cm(
        Method::CmAtc,
        cm,
        MethodDetail::CmAtc { positive, negative },
    ))
}

/// One side of a CM-DoC estimate: the estimated correct count and whether the
/// predictive value was clipped.
///
/// Unclipped, the count is `n_test * (correct_val / n_val - delta)`, evaluated
/// as `correct_val * n_test / n_val - n_test * delta` so that identical
/// validation and test sides reproduce the validation count bit for bit.
fn doc_side_count(correct_val: usize, n_val: usize, n_test: usize, delta: f64) -> (f64, bool) {
    let base = correct_val as f64 / n_val as f64;
    let (pv, clipped) = clip_unit(base - delta);
    if clipped {
        (n_test as f64 * pv, true)
    } else {
        let count = correct_val as f64 * n_test as f64 / n_val as f64 - n_test as f64 * delta;
        (count.clamp(0.0, n_test as f64), false)
    }
}

/// CM-DoC: per-side offsets between mean validation and mean test confidence
/// re-centre validation PPV and NPV.
pub fn cm_doc(val: &PredictionSplit, test: &PredictionSplit) -> Result<EstimationResult> {
    let v = ValidationSides::from_split(val)?;
    if test.positives.is_empty() {
        return Err(Error::EmptySide(Side::Positive));
    }
    if test.negatives.is_empty() {
        return Err(Error::EmptySide(Side::Negative));
    }
    let delta_pos = mean(&val.positives).unwrap() - mean(&test.positives).unwrap();
    let delta_neg = mean(&val.negatives).unwrap() - mean(&test.negatives).unwrap();
    let (tp, clip_pos) = doc_side_count(v.tp, v.n_pos, test.n_pos(), delta_pos);
    let (tn, clip_neg) = doc_side_count(v.tn, v.n_neg, test.n_neg(), delta_neg);
    let cm = ConfusionMatrix {
        tp,
        fp: test.n_pos() as f64 - tp,
        tn,
        fn_: test.n_neg() as f64 - tn,
        source: CmSource::CmDoc,
    };
    let mut result = EstimationResult::from_cm(
        Method::CmDoc,
        cm,
        MethodDetail::CmDoc {
            positive: DocOffset {
                delta: delta_pos,
                side: Side::Positive,
                base_metric: v.ppv(),
            },
            negative: DocOffset {
                delta: delta_neg,
                side: Side::Negative,
                base_metric: v.npv(),
            },
        },
    );
    if clip_pos {
        result.clipped.insert(Metric::Ppv);
    }
    if clip_neg {
        result.clipped.insert(Metric::Npv);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveMethod {
    Atc,
    Doc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveEstimate {
    pub value: f64,
    pub clipped: bool,
    pub threshold: Option<AtcThreshold>,
}

/// Original ATC / DoC with accuracy replaced by `metric`: one global threshold
/// or offset over all predicted-class confidences.
pub fn naive_estimate(method: NaiveMethod, metric: Metric, val: &ScoreSet, test: &ScoreSet) -> Result<NaiveEstimate> {
    let val_split = split_predictions(val)?;
    let test_split = split_predictions(test)?;
    let val_metrics = counting_metrics(&realized_confusion_matrix(val)?);
    naive_from_parts(method, metric, &val_metrics, &val_split, &test_split)
}

fn naive_from_parts(
    method: NaiveMethod,
    metric: Metric,
    val_metrics: &MetricReport,
    val: &PredictionSplit,
    test: &PredictionSplit,
) -> Result<NaiveEstimate> {
    if !metric.is_counting() {
        return Err(Error::Invalid(format!("naive estimators do not support {metric}")));
    }
    let base = val_metrics
        .value(metric)
        .ok_or_else(|| Error::UndefinedValidationMetric(metric.to_string()))?;
    let val_conf = val.all_confidences();
    let test_conf = test.all_confidences();
    match method {
        NaiveMethod::Atc => {
            let th = learn_atc_threshold(&val_conf, base, Side::Global)?;
            Ok(NaiveEstimate {
                value: atc_estimate(&test_conf, &th)?,
                clipped: false,
                threshold: Some(th),
            })
        }
        NaiveMethod::Doc => {
            let d = doc_estimate(base, &val_conf, &test_conf)?;
            Ok(NaiveEstimate {
                value: d.value,
                clipped: d.clipped,
                threshold: None,
            })
        }
    }
}

fn naive_all(
    method: NaiveMethod,
    val_metrics: &MetricReport,
    val: &PredictionSplit,
    test: &PredictionSplit,
) -> EstimationResult {
    let tag = match method {
        NaiveMethod::Atc => Method::NaiveAtc,
        NaiveMethod::Doc => Method::NaiveDoc,
    };
    let mut result = EstimationResult {
        method: tag,
        cm: None,
        metrics: MetricReport::new(),
        clipped: BTreeSet::new(),
        detail: None,
        notes: Vec::new(),
    };
    let mut thresholds = BTreeMap::new();
    for metric in Metric::COUNTING {
        match naive_from_parts(method, metric, val_metrics, val, test) {
            Ok(est) => {
                result.metrics.set(metric, MetricValue::Value(est.value));
                if est.clipped {
                    result.clipped.insert(metric);
                }
                if let Some(th) = est.threshold {
                    thresholds.insert(metric, th);
                }
            }
            Err(e) => {
                result.metrics.set(metric, MetricValue::Undefined);
                result.notes.push(format!("{metric}: {e}"));
            }
        }
    }
    result.metrics.set(Metric::Auc, MetricValue::Unsupported);
    if method == NaiveMethod::Atc {
        result.detail = Some(MethodDetail::Naive { thresholds });
    }
    result
}

/// Scores of one set sorted ascending with prefix sums, so that splitting at
/// any threshold and every per-side statistic the CM estimators need costs
/// O(log n).
struct ThresholdIndex {
    sorted: Vec<f64>,
    /// `score_prefix[i]` = sum of `sorted[..i]`.
    score_prefix: Vec<f64>,
    /// `pos_prefix[i]` = positive labels among `sorted[..i]`, when labelled.
    pos_prefix: Option<Vec<usize>>,
}

/// One side of a split viewed through a [`ThresholdIndex`].
struct SideView {
    n: usize,
    sum: f64,
    correct: usize,
}

impl ThresholdIndex {
    fn new(set: &ScoreSet) -> Self {
        let mut pairs: Vec<(f64, Option<bool>)> = set.records().iter().map(|r| (r.raw_score, r.label)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let labelled = set.labelled();
        let mut score_prefix = Vec::with_capacity(pairs.len() + 1);
        let mut pos_prefix = Vec::with_capacity(pairs.len() + 1);
        let (mut s, mut p) = (0.0, 0usize);
        score_prefix.push(0.0);
        pos_prefix.push(0);
        for &(score, label) in &pairs {
            s += score;
            p += usize::from(label == Some(true));
            score_prefix.push(s);
            pos_prefix.push(p);
        }
        Self {
            sorted: pairs.into_iter().map(|(s, _)| s).collect(),
            score_prefix,
            pos_prefix: labelled.then_some(pos_prefix),
        }
    }

    fn len(&self) -> usize {
        self.sorted.len()
    }

    /// First index whose score is a positive prediction at `t`.
    fn cut(&self, t: f64) -> usize {
        self.sorted.partition_point(|&x| x < t)
    }

    fn positive(&self, cut: usize) -> SideView {
        let n = self.len() - cut;
        SideView {
            n,
            sum: self.score_prefix[self.len()] - self.score_prefix[cut],
            correct: self.pos_prefix.as_ref().map_or(0, |p| p[self.len()] - p[cut]),
        }
    }

    fn negative(&self, cut: usize) -> SideView {
        SideView {
            n: cut,
            sum: cut as f64 - self.score_prefix[cut],
            correct: self.pos_prefix.as_ref().map_or(0, |p| cut - p[cut]),
        }
    }

    /// ATC threshold learned on the positive side confidences `sorted[cut..]`.
    fn positive_threshold(&self, cut: usize, target: f64) -> f64 {
        let side = &self.sorted[cut..];
        match order_statistic_rank(side.len(), target) {
            0 => ATC_ALL_PASS,
            k => side[k - 1],
        }
    }

    /// ATC threshold on the negative side confidences `1 - sorted[..cut]`,
    /// whose ascending order is `sorted[..cut]` reversed.
    fn negative_threshold(&self, cut: usize, target: f64) -> f64 {
        match order_statistic_rank(cut, target) {
            0 => ATC_ALL_PASS,
            k => 1.0 - self.sorted[cut - k],
        }
    }

    fn positive_above(&self, cut: usize, th: f64) -> usize {
        let first_above = self.sorted.partition_point(|&x| x <= th).max(cut);
        self.len() - first_above
    }

    fn negative_above(&self, cut: usize, th: f64) -> usize {
        // 1 - x is non-increasing in x, so the passing values form a prefix
        self.sorted[..cut].partition_point(|&x| 1.0 - x > th)
    }
}

/// Confusion matrix estimate at the index thresholds used for AUC. Returns
/// `None` where the method's preconditions fail at this threshold.
fn cm_at_threshold(method: Method, val: &ThresholdIndex, test: &ThresholdIndex, t: f64) -> Option<ConfusionMatrix> {
    let tc = test.cut(t);
    let (tpos, tneg) = (test.positive(tc), test.negative(tc));
    match method {
        Method::Cbpe => {
            let ppv = if tpos.n > 0 {
                MetricValue::Value(tpos.sum / tpos.n as f64)
            } else {
                MetricValue::Undefined
            };
            let npv = if tneg.n > 0 {
                MetricValue::Value(tneg.sum / tneg.n as f64)
            } else {
                MetricValue::Undefined
            };
            cm_from_pv(tpos.n, tneg.n, ppv, npv, CmSource::Cbpe).ok()
        }
        Method::CmAtc => {
            let vc = val.cut(t);
            let (vpos, vneg) = (val.positive(vc), val.negative(vc));
            if vpos.n == 0 || vneg.n == 0 {
                return None;
            }
            let th_pos = val.positive_threshold(vc, vpos.correct as f64 / vpos.n as f64);
            let th_neg = val.negative_threshold(vc, vneg.correct as f64 / vneg.n as f64);
            let ppv = MetricValue::from_ratio(test.positive_above(tc, th_pos) as f64, tpos.n as f64);
            let npv = MetricValue::from_ratio(test.negative_above(tc, th_neg) as f64, tneg.n as f64);
            cm_from_pv(tpos.n, tneg.n, ppv, npv, CmSource::CmAtc).ok()
        }
        Method::CmDoc => {
            let vc = val.cut(t);
            let (vpos, vneg) = (val.positive(vc), val.negative(vc));
            if vpos.n == 0 || vneg.n == 0 || tpos.n == 0 || tneg.n == 0 {
                return None;
            }
            let dp = vpos.sum / vpos.n as f64 - tpos.sum / tpos.n as f64;
            let dn = vneg.sum / vneg.n as f64 - tneg.sum / tneg.n as f64;
            let (tp, _) = doc_side_count(vpos.correct, vpos.n, tpos.n, dp);
            let (tn, _) = doc_side_count(vneg.correct, vneg.n, tneg.n, dn);
            Some(ConfusionMatrix {
                tp,
                fp: tpos.n as f64 - tp,
                tn,
                fn_: tneg.n as f64 - tn,
                source: CmSource::CmDoc,
            })
        }
        Method::NaiveAtc | Method::NaiveDoc => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub value: f64,
    pub clipped: bool,
    /// ROC points contributed by quantile thresholds (endpoints excluded).
    pub points: usize,
    /// Quantile thresholds skipped because TPR or FPR was undefined.
    pub skipped: usize,
}

/// AUC estimate for a confusion-matrix method. Thresholds are the 100 interior
/// quantiles `j/101` of the test raw scores; validation and test are re-split
/// at each and the method re-run, thresholds with undefined TPR or FPR are
/// skipped, and the ROC curve is integrated with the trapezoidal rule.
pub fn estimate_auc(method: Method, val: &ScoreSet, test: &ScoreSet) -> Result<AucEstimate> {
    if !method.estimates_cm() {
        return Err(Error::Invalid(format!("{method} does not estimate AUC")));
    }
    if test.is_empty() {
        return Err(Error::EmptySet);
    }
    if method != Method::Cbpe && !val.labelled() {
        return Err(Error::Unlabelled);
    }
    let val_index = ThresholdIndex::new(val);
    let test_index = ThresholdIndex::new(test);
    let thresholds: Vec<f64> = (1..=ROC_QUANTILES)
        .map(|j| quantile_sorted(&test_index.sorted, j as f64 / (ROC_QUANTILES + 1) as f64))
        .collect();

    // collected in threshold order regardless of evaluation order
    let points: Vec<Option<(f64, f64)>> = thresholds
        .par_iter()
        .map(|&t| {
            let cm = cm_at_threshold(method, &val_index, &test_index, t)?;
            let tpr = MetricValue::from_ratio(cm.tp, cm.tp + cm.fn_).value()?;
            let fpr = MetricValue::from_ratio(cm.fp, cm.fp + cm.tn).value()?;
            Some((fpr, tpr))
        })
        .collect();
    let valid: Vec<(f64, f64)> = points.iter().flatten().copied().collect();
    if valid.len() < 2 {
        return Err(Error::AucUnsupported);
    }
    let (value, clipped) = clip_unit(trapezoid_roc(valid.clone()));
    Ok(AucEstimate {
        value,
        clipped,
        points: valid.len(),
        skipped: points.len() - valid.len(),
    })
}

/// A method that failed outright in [`estimate_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateAll {
    pub results: Vec<EstimationResult>,
    pub failures: Vec<MethodFailure>,
}

impl EstimateAll {
    pub fn get(&self, method: Method) -> Option<&EstimationResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

/// Runs every requested method on every metric it supports. Methods run in
/// [`Method`] order; a method that fails is reported in `failures` without
/// stopping the others.
pub fn estimate_all(methods: &[Method], val: &ScoreSet, test: &ScoreSet) -> Result<EstimateAll> {
    let methods: BTreeSet<Method> = methods.iter().copied().collect();
    let mut out = EstimateAll::default();
    if methods.is_empty() {
        return Ok(out);
    }
    if !val.labelled() {
        return Err(Error::Unlabelled);
    }
    let val_split = split_predictions(val)?;
    let test_split = split_predictions(test)?;
    let val_metrics = counting_metrics(&realized_confusion_matrix(val)?);

    for method in methods {
        let outcome = match method {
            Method::Cbpe => cbpe(&test_split),
            Method::CmAtc => cm_atc(&val_split, &test_split),
            Method::CmDoc => cm_doc(&val_split, &test_split),
            Method::NaiveAtc => Ok(naive_all(NaiveMethod::Atc, &val_metrics, &val_split, &test_split)),
            Method::NaiveDoc => Ok(naive_all(NaiveMethod::Doc, &val_metrics, &val_split, &test_split)),
        };
        match outcome {
            Ok(mut result) => {
                if method.estimates_cm() {
                    match estimate_auc(method, val, test) {
                        Ok(auc) => {
                            result.metrics.set(Metric::Auc, MetricValue::Value(auc.value));
                            if auc.clipped {
                                result.clipped.insert(Metric::Auc);
                            }
                        }
                        Err(e) => {
                            result.metrics.set(Metric::Auc, MetricValue::Undefined);
                            result.notes.push(format!("auc: {e}"));
                        }
                    }
                }
                out.results.push(result);
            }
            Err(e) => out.failures.push(MethodFailure {
                method,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::realized::{realized_auc, AucMethod};
    use proptest::prelude::*;

    fn split(scores: &[f64], labels: Option<&[bool]>) -> PredictionSplit {
        split_predictions(&ScoreSet::from_scores(scores, labels, 0.5).unwrap()).unwrap()
    }

    fn labelled(scores: &[f64], labels: &[bool]) -> ScoreSet {
        ScoreSet::from_scores(scores, Some(labels), 0.5).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn cbpe_accuracy_examples() {
        assert!(close(cbpe_accuracy(&split(&[0.9, 0.2, 0.7], None)).unwrap(), 0.8));
        assert_eq!(cbpe_accuracy(&split(&[1.0, 1.0], None)).unwrap(), 1.0);
        assert_eq!(cbpe_accuracy(&split(&[0.5], None)).unwrap(), 0.5);
    }

    #[test]
    fn cbpe_pv_examples() {
        let (ppv, _) = cbpe_pv(&split(&[0.8, 0.6], None));
        assert!(close(ppv.value().unwrap(), 0.7));
        let (_, npv) = cbpe_pv(&split(&[0.1, 0.1, 0.4], None));
        assert!(close(npv.value().unwrap(), 0.8));
        let (ppv, _) = cbpe_pv(&split(&[0.1], None));
        assert_eq!(ppv, MetricValue::Undefined);
        let r = cbpe(&split(&[0.1], None)).unwrap();
        let cm = r.cm.unwrap();
        assert_eq!((cm.tp, cm.fp), (0.0, 0.0));
    }

    #[test]
    fn cm_from_pv_examples() {
        let cm = cm_from_pv(10, 5, MetricValue::Value(0.8), MetricValue::Value(0.6), CmSource::Cbpe).unwrap();
        assert!(close(cm.tp, 8.0) && close(cm.fp, 2.0) && close(cm.tn, 3.0) && close(cm.fn_, 2.0));
        let cm = cm_from_pv(7, 3, MetricValue::Value(1.0), MetricValue::Value(1.0), CmSource::Cbpe).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0.0, 0.0));
        let cm = cm_from_pv(0, 3, MetricValue::Undefined, MetricValue::Value(0.5), CmSource::Cbpe).unwrap();
        assert_eq!((cm.tp, cm.fp), (0.0, 0.0));
        assert!(cm_from_pv(2, 3, MetricValue::Value(1.2), MetricValue::Value(0.5), CmSource::Cbpe).is_err());
        assert!(cm_from_pv(2, 3, MetricValue::Undefined, MetricValue::Value(0.5), CmSource::Cbpe).is_err());
    }

    #[test]
    fn atc_threshold_examples() {
        let c = [0.6, 0.7, 0.8, 0.9];
        let th = learn_atc_threshold(&c, 0.75, Side::Global).unwrap();
        assert_eq!(th.value, 0.6);
        assert_eq!(th.achieved, 0.75);
        let th = learn_atc_threshold(&c, 1.0, Side::Global).unwrap();
        assert_eq!(th.value, ATC_ALL_PASS);
        assert_eq!(atc_estimate(&c, &th).unwrap(), 1.0);
        let th = learn_atc_threshold(&c, 0.5, Side::Global).unwrap();
        assert_eq!(th.value, 0.7);
        assert_eq!(th.achieved, 0.5);
        assert_eq!(th.ties, 0);
        assert!(learn_atc_threshold(&[], 0.5, Side::Global).is_err());
        assert!(learn_atc_threshold(&c, 1.5, Side::Global).is_err());
    }

    #[test]
    fn atc_threshold_reports_ties() {
        let th = learn_atc_threshold(&[0.7, 0.7, 0.7, 0.9], 0.75, Side::Global).unwrap();
        assert_eq!(th.value, 0.7);
        assert_eq!(th.ties, 2);
        assert_eq!(th.achieved, 0.25);
    }

    #[test]
    fn atc_estimate_examples() {
        let th = |v| AtcThreshold {
            value: v,
            side: Side::Global,
            target: 0.5,
            achieved: 0.5,
            ties: 0,
        };
        assert!(close(atc_estimate(&[0.65, 0.55, 0.95], &th(0.6)).unwrap(), 2.0 / 3.0));
        assert_eq!(atc_estimate(&[0.65, 0.55], &th(ATC_ALL_PASS)).unwrap(), 1.0);
        assert_eq!(atc_estimate(&[0.6, 0.6], &th(0.6)).unwrap(), 0.0);
        assert!(atc_estimate(&[], &th(0.6)).is_err());
    }

    #[test]
    fn doc_estimate_examples() {
        // mean val 0.85, mean test 0.80
        let d = doc_estimate(0.9, &[0.8, 0.9], &[0.75, 0.85]).unwrap();
        assert!(close(d.value, 0.85) && !d.clipped);
        let d = doc_estimate(0.63, &[0.6, 0.7], &[0.7, 0.6]).unwrap();
        assert_eq!(d.value, 0.63);
        let d = doc_estimate(0.1, &[0.9], &[0.6]).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.clipped && d.raw < 0.0);
        assert!(doc_estimate(0.5, &[], &[0.6]).is_err());
    }

    #[test]
    fn cm_atc_worked_example() {
        // I+_val = [0.6,0.7,0.8,0.9] with labels giving PPV 0.75; I-_val any
        let val = split(
            &[0.6, 0.7, 0.8, 0.9, 0.2, 0.1],
            Some(&[false, true, true, true, false, false]),
        );
        let test = split(&[0.65, 0.5, 0.3], None);
        let r = cm_atc(&val, &test).unwrap();
        let Some(MethodDetail::CmAtc { positive, .. }) = r.detail else {
            panic!()
        };
        assert_eq!(positive.value, 0.6);
        assert_eq!(r.metrics.value(Metric::Ppv), Some(0.5));
        let cm = r.cm.unwrap();
        assert_eq!((cm.tp, cm.fp), (1.0, 1.0));
    }

    #[test]
    fn cm_atc_perfect_val_ppv_passes_everything() {
        let val = split(&[0.6, 0.9, 0.2], Some(&[true, true, false]));
        let test = split(&[0.51, 0.55, 0.1], None);
        let r = cm_atc(&val, &test).unwrap();
        assert_eq!(r.metrics.value(Metric::Ppv), Some(1.0));
    }

    #[test]
    fn cm_atc_errors_on_empty_validation_side() {
        let val = split(&[0.6, 0.9], Some(&[true, false]));
        let test = split(&[0.6, 0.2], None);
        assert!(matches!(cm_atc(&val, &test), Err(Error::EmptySide(Side::Negative))));
        let test_one_side = split(&[0.2], None);
        let val = split(&[0.6, 0.3], Some(&[true, false]));
        let r = cm_atc(&val, &test_one_side).unwrap();
        assert_eq!(r.metrics.get(Metric::Ppv), MetricValue::Undefined);
    }

    #[test]
    fn cm_doc_worked_example() {
        // PPV_val = 0.8 with mean I+_val = 0.75; mean I+_test = 0.7
        let val = split(
            &[0.75, 0.75, 0.75, 0.75, 0.75, 0.2],
            Some(&[true, true, true, true, false, false]),
        );
        let test = split(&[0.7, 0.7, 0.3], None);
        let r = cm_doc(&val, &test).unwrap();
        let ppv = r.metrics.value(Metric::Ppv).unwrap();
        assert!((ppv - 0.75).abs() < 1e-12, "{ppv}");
        assert!(r.clipped.is_empty());
    }

    #[test]
    fn cm_doc_clips_and_errors() {
        // PPV_val = 0.2 and delta+ = 0.5
        let val = split(
            &[0.9, 0.9, 0.9, 0.9, 0.9, 0.1],
            Some(&[true, false, false, false, false, false]),
        );
        let test = split(&[0.6, 0.4], None);
        let r = cm_doc(&val, &test).unwrap();
        assert_eq!(r.metrics.value(Metric::Ppv), Some(0.0));
        assert!(r.clipped.contains(&Metric::Ppv));
        let test = split(&[0.6], None);
        assert!(matches!(cm_doc(&val, &test), Err(Error::EmptySide(Side::Negative))));
    }

    #[test]
    fn cm_doc_val_equals_test_exact() {
        let scores = [0.91, 0.77, 0.64, 0.52, 0.49, 0.33, 0.12, 0.71, 0.58];
        let labels = [true, true, false, true, true, false, false, false, true];
        let s = split(&scores, Some(&labels));
        let r = cm_doc(&s, &s).unwrap();
        let realized = counting_metrics(&realized_confusion_matrix(&labelled(&scores, &labels)).unwrap());
        for m in Metric::COUNTING {
            assert_eq!(r.metrics.get(m), realized.get(m), "{m}");
        }
    }

    #[test]
    fn naive_examples() {
        let scores = [0.91, 0.77, 0.64, 0.52, 0.49, 0.33, 0.12, 0.71];
        let labels = [true, true, false, true, true, false, false, false];
        let s = labelled(&scores, &labels);
        let realized = counting_metrics(&realized_confusion_matrix(&s).unwrap());
        let d = naive_estimate(NaiveMethod::Doc, Metric::Recall, &s, &s).unwrap();
        assert_eq!(Some(d.value), realized.value(Metric::Recall));

        // confidences [0.6,0.7,0.8,0.9]; tp=1 (0.6), fn=1 (0.1) -> recall 0.5
        let val = labelled(&[0.6, 0.7, 0.8, 0.1], &[true, false, false, true]);
        let rm = counting_metrics(&realized_confusion_matrix(&val).unwrap());
        assert_eq!(rm.value(Metric::Recall), Some(0.5));
        let test = ScoreSet::from_scores(&[0.75, 0.35], None, 0.5).unwrap();
        let e = naive_estimate(NaiveMethod::Atc, Metric::Recall, &val, &test).unwrap();
        assert_eq!(e.threshold.unwrap().value, 0.7);
        assert_eq!(e.value, 0.5);
        assert!(naive_estimate(NaiveMethod::Atc, Metric::Auc, &val, &test).is_err());
    }

    #[test]
    fn naive_atc_accuracy_is_original_atc() {
        let val = labelled(&[0.6, 0.7, 0.8, 0.1, 0.45], &[true, false, false, true, false]);
        let test = ScoreSet::from_scores(&[0.75, 0.35, 0.95, 0.15], None, 0.5).unwrap();
        let acc = counting_metrics(&realized_confusion_matrix(&val).unwrap())
            .value(Metric::Accuracy)
            .unwrap();
        let th = learn_atc_threshold(&split_predictions(&val).unwrap().all_confidences(), acc, Side::Global).unwrap();
        let original = atc_estimate(&split_predictions(&test).unwrap().all_confidences(), &th).unwrap();
        let naive = naive_estimate(NaiveMethod::Atc, Metric::Accuracy, &val, &test).unwrap();
        assert_eq!(naive.value.to_bits(), original.to_bits());
    }

    #[test]
    fn naive_undefined_validation_metric() {
        // no positive predictions on validation -> PPV undefined
        let val = labelled(&[0.1, 0.2], &[true, false]);
        let test = ScoreSet::from_scores(&[0.3], None, 0.5).unwrap();
        assert!(matches!(
            naive_estimate(NaiveMethod::Doc, Metric::Ppv, &val, &test),
            Err(Error::UndefinedValidationMetric(_))
        ));
    }

    #[test]
    fn auc_perfect_separation() {
        let scores: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let labels: Vec<bool> = scores.iter().map(|&s| s == 1.0).collect();
        let s = labelled(&scores, &labels);
        for m in [Method::Cbpe, Method::CmAtc, Method::CmDoc] {
            let a = estimate_auc(m, &s, &s).unwrap();
            assert_eq!(a.value, 1.0, "{m}");
        }
        assert!(estimate_auc(Method::NaiveAtc, &s, &s).is_err());
    }

    #[test]
    fn auc_unsupported_when_degenerate() {
        // every test quantile leaves the validation negative side empty
        let val = labelled(&[0.9, 0.95], &[true, false]);
        let test = ScoreSet::from_scores(&[0.1, 0.2, 0.3], None, 0.5).unwrap();
        assert!(matches!(
            estimate_auc(Method::CmAtc, &val, &test),
            Err(Error::AucUnsupported)
        ));
        assert!(matches!(
            estimate_auc(Method::CmDoc, &val, &test),
            Err(Error::AucUnsupported)
        ));
    }

    #[test]
    fn estimate_all_composition() {
        let scores = [0.91, 0.77, 0.64, 0.52, 0.49, 0.33, 0.12, 0.71, 0.05, 0.95];
        let labels = [true, true, false, true, true, false, false, false, false, true];
        let s = labelled(&scores, &labels);
        let r = estimate_all(&[Method::Cbpe], &s, &s).unwrap();
        assert_eq!(r.results.len(), 1);
        assert!(r.results[0].cm.is_some());
        for m in Metric::ALL {
            assert!(matches!(r.results[0].metrics.get(m), MetricValue::Value(_)), "{m}");
        }
        let r = estimate_all(&[Method::NaiveAtc, Method::CmDoc], &s, &s).unwrap();
        assert_eq!(
            r.get(Method::NaiveAtc).unwrap().metrics.get(Metric::Auc),
            MetricValue::Unsupported
        );
        assert!(estimate_all(&[], &s, &s).unwrap().results.is_empty());
    }

    #[test]
    fn estimate_all_collects_failures() {
        let val = labelled(&[0.6, 0.9, 0.7], &[true, true, false]);
        let test = ScoreSet::from_scores(&[0.3, 0.8], None, 0.5).unwrap();
        let r = estimate_all(&Method::ALL, &val, &test).unwrap();
        let failed: Vec<Method> = r.failures.iter().map(|f| f.method).collect();
        assert_eq!(failed, vec![Method::CmAtc, Method::CmDoc]);
        assert_eq!(r.results.len(), 3);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!(
            Method::parse_list("atc, cm-doc").unwrap(),
            vec![Method::NaiveAtc, Method::CmDoc]
        );
    }

    /// Per-threshold route through the public estimators, kept independent of
    /// the prefix-sum index used by `estimate_auc`.
    fn reference_auc(method: Method, val: &ScoreSet, test: &ScoreSet) -> Option<f64> {
        let q = crate::realized::quantile_thresholds(&test.raw_scores(), ROC_QUANTILES);
        let pts: Vec<(f64, f64)> = q
            .iter()
            .filter_map(|&t| {
                let v = split_predictions(&val.with_threshold(t).unwrap()).unwrap();
                let te = split_predictions(&test.with_threshold(t).unwrap()).unwrap();
                let r = match method {
                    Method::Cbpe => cbpe(&te),
                    Method::CmAtc => cm_atc(&v, &te),
                    Method::CmDoc => cm_doc(&v, &te),
                    _ => unreachable!(),
                }
                .ok()?;
                let cm = r.cm?;
                Some((
                    MetricValue::from_ratio(cm.fp, cm.fp + cm.tn).value()?,
                    MetricValue::from_ratio(cm.tp, cm.tp + cm.fn_).value()?,
                ))
            })
            .collect();
        (pts.len() >= 2).then(|| trapezoid_roc(pts).clamp(0.0, 1.0))
    }

    fn val_test() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
        (4usize..60, 2usize..60).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(0.0f64..=1.0, n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(0.0f64..=1.0, m),
            )
        })
    }

    proptest! {
        #[test]
        fn indexed_auc_matches_reference((vs, vl, ts) in val_test()) {
            let val = labelled(&vs, &vl);
            let test = ScoreSet::from_scores(&ts, None, 0.5).unwrap();
            for m in [Method::Cbpe, Method::CmAtc, Method::CmDoc] {
                let fast = estimate_auc(m, &val, &test).ok().map(|a| a.value);
                let slow = reference_auc(m, &val, &test);
                match (fast, slow) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{} {} {}", m, a, b),
                    (None, None) => {}
                    other => prop_assert!(false, "{}: {:?}", m, other),
                }
            }
        }

        #[test]
        fn cm_doc_auc_equals_realized_quantile_auc_when_test_is_val((vs, vl, _ts) in val_test()) {
            prop_assume!(vl.iter().any(|&y| y) && vl.iter().any(|&y| !y));
            let s = labelled(&vs, &vl);
            if let Ok(est) = estimate_auc(Method::CmDoc, &s, &s) {
                let realized = realized_auc(&s, AucMethod::Quantile100).unwrap();
                prop_assert!((est.value - realized).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_invariance((vs, vl, ts) in val_test(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..ts.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<f64> = perm.iter().map(|&i| ts[i]).collect();
            let val = labelled(&vs, &vl);
            let a = ScoreSet::from_scores(&ts, None, 0.5).unwrap();
            let b = ScoreSet::from_scores(&shuffled, None, 0.5).unwrap();
            let ra = estimate_all(&Method::ALL, &val, &a).unwrap();
            let rb = estimate_all(&Method::ALL, &val, &b).unwrap();
            prop_assert_eq!(ra.failures.len(), rb.failures.len());
            for (x, y) in ra.results.iter().zip(&rb.results) {
                for m in Metric::ALL {
                    match (x.metrics.get(m), y.metrics.get(m)) {
                        (MetricValue::Value(p), MetricValue::Value(q)) => prop_assert!((p - q).abs() < 1e-9),
                        (p, q) => prop_assert_eq!(p, q),
                    }
                }
            }
        }

        #[test]
        fn atc_monotone_under_upward_shift(
            vals in prop::collection::vec(0.0f64..=1.0, 1..40),
            test in prop::collection::vec(0.0f64..=1.0, 1..40),
            target in 0.0f64..=1.0,
            eps in 0.0f64..0.5,
        ) {
            let th = learn_atc_threshold(&vals, target, Side::Global).unwrap();
            let shifted: Vec<f64> = test.iter().map(|c| (c + eps).min(1.0)).collect();
            prop_assert!(atc_estimate(&shifted, &th).unwrap() >= atc_estimate(&test, &th).unwrap());
        }
    }
}
