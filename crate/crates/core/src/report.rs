//! CSV renderings of estimation and sweep outputs. Every table has a header
//! row and a fixed column order; numbers use the shortest round-trip decimal
//! form, so output is byte-stable for a given input.

use crate::error::{Error, Result};
use crate::estimators::EstimateAll;
use crate::realized::{ConfusionMatrix, Metric, MetricReport, MetricValue};
use crate::shiftsim::{mae_report, GroupKey, MaeRow, SweepResult};

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

/// One row per method x metric: `method,metric,estimate,undefined,clipped,note`.
pub fn estimates_csv(all: &EstimateAll, metrics: &[Metric]) -> Result<String> {
    let mut rows = Vec::new();
    for r in &all.results {
        for &m in metrics {
            let v = r.metrics.get(m);
            let note = r
                .notes
                .iter()
                .find(|n| n.starts_with(&format!("{m}:")))
                .cloned()
                .unwrap_or_default();
            rows.push(vec![
                r.method.to_string(),
                m.to_string(),
                v.to_string(),
                v.is_undefined().to_string(),
                r.clipped.contains(&m).to_string(),
                note,
            ]);
        }
    }
    for f in &all.failures {
        for &m in metrics {
            let v = if m.is_counting() || f.method.estimates_cm() {
                MetricValue::Undefined
            } else {
                MetricValue::Unsupported
            };
            rows.push(vec![
                f.method.to_string(),
                m.to_string(),
                v.to_string(),
                v.is_undefined().to_string(),
                "false".into(),
                f.message.clone(),
            ]);
        }
    }
    table(&["method", "metric", "estimate", "undefined", "clipped", "note"], rows)
}

/// `source,tp,fp,tn,fn`.
pub fn confusion_csv(cms: &[ConfusionMatrix]) -> Result<String> {
    table(
        &["source", "tp", "fp", "tn", "fn"],
        cms.iter().map(|c| {
            vec![
                c.source.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
            ]
        }),
    )
}

/// A realized report as one flat row, followed by the calibration diagnostics.
pub fn realized_csv(report: &MetricReport, rbs: f64, ace: f64) -> Result<String> {
    let mut header = MetricReport::csv_header();
    header.extend(["rbs", "ace"]);
    let mut row = report.csv_row();
    row.extend([rbs.to_string(), ace.to_string()]);
    table(&header, [row])
}

/// `method,metric,level,mae,defined,undefined`; absent keys are left empty.
pub fn mae_csv(rows: &[MaeRow]) -> Result<String> {
    table(
        &["method", "metric", "level", "mae", "defined", "undefined"],
        rows.iter().map(|r| {
            vec![
                r.method.map(|m| m.to_string()).unwrap_or_default(),
                r.metric.map(|m| m.to_string()).unwrap_or_default(),
                r.level.map(|l| l.to_string()).unwrap_or_default(),
                opt(r.mae),
                r.defined.to_string(),
                r.undefined.to_string(),
            ]
        }),
    )
}

/// Long-format sweep table:
/// `level,repetition_mean,metric,method,realized,estimated,rbs,ace`.
///
/// `realized` and `estimated` are means over repetitions; `repetition_mean`
/// is the number of repetitions whose estimate entered that mean.
pub fn sweep_csv(sweep: &SweepResult, metrics: &[Metric]) -> Result<String> {
    let mut rows = Vec::new();
    for lvl in &sweep.levels {
        for &m in metrics {
            let realized = lvl.realized[&m].mean;
            for method in &sweep.methods {
                let est = lvl.estimated[method][&m];
                rows.push(vec![
                    lvl.level.to_string(),
                    est.defined.to_string(),
                    m.to_string(),
                    method.to_string(),
                    realized.to_string(),
                    est.mean.to_string(),
                    lvl.rbs.to_string(),
                    lvl.ace.to_string(),
                ]);
            }
        }
    }
    table(
        &[
            "level",
            "repetition_mean",
            "metric",
            "method",
            "realized",
            "estimated",
            "rbs",
            "ace",
        ],
        rows,
    )
}

/// Per-level MAE of every method and metric across repetitions.
pub fn sweep_summary_csv(sweep: &SweepResult, metrics: &[Metric]) -> Result<String> {
    let rows = mae_report(&sweep.pairs, &[GroupKey::Level, GroupKey::Method, GroupKey::Metric])?;
    table(
        &["level", "method", "metric", "mae", "defined", "undefined"],
        rows.iter()
            .filter(|r| r.metric.is_some_and(|m| metrics.contains(&m)))
            .map(|r| {
                vec![
                    r.level.map(|l| l.to_string()).unwrap_or_default(),
                    r.method.map(|m| m.to_string()).unwrap_or_default(),
                    r.metric.map(|m| m.to_string()).unwrap_or_default(),
                    opt(r.mae),
                    r.defined.to_string(),
                    r.undefined.to_string(),
                ]
            }),
    )
}
