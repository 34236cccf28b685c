//! The five subcommands. Each returns its output files as `(name, contents)`
//! pairs; nothing touches the output directory until [`write_outputs`].

use std::path::Path;

use perfest::calibration::score_nll;
use perfest::report::{confusion_csv, estimates_csv, mae_csv, realized_csv, sweep_csv, sweep_summary_csv};
use perfest::shiftsim::{pair_reports, MAJORITY, MINORITY};
use perfest::{
    adaptive_calibration_error, apply_temperature, counting_metrics, estimate_all, fit_temperature, generate_synthetic,
    load_scores, mae_report, realized_auc, realized_confusion_matrix, realized_report, root_brier_score, run_sweep,
    synthetic_inputs, EstimateAll, GroupKey, Metric, MetricReport, MetricValue, ScoreFormat, ScoreSet, SweepKind,
    SweepPools, TemperatureFit,
};

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::manifest::{self, Manifest};

pub type Outputs = Vec<(String, String)>;

/// Validates the config and runs its subcommand. The manifest is always the
/// last output.
pub fn run(config: &RunConfig) -> Result<Outputs, CliError> {
    config.validate()?;
    let mut files = match config.command {
        Command::Estimate => estimate(config)?,
        Command::Simulate => simulate(config)?,
        Command::Generate => generate(config)?,
        Command::Calibrate => calibrate(config)?,
        Command::Evaluate => evaluate(config)?,
    };
    files.push((manifest::FILE_NAME.to_string(), Manifest::new(config).to_json()?));
    Ok(files)
}

/// Writes every output into `out`, creating the directory if needed.
pub fn write_outputs(out: &Path, files: &Outputs) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::write(out, e))?;
    for (name, contents) in files {
        let path = out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::write(&path, e))?;
    }
    Ok(())
}

fn load(config: &RunConfig, path: &Path) -> Result<ScoreSet, CliError> {
    let format = config.format.unwrap_or_else(|| ScoreFormat::from_path(path));
    Ok(load_scores(path, format, config.threshold)?)
}

fn load_labelled(config: &RunConfig, path: &Path, key: &str) -> Result<ScoreSet, CliError> {
    let set = load(config, path)?;
    if !set.labelled() {
        return Err(CliError::validation(format!(
            "{key}: {} must carry a label on every record",
            path.display()
        )));
    }
    Ok(set)
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// The temperature fit to apply, if any: a saved fit wins over fitting anew.
fn resolve_calibration(config: &RunConfig, val: Option<&ScoreSet>) -> Result<Option<TemperatureFit>, CliError> {
    if let Some(path) = &config.calibration_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("calibration_file {}: {e}", path.display())))?;
        return Ok(Some(TemperatureFit::from_json(&text)?));
    }
    match (config.calibration.mode(), val) {
        (Some(mode), Some(val)) => Ok(Some(fit_temperature(val, mode)?)),
        (Some(_), None) => Err(CliError::validation(format!(
            "{}: fitting a calibration needs --val; pass --calibration-file instead",
            config.command
        ))),
        (None, _) => Ok(None),
    }
}

fn calibrated(set: ScoreSet, fit: Option<&TemperatureFit>) -> ScoreSet {
    match fit {
        Some(f) => apply_temperature(&set, f),
        None => set,
    }
}

fn undefined_report(method: perfest::Method) -> MetricReport {
    let mut r = MetricReport::new();
    for m in Metric::ALL {
        let v = if m.is_counting() || method.estimates_cm() {
            MetricValue::Undefined
        } else {
            MetricValue::Unsupported
        };
        r.set(m, v);
    }
    r
}

fn estimate(config: &RunConfig) -> Result<Outputs, CliError> {
    let val = load_labelled(config, config.val.as_deref().unwrap(), "val")?;
    let test = load(config, config.test.as_deref().unwrap())?;
    let fit = resolve_calibration(config, Some(&val))?;
    let val = calibrated(val, fit.as_ref());
    let test = calibrated(test, fit.as_ref());

    let all = estimate_all(&config.methods, &val, &test)?;
    let mut files = vec![
        ("estimates.csv".to_string(), estimates_csv(&all, &config.metrics)?),
        ("estimates.json".to_string(), json(&all)?),
    ];
    let mut cms: Vec<_> = all.results.iter().filter_map(|r| r.cm).collect();
    if test.labelled() {
        cms.insert(0, realized_confusion_matrix(&test)?);
    }
    files.push(("confusion.csv".to_string(), confusion_csv(&cms)?));

    if test.labelled() {
        let realized = realized_report(&test)?;
        let rbs = root_brier_score(&test)?;
        let ace = adaptive_calibration_error(&test, config.ace_bins)?;
        files.push(("realized.csv".to_string(), realized_csv(&realized, rbs, ace)?));
        files.push(("mae.csv".to_string(), mae_table(&realized, &all, &config.metrics)?));
    }
    if let Some(fit) = fit {
        files.push(("calibration.json".to_string(), fit.to_json()? + "\n"));
    }
    Ok(files)
}

fn mae_table(realized: &MetricReport, all: &EstimateAll, metrics: &[Metric]) -> Result<String, CliError> {
    let mut estimated: Vec<_> = all.results.iter().map(|r| (r.method, r.metrics.clone())).collect();
    estimated.extend(all.failures.iter().map(|f| (f.method, undefined_report(f.method))));
    let pairs: Vec<_> = pair_reports(realized, &estimated)
        .into_iter()
        .filter(|p| metrics.contains(&p.metric))
        .collect();
    let rows = mae_report(&pairs, &[GroupKey::Method, GroupKey::Metric])?;
    Ok(mae_csv(&rows)?)
}

fn file_pools(config: &RunConfig, val: &ScoreSet) -> Result<SweepPools, CliError> {
    match config.sweep.kind {
        SweepKind::Prevalence => Ok(SweepPools::Prevalence {
            pool: load_labelled(config, config.pool.as_deref().unwrap(), "pool")?,
        }),
        SweepKind::Covariate => {
            let (majority, minority) = match (&config.majority_pool, &config.minority_pool) {
                (Some(maj), Some(min)) => (
                    load_labelled(config, maj, "majority_pool")?,
                    load_labelled(config, min, "minority_pool")?,
                ),
                _ => {
                    let pool = load_labelled(config, config.pool.as_deref().unwrap(), "pool")?;
                    (pool.filter_group(MAJORITY), pool.filter_group(MINORITY))
                }
            };
            for (set, name) in [(&majority, MAJORITY), (&minority, MINORITY)] {
                if set.is_empty() {
                    return Err(CliError::validation(format!(
                        "covariate sweep: no {name} records in the pools"
                    )));
                }
            }
            Ok(SweepPools::Covariate {
                majority,
                minority,
                reference_prevalence: val.prevalence()?,
            })
        }
    }
}

fn simulate(config: &RunConfig) -> Result<Outputs, CliError> {
    let sweep = config.sweep_config();
    let (val, pools) = match &config.val {
        Some(path) => {
            let val = load_labelled(config, path, "val")?;
            let pools = file_pools(config, &val)?;
            (val, pools)
        }
        None => synthetic_inputs(config.sweep.kind, &config.generator, config.sweep.pool_size)?,
    };
    let fit = resolve_calibration(config, Some(&val))?;
    let (val, pools) = match &fit {
        None => (val, pools),
        Some(f) => {
            let pools = match pools {
                SweepPools::Prevalence { pool } => SweepPools::Prevalence {
                    pool: apply_temperature(&pool, f),
                },
                SweepPools::Covariate {
                    majority,
                    minority,
                    reference_prevalence,
                } => SweepPools::Covariate {
                    majority: apply_temperature(&majority, f),
                    minority: apply_temperature(&minority, f),
                    reference_prevalence,
                },
            };
            (apply_temperature(&val, f), pools)
        }
    };
    let result = run_sweep(&sweep, &val, &pools)?;
    let mut files = vec![
        ("sweep.csv".to_string(), sweep_csv(&result, &config.metrics)?),
        (
            "sweep_summary.csv".to_string(),
            sweep_summary_csv(&result, &config.metrics)?,
        ),
    ];
    if let Some(fit) = fit {
        files.push(("calibration.json".to_string(), fit.to_json()? + "\n"));
    }
    Ok(files)
}

fn generate(config: &RunConfig) -> Result<Outputs, CliError> {
    let set = generate_synthetic(&config.generator)?;
    let mut buf = Vec::new();
    set.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| CliError::internal(e.to_string()))?;
    Ok(vec![("scores.csv".to_string(), text)])
}

fn calibration_row(name: &str, before: &ScoreSet, after: &ScoreSet, bins: usize) -> Result<Vec<String>, CliError> {
    Ok(vec![
        name.to_string(),
        before.len().to_string(),
        score_nll(before)?.to_string(),
        score_nll(after)?.to_string(),
        root_brier_score(before)?.to_string(),
        root_brier_score(after)?.to_string(),
        adaptive_calibration_error(before, bins)?.to_string(),
        adaptive_calibration_error(after, bins)?.to_string(),
    ])
}

fn calibrate(config: &RunConfig) -> Result<Outputs, CliError> {
    let val = load_labelled(config, config.val.as_deref().unwrap(), "val")?;
    let mode = config.calibration.mode().expect("validated");
    let fit = fit_temperature(&val, mode)?;
    let fit_json = fit.to_json()? + "\n";
    let mut rows = vec![calibration_row(
        "val",
        &val,
        &apply_temperature(&val, &fit),
        config.ace_bins,
    )?];
    let mut files = vec![("calibration.json".to_string(), fit_json.clone())];
    if let Some(path) = &config.test {
        let test = load(config, path)?;
        let scaled = apply_temperature(&test, &fit);
        if test.labelled() {
            rows.push(calibration_row("test", &test, &scaled, config.ace_bins)?);
        }
        let mut buf = Vec::new();
        scaled.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| CliError::internal(e.to_string()))?;
        files.push(("calibrated_test.csv".to_string(), text));
    }
    let mut w = Vec::new();
    w.push(
        [
            "set",
            "n",
            "nll_before",
            "nll_after",
            "rbs_before",
            "rbs_after",
            "ace_before",
            "ace_after",
        ]
        .join(","),
    );
    w.extend(rows.into_iter().map(|r| r.join(",")));
    files.push(("calibration.csv".to_string(), w.join("\n") + "\n"));
    if let Some(path) = &config.calibration_file {
        std::fs::write(path, &fit_json).map_err(|e| CliError::write(path, e))?;
    }
    Ok(files)
}

fn evaluate(config: &RunConfig) -> Result<Outputs, CliError> {
    let test = load_labelled(config, config.test.as_deref().unwrap(), "test")?;
    let fit = resolve_calibration(config, None)?;
    let test = calibrated(test, fit.as_ref());
    let cm = realized_confusion_matrix(&test)?;
    let mut report = counting_metrics(&cm);
    let auc = match realized_auc(&test, config.auc_method) {
        Ok(v) => MetricValue::Value(v),
        Err(perfest::Error::AucUndefined) => MetricValue::Undefined,
        Err(e) => return Err(e.into()),
    };
    report.set(Metric::Auc, auc);
    let rbs = root_brier_score(&test)?;
    let ace = adaptive_calibration_error(&test, config.ace_bins)?;
    Ok(vec![
        ("realized.csv".to_string(), realized_csv(&report, rbs, ace)?),
        ("confusion.csv".to_string(), confusion_csv(&[cm])?),
    ])
}
