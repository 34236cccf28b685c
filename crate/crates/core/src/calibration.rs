//! Temperature scaling of raw sigmoid scores, either with one global
//! temperature or with one temperature per predicted side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{ScoreRecord, ScoreSet};

/// Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before taking logits.
pub const SCORE_EPS: f64 = 1e-7;
pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
const T_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureMode {
    Global,
    /// One temperature for records predicted positive, one for negative.
    Classwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Temperature {
    Global { t: f64 },
    Classwise { positive: f64, negative: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    /// Mean binary NLL on the fitting set before and after scaling.
    pub nll_before: f64,
    pub nll_after: f64,
}

impl TemperatureFit {
    pub fn mode(&self) -> TemperatureMode {
        match self.temperature {
            Temperature::Global { .. } => TemperatureMode::Global,
            Temperature::Classwise { .. } => TemperatureMode::Classwise,
        }
    }

    pub fn identity() -> Self {
        Self {
            temperature: Temperature::Global { t: 1.0 },
            nll_before: 0.0,
            nll_after: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fit: Self = serde_json::from_str(s).map_err(|e| Error::Invalid(format!("calibration file: {e}")))?;
        let ok = match fit.temperature {
            Temperature::Global { t } => t > 0.0,
            Temperature::Classwise { positive, negative } => positive > 0.0 && negative > 0.0,
        };
        if !ok {
            return Err(Error::Invalid("temperatures must be positive".into()));
        }
        Ok(fit)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary NLL of `sigmoid(z / t)` against labels, computed from the
/// logit directly for stability.
fn nll(logits: &[f64], labels: &[bool], t: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let a = z / t;
            // -log sigmoid(a) = softplus(-a); -log(1 - sigmoid(a)) = softplus(a)
            if y {
                softplus(-a)
            } else {
                softplus(a)
            }
        })
        .sum();
    total / logits.len() as f64
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Golden-section minimisation of the NLL over `[T_MIN, T_MAX]`. The unscaled
/// temperature 1 is kept whenever the search does not beat it.
fn fit_one(logits: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    let f = |t: f64| nll(logits, labels, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (T_MIN, T_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > T_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let t = (a + b) / 2.0;
    let before = f(1.0);
    let after = f(t);
    if after <= before {
        (t, before, after)
    } else {
        (1.0, before, before)
    }
}

/// Fits a temperature by minimising binary NLL of `sigmoid(logit(s) / T)`.
/// Classwise mode fits the two predicted sides (split at the set's threshold)
/// independently.
pub fn fit_temperature(val: &ScoreSet, mode: TemperatureMode) -> Result<TemperatureFit> {
    let labels = val.labels()?;
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::Invalid("temperature fit needs both classes".into()));
    }
    let logits: Vec<f64> = val.records().iter().map(|r| logit(r.raw_score)).collect();
    if logits.iter().all(|&z| z == logits[0]) {
        return Err(Error::DegenerateLogits);
    }
    match mode {
        TemperatureMode::Global => {
            let (t, before, after) = fit_one(&logits, &labels);
            Ok(TemperatureFit {
                temperature: Temperature::Global { t },
                nll_before: before,
                nll_after: after,
            })
        }
        TemperatureMode::Classwise => {
            let th = val.threshold();
            let mut sides = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
            for ((r, &z), &y) in val.records().iter().zip(&logits).zip(&labels) {
                let side = &mut sides[usize::from(r.raw_score < th)];
                side.0.push(z);
                side.1.push(y);
            }
            let [(pz, py), (nz, ny)] = sides;
            if pz.is_empty() {
                return Err(Error::EmptySide(crate::error::Side::Positive));
            }
            if nz.is_empty() {
                return Err(Error::EmptySide(crate::error::Side::Negative));
            }
            let (tp, bp, ap) = fit_one(&pz, &py);
            let (tn, bn, an) = fit_one(&nz, &ny);
            let n = labels.len() as f64;
            let w = (pz.len() as f64 / n, nz.len() as f64 / n);
            Ok(TemperatureFit {
                temperature: Temperature::Classwise {
                    positive: tp,
                    negative: tn,
                },
                nll_before: w.0 * bp + w.1 * bn,
                nll_after: w.0 * ap + w.1 * an,
            })
        }
    }
}

fn scale(score: f64, t: f64) -> f64 {
    if t == 1.0 {
        score
    } else {
        sigmoid(logit(score) / t)
    }
}

/// Applies a fitted temperature. Classwise fits choose the temperature by the
/// record's predicted side at the set's own threshold.
pub fn apply_temperature(set: &ScoreSet, fit: &TemperatureFit) -> ScoreSet {
    let th = set.threshold();
    let records: Vec<ScoreRecord> = set
        .records()
        .iter()
        .map(|r| {
            let t = match fit.temperature {
                Temperature::Global { t } => t,
                Temperature::Classwise { positive, negative } => {
                    if r.raw_score >= th {
                        positive
                    } else {
                        negative
                    }
                }
            };
            ScoreRecord {
                raw_score: scale(r.raw_score, t),
                ..r.clone()
            }
        })
        .collect();
    ScoreSet::new(records, th).expect("sigmoid output stays in [0, 1]")
}

/// Mean binary NLL of the raw scores against labels.
pub fn score_nll(set: &ScoreSet) -> Result<f64> {
    let labels = set.labels()?;
    let logits: Vec<f64> = set.records().iter().map(|r| logit(r.raw_score)).collect();
    Ok(nll(&logits, &labels, 1.0))
}
