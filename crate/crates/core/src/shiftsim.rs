//! Controlled distribution shifts: a synthetic score generator, prevalence
//! resampling, majority/minority group mixing, and the sweep harness that runs
//! every estimator across a shift axis.
//!
//! All randomness flows from explicit seeds. Sweep repetitions draw from a
//! ChaCha8 stream seeded by [`derive_seed`]`(master, level, repetition)`, so a
//! sweep's output does not depend on how repetitions are scheduled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{logit, sigmoid};
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, Method};
use crate::realized::{
    adaptive_calibration_error, realized_report, root_brier_score, Metric, MetricReport, MetricValue, DEFAULT_ACE_BINS,
};
use crate::scores::{ScoreRecord, ScoreSet, DEFAULT_THRESHOLD};

pub const MAJORITY: &str = "majority";
pub const MINORITY: &str = "minority";
pub const DEFAULT_SEED: u64 = 20_250_923;
pub const DEFAULT_REPETITIONS: usize = 50;
pub const DEFAULT_SAMPLE_SIZE: usize = 1000;

/// Distribution of the true conditional `q = P(y = 1 | x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LatentLaw {
    Uniform,
    Beta { a: f64, b: f64 },
}

impl LatentLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            LatentLaw::Uniform => 0.5,
            LatentLaw::Beta { a, b } => a / (a + b),
        }
    }

    fn sampler(&self) -> Result<LatentSampler> {
        match *self {
            LatentLaw::Uniform => Ok(LatentSampler::Uniform),
            LatentLaw::Beta { a, b } => Beta::new(a, b)
                .map(LatentSampler::Beta)
                .map_err(|e| Error::Invalid(format!("beta({a}, {b}): {e}"))),
        }
    }
}

impl fmt::Display for LatentLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatentLaw::Uniform => f.write_str("uniform"),
            LatentLaw::Beta { a, b } => write!(f, "beta({a},{b})"),
        }
    }
}

impl FromStr for LatentLaw {
    type Err = Error;

    /// Accepts `uniform`, `beta(a,b)` and `beta:a,b`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "uniform" {
            return Ok(LatentLaw::Uniform);
        }
        let args = s
            .strip_prefix("beta(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("beta:"))
            .ok_or_else(|| Error::Invalid(format!("unknown latent law {s:?}")))?;
        let parts: Vec<f64> = args
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Invalid(format!("bad beta parameters in {s:?}")))?;
        match parts[..] {
            [a, b] if a > 0.0 && b > 0.0 => Ok(LatentLaw::Beta { a, b }),
            _ => Err(Error::Invalid(format!("beta law needs two positive parameters: {s:?}"))),
        }
    }
}

enum LatentSampler {
    Uniform,
    Beta(Beta<f64>),
}

impl LatentSampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            LatentSampler::Uniform => rng.random::<f64>(),
            LatentSampler::Beta(b) => b.sample(rng),
        }
    }
}

/// Latent law plus score distortion for one population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLaw {
    pub latent: LatentLaw,
    /// Reported score is `sigmoid(distortion * logit(q))`: 1 is calibrated,
    /// above 1 overconfident, below 1 underconfident. Temperature scaling with
    /// `T = distortion` undoes it.
    pub distortion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpecs {
    pub majority: GroupLaw,
    pub minority: GroupLaw,
    pub majority_fraction: f64,
}

impl Default for GroupSpecs {
    /// Stand-in for a shortcut-learning model: a confident, well-separated
    /// majority and a central, overconfident minority.
    fn default() -> Self {
        Self {
            majority: GroupLaw {
                latent: LatentLaw::Beta { a: 0.5, b: 0.5 },
                distortion: 1.0,
            },
            minority: GroupLaw {
                latent: LatentLaw::Beta { a: 5.0, b: 5.0 },
                distortion: 2.0,
            },
            majority_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    /// Target prevalence. `None` leaves it to the latent law's mean; `Some`
    /// fixes the positive count at `round(n * prevalence)` by class-quota
    /// rejection.
    pub prevalence: Option<f64>,
    pub latent: LatentLaw,
    pub distortion: f64,
    pub groups: Option<GroupSpecs>,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            prevalence: None,
            latent: LatentLaw::Uniform,
            distortion: 1.0,
            groups: None,
            threshold: DEFAULT_THRESHOLD,
            seed: DEFAULT_SEED,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("generator needs n >= 1".into()));
        }
        if let Some(p) = self.prevalence {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Invalid(format!("prevalence {p} outside (0, 1)")));
            }
        }
        let laws: Vec<GroupLaw> = match &self.groups {
            None => vec![GroupLaw {
                latent: self.latent,
                distortion: self.distortion,
            }],
            Some(g) => {
                if !(0.0..=1.0).contains(&g.majority_fraction) {
                    return Err(Error::Invalid(format!(
                        "majority fraction {} outside [0, 1]",
                        g.majority_fraction
                    )));
                }
                vec![g.majority, g.minority]
            }
        };
        for law in laws {
            if !(law.distortion > 0.0 && law.distortion.is_finite()) {
                return Err(Error::Invalid(format!(
                    "distortion {} must be positive",
                    law.distortion
                )));
            }
            law.latent.sampler()?;
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let groups = || GroupSpecs::default();
        match key {
            "n" => self.n = parse(key, value)?,
            "prevalence" => {
                self.prevalence = match value.trim() {
                    "" | "none" | "latent" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "latent" => self.latent = value.parse()?,
            "distortion" => self.distortion = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "groups" => {
                self.groups = match value.trim() {
                    "true" | "yes" | "1" | "default" => Some(self.groups.unwrap_or_else(groups)),
                    "false" | "no" | "0" | "none" => None,
                    v => return Err(Error::Invalid(format!("groups: expected true/false, got {v:?}"))),
                }
            }
            "majority_latent" => self.groups.get_or_insert_with(groups).majority.latent = value.parse()?,
            "majority_distortion" => self.groups.get_or_insert_with(groups).majority.distortion = parse(key, value)?,
            "minority_latent" => self.groups.get_or_insert_with(groups).minority.latent = value.parse()?,
            "minority_distortion" => self.groups.get_or_insert_with(groups).minority.distortion = parse(key, value)?,
            "majority_fraction" => self.groups.get_or_insert_with(groups).majority_fraction = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("{key}: cannot parse {value:?}")))
}

fn draw_record<R: Rng>(sampler: &LatentSampler, distortion: f64, rng: &mut R) -> (f64, bool) {
    let q = sampler.sample(rng).clamp(0.0, 1.0);
    let y = rng.random::<f64>() < q;
    let score = if distortion == 1.0 {
        q
    } else {
        sigmoid(distortion * logit(q))
    };
    (score, y)
}

fn generate_group<R: Rng>(law: &GroupLaw, n: usize, prevalence: Option<f64>, rng: &mut R) -> Result<Vec<(f64, bool)>> {
    let sampler = law.latent.sampler()?;
    let Some(p) = prevalence else {
        return Ok((0..n).map(|_| draw_record(&sampler, law.distortion, rng)).collect());
    };
    let mut pos_left = (n as f64 * p).round() as usize;
    let mut neg_left = n - pos_left;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pos_left + neg_left > 0 {
        if attempts >= 10 * n {
            return Err(Error::Sampling(format!(
                "prevalence {p} unreachable with {} within {} draws",
                law.latent,
                10 * n
            )));
        }
        attempts += 1;
        let (s, y) = draw_record(&sampler, law.distortion, rng);
        let left = if y { &mut pos_left } else { &mut neg_left };
        if *left > 0 {
            *left -= 1;
            out.push((s, y));
        }
    }
    Ok(out)
}

/// Draws a labelled synthetic score set: `q` from the latent law,
/// `y ~ Bernoulli(q)`, reported score `sigmoid(distortion * logit(q))`.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<ScoreSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.n);
    let mut push = |rows: Vec<(f64, bool)>, group: Option<&str>| {
        for (s, y) in rows {
            let mut r = ScoreRecord::new(format!("s{}", records.len()), s, Some(y));
            r.group = group.map(str::to_string);
            records.push(r);
        }
    };
    match &spec.groups {
        None => {
            let law = GroupLaw {
                latent: spec.latent,
                distortion: spec.distortion,
            };
            push(generate_group(&law, spec.n, spec.prevalence, &mut rng)?, None);
        }
        Some(g) => {
            let n_major = (spec.n as f64 * g.majority_fraction).round() as usize;
            push(
                generate_group(&g.majority, n_major, spec.prevalence, &mut rng)?,
                Some(MAJORITY),
            );
            push(
                generate_group(&g.minority, spec.n - n_major, spec.prevalence, &mut rng)?,
                Some(MINORITY),
            );
        }
    }
    ScoreSet::new(records, spec.threshold)
}

fn draw_with_replacement<R: Rng>(pool: &[ScoreRecord], k: usize, rng: &mut R, out: &mut Vec<ScoreRecord>) {
    out.extend((0..k).map(|_| pool[rng.random_range(0..pool.len())].clone()));
}

fn class_pools(set: &ScoreSet) -> Result<(Vec<ScoreRecord>, Vec<ScoreRecord>)> {
    let labels = set.labels()?;
    let (pos, neg): (Vec<_>, Vec<_>) = set.records().iter().zip(labels).partition(|(_, y)| *y);
    Ok((
        pos.into_iter().map(|(r, _)| r.clone()).collect(),
        neg.into_iter().map(|(r, _)| r.clone()).collect(),
    ))
}

/// Draws `round(n * target)` positives and the rest negatives, uniformly with
/// replacement from the pool's classes.
pub fn resample_prevalence(pool: &ScoreSet, target: f64, n: usize, seed: u64) -> Result<ScoreSet> {
    if n < 20 {
        return Err(Error::Invalid(format!("resample size {n} below 20")));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Invalid(format!("target prevalence {target} outside [0, 1]")));
    }
    let (pos, neg) = class_pools(pool)?;
    let n_pos = (n as f64 * target).round() as usize;
    let n_neg = n - n_pos;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Sampling(
            "prevalence resampling needs both classes in the pool".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    draw_with_replacement(&pos, n_pos, &mut rng, &mut out);
    draw_with_replacement(&neg, n_neg, &mut rng, &mut out);
    ScoreSet::new(out, pool.threshold())
}

/// Mixes `round(n * majority_fraction)` majority records with minority records,
/// stratified by class inside each group so the combined positive count is
/// `round(n * reference_prevalence)`. Sampling is with replacement.
pub fn mix_groups(
    majority: &ScoreSet,
    minority: &ScoreSet,
    majority_fraction: f64,
    reference_prevalence: f64,
    n: usize,
    seed: u64,
) -> Result<ScoreSet> {
    if !(0.0..=1.0).contains(&majority_fraction) {
        return Err(Error::Invalid(format!(
            "majority fraction {majority_fraction} outside [0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&reference_prevalence) {
        return Err(Error::Invalid(format!(
            "reference prevalence {reference_prevalence} outside [0, 1]"
        )));
    }
    let n_major = (n as f64 * majority_fraction).round() as usize;
    let n_minor = n - n_major;
    let total_pos = (n as f64 * reference_prevalence).round() as usize;
    let major_pos = ((n_major as f64 * reference_prevalence).round() as usize).min(n_major);
    let minor_pos = total_pos.saturating_sub(major_pos).min(n_minor);
    // rounding can leave the minority short when it is tiny; rebalance
    let major_pos = (total_pos - minor_pos).min(n_major);

    let (maj_p, maj_n) = class_pools(majority)?;
    let (min_p, min_n) = class_pools(minority)?;
    let need = [
        (major_pos, &maj_p, "majority positives"),
        (n_major - major_pos, &maj_n, "majority negatives"),
        (minor_pos, &min_p, "minority positives"),
        (n_minor - minor_pos, &min_n, "minority negatives"),
    ];
    for (k, pool, what) in need {
        if k > 0 && pool.is_empty() {
            return Err(Error::Sampling(format!(
                "stratified mix needs {k} {what} but the pool has none"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for (k, pool, _) in need {
        draw_with_replacement(pool, k, &mut rng, &mut out);
    }
    ScoreSet::new(out, majority.threshold())
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one sweep repetition:
/// `mix64(mix64(mix64(master) ^ level) ^ repetition)`.
pub fn derive_seed(master: u64, level: usize, repetition: usize) -> u64 {
    mix64(mix64(mix64(master) ^ level as u64) ^ repetition as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Prevalence,
    Covariate,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "prevalence" | "label" => Ok(SweepKind::Prevalence),
            "covariate" => Ok(SweepKind::Covariate),
            other => Err(Error::Invalid(format!("unknown sweep kind {other:?}"))),
        }
    }
}

impl SweepKind {
    /// Prevalence 0.05..=0.95 step 0.05, majority fraction 0..=1 step 0.1.
    pub fn default_axis(self) -> Vec<f64> {
        match self {
            SweepKind::Prevalence => (1..=19).map(|i| i as f64 / 20.0).collect(),
            SweepKind::Covariate => (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub axis: Vec<f64>,
    pub repetitions: usize,
    pub n: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub ace_bins: usize,
}

impl SweepConfig {
    pub fn new(kind: SweepKind) -> Self {
        Self {
            kind,
            axis: kind.default_axis(),
            repetitions: DEFAULT_REPETITIONS,
            n: DEFAULT_SAMPLE_SIZE,
            seed: DEFAULT_SEED,
            methods: Method::ALL.to_vec(),
            ace_bins: DEFAULT_ACE_BINS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis.is_empty() {
            return Err(Error::Invalid("sweep axis is empty".into()));
        }
        if self.axis.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("sweep axis must be strictly increasing".into()));
        }
        if self.axis.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("sweep axis values must lie in [0, 1]".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Invalid("sweep needs at least one repetition".into()));
        }
        if self.n < self.ace_bins {
            return Err(Error::Invalid(format!(
                "sample size {} below ACE bin count {}",
                self.n, self.ace_bins
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "kind" => {
                let kind: SweepKind = value.parse()?;
                if kind != self.kind {
                    self.axis = kind.default_axis();
                }
                self.kind = kind;
            }
            "levels" | "axis" => self.axis = parse_axis(value)?,
            "repetitions" | "reps" => self.repetitions = parse(key, value)?,
            "n" | "sample_size" => self.n = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "methods" => self.methods = Method::parse_list(value)?,
            "ace_bins" => self.ace_bins = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parses `a,b,c` or a range `start:stop:step` (inclusive of `stop` within
/// half a step).
pub fn parse_axis(value: &str) -> Result<Vec<f64>> {
    let v = value.trim();
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() == 3 {
        let [start, stop, step]: [f64; 3] = [
            parse("levels", parts[0])?,
            parse("levels", parts[1])?,
            parse("levels", parts[2])?,
        ];
        if step <= 0.0 || stop < start {
            return Err(Error::Invalid(format!("bad axis range {v:?}")));
        }
        let count = ((stop - start) / step + 0.5).floor() as usize;
        // snap to a 1e-12 grid so that 0.1 * 3 prints as 0.3
        return Ok((0..=count)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect());
    }
    v.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse("levels", p))
        .collect()
}

/// Test-set sources for a sweep.
#[derive(Debug, Clone)]
pub enum SweepPools {
    Prevalence {
        pool: ScoreSet,
    },
    Covariate {
        majority: ScoreSet,
        minority: ScoreSet,
        reference_prevalence: f64,
    },
}

impl SweepPools {
    fn kind(&self) -> SweepKind {
        match self {
            SweepPools::Prevalence { .. } => SweepKind::Prevalence,
            SweepPools::Covariate { .. } => SweepKind::Covariate,
        }
    }

    fn construct(&self, level: f64, n: usize, seed: u64) -> Result<ScoreSet> {
        match self {
            SweepPools::Prevalence { pool } => resample_prevalence(pool, level, n, seed),
            SweepPools::Covariate {
                majority,
                minority,
                reference_prevalence,
            } => mix_groups(majority, minority, level, *reference_prevalence, n, seed),
        }
    }
}

/// Default size of each synthetic pool a sweep resamples from.
pub const DEFAULT_POOL_SIZE: usize = 20_000;

/// Synthetic sweep inputs drawn from `spec`: the validation set itself plus
/// pools of `pool_size` records. A prevalence sweep resamples one pool drawn
/// from the same law; a covariate sweep mixes one pool per group law (the
/// spec's groups, or [`GroupSpecs::default`]) at the validation prevalence.
pub fn synthetic_inputs(kind: SweepKind, spec: &GeneratorSpec, pool_size: usize) -> Result<(ScoreSet, SweepPools)> {
    let pool_spec = |n, seed, law: Option<GroupLaw>| {
        let mut s = spec.clone();
        s.n = n;
        s.seed = seed;
        if let Some(law) = law {
            s.groups = None;
            s.latent = law.latent;
            s.distortion = law.distortion;
        }
        s
    };
    match kind {
        SweepKind::Prevalence => {
            let val = generate_synthetic(spec)?;
            let pool = generate_synthetic(&pool_spec(pool_size, derive_seed(spec.seed, usize::MAX, 0), None))?;
            Ok((val, SweepPools::Prevalence { pool }))
        }
        SweepKind::Covariate => {
            let groups = spec.groups.unwrap_or_default();
            let val = generate_synthetic(&GeneratorSpec {
                groups: Some(groups),
                ..spec.clone()
            })?;
            let majority = generate_synthetic(&pool_spec(
                pool_size,
                derive_seed(spec.seed, usize::MAX, 1),
                Some(groups.majority),
            ))?;
            let minority = generate_synthetic(&pool_spec(
                pool_size,
                derive_seed(spec.seed, usize::MAX, 2),
                Some(groups.minority),
            ))?;
            let reference_prevalence = val.prevalence()?;
            Ok((
                val,
                SweepPools::Covariate {
                    majority,
                    minority,
                    reference_prevalence,
                },
            ))
        }
    }
}

/// One (realized, estimated) metric pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub level_index: Option<usize>,
    pub level: Option<f64>,
    pub repetition: Option<usize>,
    pub method: Method,
    pub metric: Metric,
    pub realized: MetricValue,
    pub estimated: MetricValue,
}

/// Mean of the defined values and how many there were.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub mean: MetricValue,
    pub defined: usize,
}

fn average(values: impl Iterator<Item = MetricValue>) -> Averaged {
    let (mut sum, mut defined, mut unsupported, mut total) = (0.0, 0usize, 0usize, 0usize);
    for v in values {
        total += 1;
        match v {
            MetricValue::Value(x) => {
                sum += x;
                defined += 1;
            }
            MetricValue::Unsupported => unsupported += 1,
            MetricValue::Undefined => {}
        }
    }
    let mean = if defined > 0 {
        MetricValue::Value(sum / defined as f64)
    } else if total > 0 && unsupported == total {
        MetricValue::Unsupported
    } else {
        MetricValue::Undefined
    };
    Averaged { mean, defined }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: f64,
    pub realized: BTreeMap<Metric, Averaged>,
    pub estimated: BTreeMap<Method, BTreeMap<Metric, Averaged>>,
    pub rbs: f64,
    pub ace: f64,
}

impl LevelSummary {
    pub fn realized_mean(&self, metric: Metric) -> Option<f64> {
        self.realized.get(&metric)?.mean.value()
    }

    pub fn estimated_mean(&self, method: Method, metric: Metric) -> Option<f64> {
        self.estimated.get(&method)?.get(&metric)?.mean.value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub axis: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    pub repetitions: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Every per-repetition pair, ordered by (level, repetition, method, metric).
    pub pairs: Vec<MetricPair>,
}

struct Repetition {
    realized: MetricReport,
    estimated: BTreeMap<Method, MetricReport>,
    rbs: f64,
    ace: f64,
}

fn run_repetition(
    config: &SweepConfig,
    val: &ScoreSet,
    pools: &SweepPools,
    level: f64,
    seed: u64,
) -> Result<Repetition> {
    let test = pools.construct(level, config.n, seed)?;
    let realized = realized_report(&test)?;
    let rbs = root_brier_score(&test)?;
    let ace = adaptive_calibration_error(&test, config.ace_bins)?;
    let all = estimate_all(&config.methods, val, &test)?;
    let mut estimated = BTreeMap::new();
    for r in all.results {
        estimated.insert(r.method, r.metrics);
    }
    for f in all.failures {
        let mut undefined = MetricReport::new();
        for m in Metric::ALL {
            let v = if m.is_counting() || f.method.estimates_cm() {
                MetricValue::Undefined
            } else {
                MetricValue::Unsupported
            };
            undefined.set(m, v);
        }
        estimated.insert(f.method, undefined);
    }
    Ok(Repetition {
        realized,
        estimated,
        rbs,
        ace,
    })
}

/// Runs the sweep: for every axis level and repetition a test set is built
/// from the pools, every method is estimated against `val`, and realized and
/// estimated metrics are averaged per level. Repetitions run in parallel;
/// results are reduced in (level, repetition) order.
pub fn run_sweep(config: &SweepConfig, val: &ScoreSet, pools: &SweepPools) -> Result<SweepResult> {
    config.validate()?;
    if pools.kind() != config.kind {
        return Err(Error::Invalid(format!(
            "sweep kind {:?} does not match the supplied pools",
            config.kind
        )));
    }
    if !val.labelled() {
        return Err(Error::Unlabelled);
    }
    let methods: Vec<Method> = {
        let mut m = config.methods.clone();
        m.sort();
        m.dedup();
        m
    };
    let reps = config.repetitions;
    let jobs: Vec<(usize, usize)> = (0..config.axis.len())
        .flat_map(|l| (0..reps).map(move |r| (l, r)))
        .collect();
    let outcomes: Vec<Result<Repetition>> = jobs
        .par_iter()
        .map(|&(l, r)| {
            run_repetition(config, val, pools, config.axis[l], derive_seed(config.seed, l, r)).map_err(|e| {
                Error::Sweep {
                    level: l,
                    repetition: r,
                    source: Box::new(e),
                }
            })
        })
        .collect();
    let outcomes: Vec<Repetition> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut levels = Vec::with_capacity(config.axis.len());
    let mut pairs = Vec::new();
    for (l, chunk) in outcomes.chunks(reps).enumerate() {
        let level = config.axis[l];
        let realized = Metric::ALL
            .iter()
            .map(|&m| (m, average(chunk.iter().map(|r| r.realized.get(m)))))
            .collect();
        let estimated = methods
            .iter()
            .map(|&method| {
                let per_metric = Metric::ALL
                    .iter()
                    .map(|&m| {
                        (
                            m,
                            average(
                                chunk
                                    .iter()
                                    .map(|r| r.estimated.get(&method).map_or(MetricValue::Undefined, |e| e.get(m))),
                            ),
                        )
                    })
                    .collect();
                (method, per_metric)
            })
            .collect();
        let rbs = chunk.iter().map(|r| r.rbs).sum::<f64>() / reps as f64;
        let ace = chunk.iter().map(|r| r.ace).sum::<f64>() / reps as f64;
        for (rep, outcome) in chunk.iter().enumerate() {
            for &method in &methods {
                for m in Metric::ALL {
                    pairs.push(MetricPair {
                        level_index: Some(l),
                        level: Some(level),
                        repetition: Some(rep),
                        method,
                        metric: m,
                        realized: outcome.realized.get(m),
                        estimated: outcome
                            .estimated
                            .get(&method)
                            .map_or(MetricValue::Undefined, |e| e.get(m)),
                    });
                }
            }
        }
        levels.push(LevelSummary {
            level,
            realized,
            estimated,
            rbs,
            ace,
        });
    }
    Ok(SweepResult {
        kind: config.kind,
        axis: config.axis.clone(),
        levels,
        repetitions: reps,
        seed: config.seed,
        methods,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Method,
    Metric,
    Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub method: Option<Method>,
    pub metric: Option<Metric>,
    pub level: Option<f64>,
    /// `None` when the group has no pair with both values defined.
    pub mae: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

/// Mean absolute error between estimated and realized values, grouped by the
/// given keys and sorted by them. Pairs where either side is undefined are
/// counted separately; unsupported estimates are skipped.
pub fn mae_report(pairs: &[MetricPair], group_by: &[GroupKey]) -> Result<Vec<MaeRow>> {
    type Key = (Option<Method>, Option<Metric>, Option<usize>);
    let has = |k: GroupKey| group_by.contains(&k);
    let mut groups: BTreeMap<Key, (f64, usize, usize, Option<f64>)> = BTreeMap::new();
    for p in pairs {
        if p.estimated == MetricValue::Unsupported || p.realized == MetricValue::Unsupported {
            continue;
        }
        let key = (
            has(GroupKey::Method).then_some(p.method),
            has(GroupKey::Metric).then_some(p.metric),
            if has(GroupKey::Level) { p.level_index } else { None },
        );
        let g = groups.entry(key).or_insert((0.0, 0, 0, None));
        if has(GroupKey::Level) {
            g.3 = p.level;
        }
        match (p.realized, p.estimated) {
            (MetricValue::Value(r), MetricValue::Value(e)) => {
                g.0 += (e - r).abs();
                g.1 += 1;
            }
            _ => g.2 += 1,
        }
    }
    if groups.values().all(|g| g.1 == 0) {
        return Err(Error::Invalid("no pair with both values defined".into()));
    }
    Ok(groups
        .into_iter()
        .map(|((method, metric, _), (sum, defined, undefined, level))| MaeRow {
            method,
            metric,
            level,
            mae: (defined > 0).then(|| sum / defined as f64),
            defined,
            undefined,
        })
        .collect())
}

/// Pairs a realized report with each method's estimates (one test set).
pub fn pair_reports(realized: &MetricReport, estimated: &[(Method, MetricReport)]) -> Vec<MetricPair> {
    estimated
        .iter()
        .flat_map(|(method, est)| {
            Metric::ALL.iter().map(move |&m| MetricPair {
                level_index: None,
                level: None,
                repetition: None,
                method: *method,
                metric: m,
                realized: realized.get(m),
                estimated: est.get(m),
            })
        })
        .collect()
}
