//! Run configuration shared by every subcommand.
//!
//! Every setting has one key. The same key is accepted in a `key = value`
//! config file and as a `--key` flag; flags are applied after the file, so
//! they win.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use perfest::keyvalue;
use perfest::realized::DEFAULT_ACE_BINS;
use perfest::shiftsim::{parse_axis, DEFAULT_POOL_SIZE, DEFAULT_REPETITIONS, DEFAULT_SAMPLE_SIZE, DEFAULT_SEED};
use perfest::{AucMethod, GeneratorSpec, Method, Metric, ScoreFormat, SweepConfig, SweepKind, TemperatureMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Estimate,
    Simulate,
    Generate,
    Calibrate,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Simulate => "simulate",
            Command::Generate => "generate",
            Command::Calibrate => "calibrate",
            Command::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    None,
    /// Global temperature scaling.
    Ts,
    /// Class-specific temperature scaling, one temperature per predicted side.
    Csts,
}

impl Calibration {
    pub fn mode(self) -> Option<TemperatureMode> {
        match self {
            Calibration::None => None,
            Calibration::Ts => Some(TemperatureMode::Global),
            Calibration::Csts => Some(TemperatureMode::Classwise),
        }
    }
}

impl FromStr for Calibration {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "off" => Ok(Calibration::None),
            "ts" | "global" => Ok(Calibration::Ts),
            "csts" | "classwise" => Ok(Calibration::Csts),
            other => Err(CliError::validation(format!(
                "calibration: expected none, ts or csts, got {other:?}"
            ))),
        }
    }
}

/// Sweep settings; the remaining sweep inputs (seed, methods, ACE bins) are
/// shared with the other subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub kind: SweepKind,
    /// `None` uses the kind's default axis.
    pub levels: Option<Vec<f64>>,
    pub repetitions: usize,
    pub sample_size: usize,
    /// Size of each generated pool when the sweep is generator-backed.
    pub pool_size: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            kind: SweepKind::Prevalence,
            levels: None,
            repetitions: DEFAULT_REPETITIONS,
            sample_size: DEFAULT_SAMPLE_SIZE,
            pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Prevalence sweep pool, or a group-tagged pool for a covariate sweep.
    pub pool: Option<PathBuf>,
    pub majority_pool: Option<PathBuf>,
    pub minority_pool: Option<PathBuf>,
    /// Input format; `None` picks by file extension.
    pub format: Option<ScoreFormat>,
    pub threshold: f64,
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    pub calibration: Calibration,
    pub calibration_file: Option<PathBuf>,
    pub ace_bins: usize,
    /// Realized AUC method used by `evaluate`.
    pub auc_method: AucMethod,
    pub seed: u64,
    pub sweep: SweepParams,
    pub generator: GeneratorSpec,
    /// Output directory. Not recorded in the manifest, so a re-run into a
    /// different directory yields an identical manifest.
    #[serde(skip, default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("perfest-out")
}

/// Every key accepted by [`RunConfig::set`], for help text and error messages.
pub const KEYS: &[&str] = &[
    "val",
    "test",
    "pool",
    "majority_pool",
    "minority_pool",
    "format",
    "threshold",
    "methods",
    "metrics",
    "calibration",
    "calibration_file",
    "ace_bins",
    "auc_method",
    "seed",
    "out",
    "kind",
    "levels",
    "repetitions",
    "sample_size",
    "pool_size",
    "n",
    "prevalence",
    "latent",
    "distortion",
    "groups",
    "majority_latent",
    "majority_distortion",
    "minority_latent",
    "minority_distortion",
    "majority_fraction",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::validation(format!("{key}: cannot parse {value:?}")))
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            val: None,
            test: None,
            pool: None,
            majority_pool: None,
            minority_pool: None,
            format: None,
            threshold: perfest::scores::DEFAULT_THRESHOLD,
            methods: Method::ALL.to_vec(),
            metrics: Metric::ALL.to_vec(),
            calibration: Calibration::None,
            calibration_file: None,
            ace_bins: DEFAULT_ACE_BINS,
            auc_method: AucMethod::RankExact,
            seed: DEFAULT_SEED,
            sweep: SweepParams::default(),
            generator: GeneratorSpec::default(),
            out: default_out(),
        }
    }

    /// Applies one setting. Keys are normalised like config-file keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let key = key.as_str();
        match key {
            "val" => self.val = path(value),
            "test" => self.test = path(value),
            "pool" => self.pool = path(value),
            "majority_pool" => self.majority_pool = path(value),
            "minority_pool" => self.minority_pool = path(value),
            "format" => {
                self.format = match value.trim().to_ascii_lowercase().as_str() {
                    "" | "auto" => None,
                    "csv" => Some(ScoreFormat::Csv),
                    "jsonl" | "ndjson" => Some(ScoreFormat::Jsonl),
                    other => return Err(CliError::validation(format!("format: unknown format {other:?}"))),
                }
            }
            "threshold" => {
                self.threshold = parse(key, value)?;
                self.generator.threshold = self.threshold;
            }
            "methods" => {
                self.methods = Method::parse_list(value)?;
                if self.methods.is_empty() {
                    return Err(CliError::validation("methods: at least one method is required"));
                }
            }
            "metrics" => {
                self.metrics = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<Metric>())
                    .collect::<Result<_, _>>()?;
                if self.metrics.is_empty() {
                    return Err(CliError::validation("metrics: at least one metric is required"));
                }
                self.metrics.sort();
                self.metrics.dedup();
            }
            "calibration" => self.calibration = value.parse()?,
            "calibration_file" => self.calibration_file = path(value),
            "ace_bins" => self.ace_bins = parse(key, value)?,
            "auc_method" => {
                self.auc_method = match value.trim() {
                    "rank_exact" | "rank" => AucMethod::RankExact,
                    "quantile_100" | "quantile" => AucMethod::Quantile100,
                    other => {
                        return Err(CliError::validation(format!(
                            "auc_method: expected rank_exact or quantile_100, got {other:?}"
                        )))
                    }
                }
            }
            "seed" => {
                self.seed = parse(key, value)?;
                self.generator.seed = self.seed;
            }
            "out" => self.out = path(value).unwrap_or_else(default_out),
            "kind" => self.sweep.kind = value.parse()?,
            "levels" | "axis" => self.sweep.levels = Some(parse_axis(value)?),
            "repetitions" | "reps" => self.sweep.repetitions = parse(key, value)?,
            "sample_size" => self.sweep.sample_size = parse(key, value)?,
            "pool_size" => self.sweep.pool_size = parse(key, value)?,
            _ => {
                if !self.generator.set(key, value)? {
                    return Err(CliError::validation(format!(
                        "unknown setting {key:?} (known: {})",
                        KEYS.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies every entry of a `key = value` file in order.
    pub fn apply_file(&mut self, file: &Path) -> Result<(), CliError> {
        for entry in keyvalue::parse_file(file)? {
            self.set(&entry.key, &entry.value)
                .map_err(|e| CliError::validation(format!("{}:{}: {}", file.display(), entry.line, e.message())))?;
        }
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let mut c = SweepConfig::new(self.sweep.kind);
        if let Some(levels) = &self.sweep.levels {
            c.axis = levels.clone();
        }
        c.repetitions = self.sweep.repetitions;
        c.n = self.sweep.sample_size;
        c.seed = self.seed;
        c.methods = self.methods.clone();
        c.ace_bins = self.ace_bins;
        c
    }

    /// Checks settings and that every referenced input exists.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::validation(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.ace_bins == 0 {
            return Err(CliError::validation("ace_bins must be at least 1"));
        }
        let need = |p: &Option<PathBuf>, key: &str| -> Result<(), CliError> {
            match p {
                Some(_) => Ok(()),
                None => Err(CliError::validation(format!(
                    "{} requires --{}",
                    self.command,
                    key.replace('_', "-")
                ))),
            }
        };
        match self.command {
            Command::Estimate => {
                need(&self.val, "val")?;
                need(&self.test, "test")?;
            }
            Command::Calibrate => {
                need(&self.val, "val")?;
                if self.calibration == Calibration::None {
                    return Err(CliError::validation("calibrate requires --calibration ts or csts"));
                }
            }
            Command::Evaluate => need(&self.test, "test")?,
            Command::Generate => self.generator.validate()?,
            Command::Simulate => {
                self.sweep_config().validate()?;
                if self.val.is_some() {
                    let has_pools = match self.sweep.kind {
                        SweepKind::Prevalence => self.pool.is_some(),
                        SweepKind::Covariate => {
                            self.pool.is_some() || (self.majority_pool.is_some() && self.minority_pool.is_some())
                        }
                    };
                    if !has_pools {
                        return Err(CliError::validation(
                            "simulate with --val also needs --pool (or --majority-pool and --minority-pool)",
                        ));
                    }
                } else {
                    self.generator.validate()?;
                    if self.sweep.pool_size == 0 {
                        return Err(CliError::validation("pool_size must be at least 1"));
                    }
                }
            }
        }
        for (key, p) in [
            ("val", &self.val),
            ("test", &self.test),
            ("pool", &self.pool),
            ("majority_pool", &self.majority_pool),
            ("minority_pool", &self.minority_pool),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(CliError::validation(format!("{key}: no such file {}", p.display())));
                }
            }
        }
        // calibrate writes the file when it does not exist yet
        if let (Some(p), false) = (&self.calibration_file, self.command == Command::Calibrate) {
            if !p.is_file() {
                return Err(CliError::validation(format!(
                    "calibration_file: no such file {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
