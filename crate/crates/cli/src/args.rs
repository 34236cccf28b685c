//! Command-line arguments. Every setting flag maps to the config key of the
//! same name (`--ace-bins` is `ace_bins`).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(
    name = "perfest",
    version,
    about = "Label-free performance estimation for binary classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Estimate test-set metrics from a labelled validation set and test scores
    Estimate(RunArgs),
    /// Run a prevalence or covariate shift sweep against realized metrics
    Simulate(RunArgs),
    /// Write a synthetic labelled score file
    Generate(RunArgs),
    /// Fit temperature scaling on the validation set
    Calibrate(RunArgs),
    /// Compute realized metrics of a labelled score file
    Evaluate(RunArgs),
}

impl Sub {
    pub fn split(&self) -> (Command, &RunArgs) {
        match self {
            Sub::Estimate(a) => (Command::Estimate, a),
            Sub::Simulate(a) => (Command::Simulate, a),
            Sub::Generate(a) => (Command::Generate, a),
            Sub::Calibrate(a) => (Command::Calibrate, a),
            Sub::Evaluate(a) => (Command::Evaluate, a),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key = value` file with settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the configuration recorded in a previous run's manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Worker threads (default: all cores); never changes results
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub settings: Settings,
}

macro_rules! settings {
    ($($field:ident: $help:literal),* $(,)?) => {
        #[derive(Debug, Default, Args)]
        pub struct Settings {
            $(
                #[doc = $help]
                #[arg(long)]
                pub $field: Option<String>,
            )*
        }

        impl Settings {
            /// The flags that were given, as `(key, value)` pairs.
            pub fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

settings! {
    val: "Labelled validation scores (CSV or JSONL)",
    test: "Test scores; labels optional",
    pool: "Resampling pool for simulate (group-tagged for a covariate sweep)",
    majority_pool: "Majority-group pool for a covariate sweep",
    minority_pool: "Minority-group pool for a covariate sweep",
    format: "Input format: csv, jsonl or auto (by extension)",
    threshold: "Decision threshold on the raw score [default: 0.5]",
    methods: "Comma-separated methods: cbpe, naive_atc, naive_doc, cm_atc, cm_doc",
    metrics: "Comma-separated metrics to report",
    calibration: "Calibration: none, ts or csts",
    calibration_file: "Saved temperature fit (JSON) to apply, or where calibrate writes one",
    ace_bins: "Equal-frequency bins for ACE [default: 15]",
    auc_method: "Realized AUC for evaluate: rank_exact or quantile_100",
    seed: "Master seed",
    out: "Output directory [default: perfest-out]",
    kind: "Sweep kind: prevalence or covariate",
    levels: "Sweep levels: `a,b,c` or `start:stop:step`",
    repetitions: "Repetitions per sweep level [default: 50]",
    sample_size: "Test-set size per repetition [default: 1000]",
    pool_size: "Size of each generated pool in a generator-backed sweep",
    n: "Generator sample size",
    prevalence: "Generator prevalence, or `latent` to follow the latent law",
    latent: "Generator latent law: uniform or beta(a,b)",
    distortion: "Generator logit distortion (1 = calibrated)",
    groups: "Two-group generator: true or false",
    majority_latent: "Majority latent law",
    majority_distortion: "Majority logit distortion",
    minority_latent: "Minority latent law",
    minority_distortion: "Minority logit distortion",
    majority_fraction: "Fraction of majority records",
}

impl RunArgs {
    /// Manifest (if any), then config file, then flags.
    pub fn resolve(&self, command: Command) -> Result<RunConfig, CliError> {
        let mut config = match &self.manifest {
            Some(path) => {
                let m = Manifest::load(path)?;
                if m.config.command != command {
                    return Err(CliError::validation(format!(
                        "manifest {} records a {} run, not {}",
                        path.display(),
                        m.config.command,
                        command
                    )));
                }
                m.config
            }
            None => RunConfig::new(command),
        };
        if let Some(file) = &self.config {
            config.apply_file(file)?;
        }
        for (key, value) in self.settings.pairs() {
            config.set(key, value)?;
        }
        Ok(config)
    }
}
