//! Run settings: defaults, then the config file, then command-line flags.

use std::path::Path;

use clap::Args;
use vsde::data::Support;
use vsde::density::{PnnConfig, PositivityTransform};
use vsde::ensemble::{Aggregation, EnsembleConfig, WeightSource};
use vsde::kv::{parse_kv_lines, read_to_string};
use vsde::pipeline::RunConfig;
use vsde::training::{AdamParams, TrainConfig};

use crate::CliError;

/// Model, training and protocol flags shared by every command that trains.
/// List-valued flags take comma-separated values; `sweep` treats a list as a
/// grid, the other commands need a single value.
#[derive(Args, Clone, Debug, Default)]
pub struct ModelArgs {
    /// Flat `key = value` config file; flags override its entries
    #[arg(long, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,

    /// Variance penalty weight (list for `sweep`) [default: 3.33; sweep: 0,1,3.33,10]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambda: Option<Vec<f64>>,

    /// Ablation: train with plain negative log-likelihood [default: false]
    #[arg(long)]
    pub lambda_zero: bool,

    /// Adam learning rate [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,

    /// Conditioner dropout rate [default: 0.1]
    #[arg(long)]
    pub dropout: Option<f64>,

    /// Training epochs per member [default: 500]
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Smallest minibatch [default: 16]
    #[arg(long)]
    pub batch_min: Option<usize>,

    /// Largest minibatch [default: 8096]
    #[arg(long)]
    pub batch_max: Option<usize>,

    /// Global gradient norm cap, 0 disables clipping [default: 10]
    #[arg(long)]
    pub clip_norm: Option<f64>,

    /// Ensemble size (list for `sweep`) [default: 3]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n_perm: Option<Vec<usize>>,

    /// Seeds of the independent runs [default: 0,1,2]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub seeds: Option<Vec<u64>>,

    /// Ablation: one member on the original feature order [default: false]
    #[arg(long)]
    pub identity_permutation: bool,

    /// Ablation: average members instead of spectral weighting [default: false]
    #[arg(long)]
    pub mean_ensemble: bool,

    /// Rows used to fit spectral weights: scored or training [default: scored]
    #[arg(long)]
    pub weight_source: Option<String>,

    /// Training contamination rate (list for `sweep`) [default: 0]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub contamination: Option<Vec<f64>>,

    /// Hidden widths of the monotone networks [default: 16,16]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub pnn_hidden: Option<Vec<usize>>,

    /// Hidden widths of the conditioners [default: 64,64]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub conditioner_hidden: Option<Vec<usize>>,

    /// Positivity map for monotone weights: softplus or exp [default: softplus]
    #[arg(long)]
    pub transform: Option<String>,

    /// Lower end of the density support in standardized units [default: -10]
    #[arg(long, allow_negative_numbers = true)]
    pub support_low: Option<f64>,

    /// Upper end of the density support in standardized units [default: 10]
    #[arg(long, allow_negative_numbers = true)]
    pub support_high: Option<f64>,

    /// Worker threads, 0 uses every core [default: 0]
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub lambda: Vec<f64>,
    pub lambda_set: bool,
    pub lambda_zero: bool,
    pub lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_min: usize,
    pub batch_max: usize,
    pub clip_norm: f64,
    pub n_perm: Vec<usize>,
    pub seeds: Vec<u64>,
    pub identity_permutation: bool,
    pub mean_ensemble: bool,
    pub weight_source: WeightSource,
    pub contamination: Vec<f64>,
    pub pnn_hidden: Vec<usize>,
    pub conditioner_hidden: Vec<usize>,
    pub transform: PositivityTransform,
    pub support_low: f64,
    pub support_high: f64,
    pub threads: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::<f64>::default();
        Settings {
            lambda: vec![t.lambda],
            lambda_set: false,
            lambda_zero: false,
            lr: t.adam.lr,
            dropout: t.dropout,
            epochs: t.epochs,
            batch_min: t.batch_min,
            batch_max: t.batch_max,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            n_perm: vec![3],
            seeds: vec![0, 1, 2],
            identity_permutation: false,
            mean_ensemble: false,
            weight_source: WeightSource::Scored,
            contamination: vec![0.0],
            pnn_hidden: t.pnn.hidden.clone(),
            conditioner_hidden: t.conditioner_hidden.clone(),
            transform: t.pnn.transform,
            support_low: t.pnn.support.low,
            support_high: t.pnn.support.high,
            threads: 0,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{s}`")))
        })
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

fn weight_source(s: &str) -> Result<WeightSource, CliError> {
    WeightSource::parse(s.trim()).map_err(|e| CliError::Config(e.to_string()))
}

fn transform(s: &str) -> Result<PositivityTransform, CliError> {
    PositivityTransform::parse(s.trim()).map_err(|e| CliError::Config(e.to_string()))
}

impl Settings {
    /// Applies one config-file entry. Keys use the flag names with either
    /// dashes or underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key.replace('-', "_").as_str() {
            "lambda" => {
                self.lambda = list(key, value)?;
                self.lambda_set = true;
            }
            "lambda_zero" => self.lambda_zero = flag(key, value)?,
            "lr" => self.lr = one(key, value)?,
            "dropout" => self.dropout = one(key, value)?,
            "epochs" => self.epochs = one(key, value)?,
            "batch_min" => self.batch_min = one(key, value)?,
            "batch_max" => self.batch_max = one(key, value)?,
            "clip_norm" => self.clip_norm = one(key, value)?,
            "n_perm" => self.n_perm = list(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "identity_permutation" => self.identity_permutation = flag(key, value)?,
            "mean_ensemble" => self.mean_ensemble = flag(key, value)?,
            "weight_source" => self.weight_source = weight_source(value)?,
            "contamination" => self.contamination = list(key, value)?,
            "pnn_hidden" => self.pnn_hidden = list(key, value)?,
            "conditioner_hidden" => self.conditioner_hidden = list(key, value)?,
            "transform" => self.transform = transform(value)?,
            "support_low" => self.support_low = one(key, value)?,
            "support_high" => self.support_high = one(key, value)?,
            "threads" => self.threads = one(key, value)?,
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = read_to_string(path)?;
        for (k, v) in parse_kv_lines(&text)? {
            self.set(&k, &v)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    pub fn resolve(args: &ModelArgs) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = &args.config {
            s.apply_file(path)?;
        }
        if let Some(v) = &args.lambda {
            s.lambda = v.clone();
            s.lambda_set = true;
        }
        s.lambda_zero |= args.lambda_zero;
        s.identity_permutation |= args.identity_permutation;
        s.mean_ensemble |= args.mean_ensemble;
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &args.$field {
                    s.$field = v.clone();
                }
            )*};
        }
        take!(
            lr,
            dropout,
            epochs,
            batch_min,
            batch_max,
            clip_norm,
            n_perm,
            seeds,
            contamination,
            pnn_hidden,
            conditioner_hidden,
            support_low,
            support_high,
            threads
        );
        if let Some(w) = &args.weight_source {
            s.weight_source = weight_source(w)?;
        }
        if let Some(t) = &args.transform {
            s.transform = transform(t)?;
        }
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.lambda.is_empty() || self.n_perm.is_empty() || self.seeds.is_empty() || self.contamination.is_empty() {
            return Err(CliError::Config(
                "lambda, n_perm, seeds and contamination need at least one value".into(),
            ));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(CliError::Config(format!("seeds repeat: {:?}", self.seeds)));
        }
        if self.clip_norm < 0.0 {
            return Err(CliError::Config("clip_norm must be >= 0".into()));
        }
        // validates every remaining field through the library's own checks
        for &lambda in &self.lambda {
            for &n_perm in &self.n_perm {
                self.run_config(lambda, n_perm, 0.0)?.ensemble.validate()?;
            }
        }
        Ok(())
    }

    /// Requires list-valued settings to hold exactly one value.
    pub fn single(&self) -> Result<(f64, usize, f64), CliError> {
        match (&self.lambda[..], &self.n_perm[..], &self.contamination[..]) {
            ([l], [k], [c]) => Ok((*l, *k, *c)),
            _ => Err(CliError::Config(
                "lambda, n_perm and contamination take one value here; use `sweep` for grids".into(),
            )),
        }
    }

    pub fn run_config(&self, lambda: f64, n_perm: usize, contamination: f64) -> Result<RunConfig<f64>, CliError> {
        let train = TrainConfig {
            lambda,
            lambda_zero: self.lambda_zero,
            adam: AdamParams {
                lr: self.lr,
                ..AdamParams::default()
            },
            dropout: self.dropout,
            batch_min: self.batch_min,
            batch_max: self.batch_max,
            epochs: self.epochs,
            seed: 0,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            pnn: PnnConfig {
                hidden: self.pnn_hidden.clone(),
                support: Support::new(self.support_low, self.support_high)?,
                transform: self.transform,
            },
            conditioner_hidden: self.conditioner_hidden.clone(),
        };
        Ok(RunConfig {
            ensemble: EnsembleConfig {
                n_perm,
                n_seeds: self.seeds.len(),
                aggregation: if self.mean_ensemble {
                    Aggregation::Mean
                } else {
                    Aggregation::Spectral
                },
                identity_permutation: self.identity_permutation,
                weight_source: self.weight_source,
                train,
            },
            contamination,
        })
    }

    /// Echo of the settings for metrics files, in a fixed order.
    pub fn describe(&self) -> Vec<(String, String)> {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        vec![
            ("lambda".into(), join(&self.lambda)),
            ("lambda_zero".into(), self.lambda_zero.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_min".into(), self.batch_min.to_string()),
            ("batch_max".into(), self.batch_max.to_string()),
            ("clip_norm".into(), self.clip_norm.to_string()),
            ("n_perm".into(), join(&self.n_perm)),
            ("seeds".into(), join(&self.seeds)),
            ("identity_permutation".into(), self.identity_permutation.to_string()),
            ("mean_ensemble".into(), self.mean_ensemble.to_string()),
            ("weight_source".into(), self.weight_source.name().into()),
            ("contamination".into(), join(&self.contamination)),
            ("pnn_hidden".into(), join(&self.pnn_hidden)),
            ("conditioner_hidden".into(), join(&self.conditioner_hidden)),
            ("transform".into(), self.transform.name().into()),
            ("support_low".into(), self.support_low.to_string()),
            ("support_high".into(), self.support_high.to_string()),
        ]
    }
}
