//! Permutation ensembles: members trained on different feature orders,
//! combined by the leading eigenvector of their score covariance.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::RngCore;
use rayon::prelude::*;

use crate::data::{streams, PermutationSpec, StandardizationParams, Table};
use crate::density::{io, model_from_str, model_to_string, ArModel, Mode};
use crate::error::{Result, VsdeError};
use crate::kv::{format_kv, parse_kv_lines, read_to_string, write_atomic};
use crate::numerics::{leading_eigenvector, sample_covariance, RngStream};
use crate::scalar::Scalar;
use crate::training::{train_model, TrainConfig, TrainLog};

pub const ENSEMBLE_FORMAT_TAG: &str = "vsde-ensemble v1";
pub const PERMUTATION_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Spectral,
    Mean,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Spectral => "spectral",
            Aggregation::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Aggregation::Spectral),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(VsdeError::Config(format!(
                "aggregation must be `spectral` or `mean`, got `{s}`"
            ))),
        }
    }
}

/// Sample set on which the spectral weights are estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSource {
    /// The table being scored.
    Scored,
    /// The training table, fitted once via [`EnsembleModel::fit_weights`].
    Training,
}

impl WeightSource {
    pub fn name(self) -> &'static str {
        match self {
            WeightSource::Scored => "scored",
            WeightSource::Training => "training",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scored" => Ok(WeightSource::Scored),
            "training" => Ok(WeightSource::Training),
            _ => Err(VsdeError::Config(format!(
                "weight source must be `scored` or `training`, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig<T> {
    pub n_perm: usize,
    /// Independent end-to-end runs averaged by the evaluation harness.
    pub n_seeds: usize,
    pub aggregation: Aggregation,
    /// Ablation: a single member on the original feature order.
    pub identity_permutation: bool,
    pub weight_source: WeightSource,
    /// `train.seed` seeds the permutations and every member.
    pub train: TrainConfig<T>,
}

impl<T: Scalar> Default for EnsembleConfig<T> {
    fn default() -> Self {
        EnsembleConfig {
            n_perm: 3,
            n_seeds: 3,
            aggregation: Aggregation::Spectral,
            identity_permutation: false,
            weight_source: WeightSource::Scored,
            train: TrainConfig::default(),
        }
    }
}

impl<T: Scalar> EnsembleConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_perm == 0 || self.n_seeds == 0 {
            return Err(VsdeError::Config("n_perm and n_seeds must be positive".into()));
        }
        self.train.validate()
    }

    pub fn members(&self) -> usize {
        if self.identity_permutation {
            1
        } else {
            self.n_perm
        }
    }
}

/// Log-densities of scored rows, one column per member.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<T> {
    pub values: Array2<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(VsdeError::Domain(format!("score matrix entry {bad} is not finite")));
        }
        Ok(ScoreMatrix { values })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_members(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, k: usize) -> Vec<T> {
        self.values.column(k).to_vec()
    }
}

pub struct EnsembleModel<T> {
    pub members: Vec<ArModel<T>>,
    pub permutations: Vec<PermutationSpec>,
    pub member_seeds: Vec<u64>,
    pub standardization: Option<StandardizationParams<T>>,
    pub aggregation: Aggregation,
    pub weight_source: WeightSource,
    /// Weights from the most recent fit; nonnegative with unit L1 norm.
    pub weights: Option<Vec<T>>,
    pub logs: Vec<TrainLog>,
}

/// Trains one member per permutation. Members are independent and run in
/// parallel; results keep member order.
pub fn train_ensemble<T: Scalar>(train: &Table<T>, cfg: &EnsembleConfig<T>) -> Result<EnsembleModel<T>> {
    cfg.validate()?;
    let d = train.n_features();
    let k = cfg.members();
    let permutations = if cfg.identity_permutation {
        vec![PermutationSpec::identity(d)]
    } else {
        crate::data::sample_distinct_permutations(d, k, cfg.train.seed, PERMUTATION_RETRIES)?
    };
    let mut seeder = RngStream::new(cfg.train.seed, streams::TRAINING);
    let member_seeds: Vec<u64> = (0..k).map(|_| seeder.next_u64()).collect();
    let trained: Vec<_> = permutations
        .par_iter()
        .zip(&member_seeds)
        .enumerate()
        .map(|(member, (perm, &seed))| {
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            train_model(train, &tc, perm).map_err(|e| VsdeError::Member {
                member,
                source: Box::new(e),
            })
        })
        .collect();
    let mut members = Vec::with_capacity(k);
    let mut logs = Vec::with_capacity(k);
    for t in trained {
        let t = t?;
        members.push(t.model);
        logs.push(t.log);
    }
    Ok(EnsembleModel {
        members,
        permutations,
        member_seeds,
        standardization: None,
        aggregation: cfg.aggregation,
        weight_source: cfg.weight_source,
        weights: None,
        logs,
    })
}

/// Eval-mode log-density of every row under every member, each member seeing
/// the row in its own feature order.
pub fn score_matrix<T: Scalar>(e: &EnsembleModel<T>, t: &Table<T>) -> Result<ScoreMatrix<T>> {
    let n = t.n_rows();
    let columns: Vec<Result<Vec<T>>> = e
        .members
        .par_iter()
        .zip(&e.permutations)
        .map(|(model, perm)| {
            if t.n_features() != model.dim() || perm.len() != model.dim() {
                return Err(VsdeError::Shape(format!(
                    "table has {} features, ensemble member expects {}",
                    t.n_features(),
                    model.dim()
                )));
            }
            let mut x = vec![T::zero(); model.dim()];
            (0..n)
                .map(|r| {
                    perm.apply_to(t.row(r), &mut x);
                    model.log_density(&x, &mut Mode::Eval)
                })
                .collect()
        })
        .collect();
    let mut values = Array2::zeros((n, e.members.len()));
    for (k, col) in columns.into_iter().enumerate() {
        for (r, v) in col?.into_iter().enumerate() {
            values[[r, k]] = v;
        }
    }
    ScoreMatrix::new(values)
}

pub fn uniform_weights<T: Scalar>(k: usize) -> Vec<T> {
    vec![T::one() / T::from_usize(k).unwrap(); k]
}

/// `|v| / sum |v|` for the leading eigenvector `v` of the column covariance.
/// A covariance that is exactly zero falls back to uniform weights.
pub fn spectral_weights<T: Scalar>(s: &ScoreMatrix<T>) -> Result<Vec<T>> {
    let k = s.n_members();
    if k == 0 {
        return Err(VsdeError::InsufficientData {
            what: "ensemble members",
            got: 0,
            need: 1,
        });
    }
    if s.n_rows() < 2 {
        return Err(VsdeError::InsufficientData {
            what: "scored rows for spectral weights",
            got: s.n_rows(),
            need: 2,
        });
    }
    if k == 1 {
        return Ok(vec![T::one()]);
    }
    let cov = sample_covariance(s.values.view())?;
    if cov.iter().all(|&c| c == T::zero()) {
        log::warn!("score covariance is zero (constant member scores); using uniform weights");
        return Ok(uniform_weights(k));
    }
    let v = leading_eigenvector(cov.view())?;
    let total = v.iter().map(|x| x.abs()).sum::<T>();
    Ok(v.iter().map(|x| x.abs() / total).collect())
}

/// Weighted row sums `S(x) = sum_k s_k(x) w_k`; higher means more normal.
pub fn aggregate<T: Scalar>(s: ArrayView2<'_, T>, weights: &[T]) -> Result<Vec<T>> {
    if s.ncols() != weights.len() {
        return Err(VsdeError::Shape(format!(
            "{} weights for {} score columns",
            weights.len(),
            s.ncols()
        )));
    }
    Ok(s.rows()
        .into_iter()
        .map(|row| row.iter().zip(weights).fold(T::zero(), |acc, (&x, &w)| acc + x * w))
        .collect())
}

#[derive(Clone, Debug)]
pub struct EnsembleScores<T> {
    /// `-S(x)`: higher means more anomalous.
    pub anomaly: Vec<T>,
    pub weights: Vec<T>,
    pub matrix: ScoreMatrix<T>,
}

impl<T: Scalar> EnsembleScores<T> {
    /// The aggregated log-likelihood `S(x)`.
    pub fn log_likelihood(&self) -> Vec<T> {
        self.anomaly.iter().map(|&a| -a).collect()
    }
}

impl<T: Scalar> EnsembleModel<T> {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.dim())
    }

    /// Fits spectral weights on `t` (typically the standardized training
    /// table) and stores them.
    pub fn fit_weights(&mut self, t: &Table<T>) -> Result<Vec<T>> {
        let w = spectral_weights(&score_matrix(self, t)?)?;
        self.weights = Some(w.clone());
        Ok(w)
    }

    fn weights_for(&self, matrix: &ScoreMatrix<T>) -> Result<Vec<T>> {
        match (self.aggregation, self.weight_source) {
            (Aggregation::Mean, _) => Ok(uniform_weights(self.n_members())),
            (Aggregation::Spectral, WeightSource::Scored) => spectral_weights(matrix),
            (Aggregation::Spectral, WeightSource::Training) => self
                .weights
                .clone()
                .ok_or_else(|| VsdeError::Config("spectral weights were not fitted on training scores".into())),
        }
    }
}

/// Anomaly scores of `t` (already standardized). The weights used are cached
/// on the model.
pub fn score<T: Scalar>(e: &mut EnsembleModel<T>, t: &Table<T>) -> Result<EnsembleScores<T>> {
    let matrix = score_matrix(e, t)?;
    let weights = e.weights_for(&matrix)?;
    let anomaly = aggregate(matrix.values.view(), &weights)?
        .into_iter()
        .map(|s| -s)
        .collect();
    e.weights = Some(weights.clone());
    Ok(EnsembleScores {
        anomaly,
        weights,
        matrix,
    })
}

fn member_file(k: usize) -> String {
    format!("member_{k}.model")
}

fn format_numbers<T: Scalar>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:e}\n")).collect()
}

/// Writes the ensemble into `dir` (created if needed). Every file is written
/// atomically; the manifest goes last.
pub fn save_ensemble<T: Scalar>(e: &EnsembleModel<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|err| VsdeError::io(dir, err))?;
    for (k, m) in e.members.iter().enumerate() {
        write_atomic(&dir.join(member_file(k)), model_to_string(m).as_bytes())?;
    }
    let perms: String = e
        .permutations
        .iter()
        .map(|p| format!("{}\n", io::join_usize(p.order())))
        .collect();
    write_atomic(&dir.join("permutations.txt"), perms.as_bytes())?;
    if let Some(s) = &e.standardization {
        write_atomic(&dir.join("standardization.txt"), s.to_kv_string().as_bytes())?;
    }
    if let Some(w) = &e.weights {
        write_atomic(&dir.join("weights.txt"), format_numbers(w).as_bytes())?;
    }
    for (k, log) in e.logs.iter().enumerate() {
        write_atomic(&dir.join(format!("member_{k}_train_log.csv")), log.to_csv().as_bytes())?;
    }
    let seeds: Vec<String> = e.member_seeds.iter().map(u64::to_string).collect();
    let manifest = format_kv(&[
        ("format", ENSEMBLE_FORMAT_TAG.to_string()),
        ("members", e.n_members().to_string()),
        ("dim", e.dim().to_string()),
        ("aggregation", e.aggregation.name().to_string()),
        ("weight_source", e.weight_source.name().to_string()),
        ("member_seeds", seeds.join(" ")),
        ("standardized", e.standardization.is_some().to_string()),
    ]);
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())
}

pub fn load_ensemble<T: Scalar>(dir: &Path) -> Result<EnsembleModel<T>> {
    let manifest = parse_kv_lines(&read_to_string(&dir.join("manifest.txt"))?)?;
    let get = |key: &str| {
        manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| VsdeError::Format(format!("ensemble manifest lacks `{key}`")))
    };
    if get("format")? != ENSEMBLE_FORMAT_TAG {
        return Err(VsdeError::Format(format!(
            "{}: expected format `{ENSEMBLE_FORMAT_TAG}`",
            dir.display()
        )));
    }
    let k: usize = get("members")?
        .parse()
        .map_err(|_| VsdeError::Format("member count is not an integer".into()))?;
    let member_seeds = get("member_seeds")?
        .split_whitespace()
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| VsdeError::Format(format!("bad member seed `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let members = (0..k)
        .map(|i| model_from_str(&read_to_string(&dir.join(member_file(i)))?))
        .collect::<Result<Vec<ArModel<T>>>>()?;
    let permutations = read_to_string(&dir.join("permutations.txt"))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| PermutationSpec::new(io::parse_usize_list(l)?))
        .collect::<Result<Vec<_>>>()?;
    if permutations.len() != k || member_seeds.len() != k {
        return Err(VsdeError::Format(format!(
            "manifest lists {k} members but found {} permutations and {} seeds",
            permutations.len(),
            member_seeds.len()
        )));
    }
    for (m, p) in members.iter().zip(&permutations) {
        if m.dim() != p.len() {
            return Err(VsdeError::Format(
                "permutation length differs from model dimension".into(),
            ));
        }
    }
    let standardization = if get("standardized")? == "true" {
        Some(StandardizationParams::from_kv_str(&read_to_string(
            &dir.join("standardization.txt"),
        )?)?)
    } else {
        None
    };
    let weights_path = dir.join("weights.txt");
    let weights = if weights_path.exists() {
        let w = read_to_string(&weights_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<T>()
                    .map_err(|_| VsdeError::Format(format!("bad weight `{l}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if w.len() != k {
            return Err(VsdeError::Format(format!("{} weights for {k} members", w.len())));
        }
        Some(w)
    } else {
        None
    };
    Ok(EnsembleModel {
        members,
        permutations,
        member_seeds,
        standardization,
        aggregation: Aggregation::parse(get("aggregation")?)?,
        weight_source: WeightSource::parse(get("weight_source")?)?,
        weights,
        logs: Vec::new(),
    })
}
