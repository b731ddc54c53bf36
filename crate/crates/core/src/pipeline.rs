//! One end-to-end run: split, optional contamination, standardization,
//! ensemble training, scoring and metrics.

use crate::data::{fit_apply_standardizer, inject_contamination, split_5050, SplitSpec, Table};
use crate::ensemble::{aggregate, score, train_ensemble, uniform_weights, EnsembleConfig, EnsembleModel, WeightSource};
use crate::error::{Result, VsdeError};
use crate::eval::{roc_auc, variance_ratio, VarianceRatioReport};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig<T> {
    pub ensemble: EnsembleConfig<T>,
    /// Fraction of the training set added as anomalies (0 disables).
    pub contamination: f64,
}

impl<T: Scalar> Default for RunConfig<T> {
    fn default() -> Self {
        RunConfig {
            ensemble: EnsembleConfig::default(),
            contamination: 0.0,
        }
    }
}

/// Metrics of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    /// AUC of the configured aggregation.
    pub auc: f64,
    pub auc_spectral: f64,
    pub auc_mean: f64,
    pub member_aucs: Vec<f64>,
    pub weights: Vec<f64>,
    pub variance_ratio: VarianceRatioReport,
    pub n_train: usize,
    pub n_test: usize,
    pub injected: usize,
    pub clamped: usize,
    pub clip_events: usize,
    /// Variance of the aggregated log-likelihood over the training rows.
    pub train_log_likelihood_variance: f64,
}

/// Everything a run produces besides its metrics.
pub struct RunArtifacts<T> {
    pub model: EnsembleModel<T>,
    pub test: Table<T>,
    pub anomaly_scores: Vec<T>,
    pub test_rows: Vec<usize>,
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Runs the protocol on a labeled table for one seed. The seed drives the
/// split, the contamination draw, the permutations and every member.
pub fn run_seed<T: Scalar>(table: &Table<T>, cfg: &RunConfig<T>, seed: u64) -> Result<(RunResult, RunArtifacts<T>)> {
    let split = split_5050(table, SplitSpec::new(seed))?;
    let mut train = split.train;
    let mut test = split.test;
    let mut test_rows = split.test_rows;
    let mut injected = 0;
    if cfg.contamination > 0.0 {
        let labels = test
            .labels()
            .ok_or_else(|| VsdeError::Config("contamination needs labels".into()))?;
        let anomaly_idx: Vec<usize> = (0..test.n_rows()).filter(|&r| labels[r] == 1).collect();
        let pool = test.select_rows(&anomaly_idx);
        let c = inject_contamination(&train, &pool, cfg.contamination, seed)?;
        injected = c.injected.len();
        let mut used: Vec<usize> = c.injected.iter().map(|&i| anomaly_idx[i]).collect();
        used.sort_unstable();
        used.dedup();
        let keep: Vec<usize> = (0..test.n_rows()).filter(|r| used.binary_search(r).is_err()).collect();
        test_rows = keep.iter().map(|&r| test_rows[r]).collect();
        test = test.select_rows(&keep);
        train = c.train;
    }
    let support = cfg.ensemble.train.pnn.support;
    let std = fit_apply_standardizer(&train, &[&test], support)?;
    let clamped = std.train_clamped + std.others_clamped.iter().sum::<usize>();
    let test = std.others.into_iter().next().expect("one table standardized");
    let train = std.train;

    let mut ecfg = cfg.ensemble.clone();
    ecfg.train.seed = seed;
    let mut model = train_ensemble(&train, &ecfg)?;
    model.standardization = Some(std.params);
    if model.weight_source == WeightSource::Training {
        model.fit_weights(&train)?;
    }
    let scores = score(&mut model, &test)?;
    let labels = test
        .labels()
        .ok_or_else(|| VsdeError::Config("evaluation needs labels".into()))?;
    let auc = roc_auc(&scores.anomaly, labels)?;

    let matrix = &scores.matrix;
    let spectral = if model.aggregation == crate::ensemble::Aggregation::Spectral {
        scores.weights.clone()
    } else {
        crate::ensemble::spectral_weights(matrix)?
    };
    let auc_of = |w: &[T]| -> Result<f64> {
        let s: Vec<T> = aggregate(matrix.values.view(), w)?.into_iter().map(|v| -v).collect();
        roc_auc(&s, labels)
    };
    let auc_spectral = auc_of(&spectral)?;
    let auc_mean = auc_of(&uniform_weights(model.n_members()))?;
    let member_aucs = (0..model.n_members())
        .map(|k| {
            let s: Vec<T> = matrix.column(k).into_iter().map(|v| -v).collect();
            roc_auc(&s, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let vr = variance_ratio(&scores.log_likelihood(), labels, seed)?;

    let train_matrix = crate::ensemble::score_matrix(&model, &train)?;
    let train_ll: Vec<f64> = aggregate(train_matrix.values.view(), &scores.weights)?
        .into_iter()
        .map(|v| v.as_f64())
        .collect();

    let result = RunResult {
        seed,
        auc,
        auc_spectral,
        auc_mean,
        member_aucs,
        weights: scores.weights.iter().map(|w| w.as_f64()).collect(),
        variance_ratio: vr,
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        injected,
        clamped,
        clip_events: model.logs.iter().map(|l| l.total_clip_events()).sum(),
        train_log_likelihood_variance: population_variance(&train_ll),
    };
    Ok((
        result,
        RunArtifacts {
            model,
            test,
            anomaly_scores: scores.anomaly,
            test_rows,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::density::PnnConfig;
    use crate::training::TrainConfig;

    fn quick() -> RunConfig<f64> {
        RunConfig {
            ensemble: EnsembleConfig {
                train: TrainConfig {
                    epochs: 2,
                    pnn: PnnConfig {
                        hidden: vec![4, 3],
                        ..PnnConfig::default()
                    },
                    conditioner_hidden: vec![6, 5],
                    ..TrainConfig::default()
                },
                ..EnsembleConfig::default()
            },
            contamination: 0.0,
        }
    }

    #[test]
    fn run_reports_consistent_sizes() {
        let t = generate_synthetic::<f64>(1);
        let (r, a) = run_seed(&t, &quick(), 3).unwrap();
        assert_eq!(r.n_train, 150);
        assert_eq!(r.n_test, 190);
        assert_eq!(a.anomaly_scores.len(), 190);
        assert_eq!(a.test_rows.len(), 190);
        assert!((0.0..=1.0).contains(&r.auc));
        assert_eq!(r.auc, r.auc_spectral);
        assert_eq!(r.member_aucs.len(), 3);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contamination_removes_injected_rows_from_test() {
        let t = generate_synthetic::<f64>(1);
        let cfg = RunConfig {
            contamination: 0.05,
            ..quick()
        };
        let (r, a) = run_seed(&t, &cfg, 3).unwrap();
        assert_eq!(r.injected, 8);
        assert_eq!(r.n_train, 158);
        assert_eq!(r.n_test, 190 - 8);
        let labels = t.labels().unwrap();
        let anomalies = a.test_rows.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(anomalies, 32);
    }

    #[test]
    fn runs_are_reproducible() {
        let t = generate_synthetic::<f64>(2);
        let (a, _) = run_seed(&t, &quick(), 0).unwrap();
        let (b, _) = run_seed(&t, &quick(), 0).unwrap();
        assert_eq!(a, b);
    }
}
