//! Detection metrics and run summaries.

use ndarray::ArrayView2;

use crate::data::streams;
use crate::error::{Result, VsdeError};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

fn check_labels(n: usize, labels: &[u8]) -> Result<(usize, usize)> {
    if n != labels.len() {
        return Err(VsdeError::Shape(format!("{n} scores but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(VsdeError::Domain(format!("label {bad} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(VsdeError::InsufficientData {
            what: "both label classes",
            got: pos.min(neg),
            need: 1,
        });
    }
    Ok((pos, neg))
}

/// Area under the ROC curve for `scores` where higher means more anomalous.
///
/// Equals the fraction of (anomaly, normal) pairs in which the anomaly scores
/// higher, with ties worth one half. Pair counts are kept as exact integers in
/// half units, so the value is `count / (2 n_pos n_neg)` with a single
/// rounding.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores.len(), labels)?;
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(VsdeError::Domain(format!("score {bad} is not a number")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut half_units: u128 = 0;
    let mut normals_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let a = idx[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        let b = (j - i) as u128 - a;
        half_units += 2 * a * normals_below + a * b;
        normals_below += b;
        i = j;
    }
    Ok(half_units as f64 / (2 * pos as u128 * neg as u128) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceRatioReport {
    pub sigma2_normal: f64,
    pub sigma2_anomal: f64,
    pub mu_normal: f64,
    pub mu_anomal: f64,
    /// `sigma2_normal / sigma2_anomal`; `None` when the anomaly variance is 0.
    pub ratio: Option<f64>,
    /// Rows per class after balancing.
    pub subsample_size: usize,
    pub seed: u64,
}

fn mean_and_population_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Log-density spread of normals relative to anomalies on class-balanced
/// subsets. The larger class is subsampled without replacement (seeded) to
/// the size of the smaller one; variances are population variances.
pub fn variance_ratio<T: Scalar>(log_densities: &[T], labels: &[u8], seed: u64) -> Result<VarianceRatioReport> {
    check_labels(log_densities.len(), labels)?;
    if let Some(bad) = log_densities.iter().find(|s| !s.is_finite()) {
        return Err(VsdeError::Domain(format!("log-density {bad} is not finite")));
    }
    let mut normal: Vec<f64> = Vec::new();
    let mut anomal: Vec<f64> = Vec::new();
    for (&s, &l) in log_densities.iter().zip(labels) {
        if l == 1 { &mut anomal } else { &mut normal }.push(s.as_f64());
    }
    let size = normal.len().min(anomal.len());
    let mut rng = RngStream::new(seed, streams::SUBSAMPLE);
    for class in [&mut normal, &mut anomal] {
        if class.len() > size {
            rng.shuffle(class);
            class.truncate(size);
        }
    }
    let (mu_normal, sigma2_normal) = mean_and_population_variance(&normal);
    let (mu_anomal, sigma2_anomal) = mean_and_population_variance(&anomal);
    Ok(VarianceRatioReport {
        sigma2_normal,
        sigma2_anomal,
        mu_normal,
        mu_anomal,
        ratio: (sigma2_anomal > 0.0).then(|| sigma2_normal / sigma2_anomal),
        subsample_size: size,
        seed,
    })
}

/// Fraction of datasets on which a method reaches `theta` times the best AUC.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileCurve {
    pub thetas: Vec<f64>,
    pub coverage: Vec<f64>,
}

/// Performance profile per method (row of `auc`, one column per dataset).
pub fn dolan_more(auc: ArrayView2<'_, f64>, thetas: &[f64]) -> Result<Vec<ProfileCurve>> {
    let (m, j) = auc.dim();
    if m == 0 || j == 0 {
        return Err(VsdeError::InsufficientData {
            what: "performance profile (methods x datasets)",
            got: m.min(j),
            need: 1,
        });
    }
    if let Some(bad) = auc.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(VsdeError::Domain(format!("AUC {bad} outside [0, 1]")));
    }
    let best: Vec<f64> = auc
        .columns()
        .into_iter()
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(auc
        .rows()
        .into_iter()
        .map(|row| ProfileCurve {
            thetas: thetas.to_vec(),
            coverage: thetas
                .iter()
                .map(|&theta| {
                    let hits = row.iter().zip(&best).filter(|(&a, &b)| a >= theta * b).count();
                    hits as f64 / j as f64
                })
                .collect(),
        })
        .collect())
}

/// Evenly spaced grid `0, 1/(n-1), ..., 1`.
pub fn theta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile of sorted data by linear interpolation between order statistics
/// at position `p (n - 1)`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean, quartiles (linear interpolation) and range.
pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(VsdeError::InsufficientData {
            what: "summary statistics",
            got: 0,
            need: 1,
        });
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(VsdeError::Domain(format!("value {bad} is not finite")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SummaryStats {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(VsdeError::InsufficientData {
            what: "mean and deviation",
            got: 0,
            need: 1,
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}
