//! Tables, CSV ingestion, standardization, the normal-only 50/50 split,
//! feature permutations, the two-dimensional synthetic benchmark and
//! training-set contamination.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Result, VsdeError};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

/// Stream ids used with [`RngStream`] so that the same user seed drives
/// independent draws for each purpose.
pub(crate) mod streams {
    pub const SPLIT: u64 = 1;
    pub const PERMUTATIONS: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const CONTAMINATION: u64 = 4;
    pub const TRAINING: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
}

/// Row-major numeric dataset with optional 0/1 labels (1 = anomaly).
#[derive(Clone, Debug, PartialEq)]
pub struct Table<T> {
    values: Array2<T>,
    labels: Option<Vec<u8>>,
    feature_names: Vec<String>,
}

impl<T: Scalar> Table<T> {
    pub fn new(values: Array2<T>, labels: Option<Vec<u8>>, feature_names: Vec<String>) -> Result<Self> {
        let (n, d) = values.dim();
        if feature_names.len() != d {
            return Err(VsdeError::Shape(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(VsdeError::Shape(format!("{} labels for {n} rows", labels.len())));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(VsdeError::Domain(format!("label {bad} is not 0 or 1")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VsdeError::Domain("table contains non-finite values".into()));
        }
        Ok(Table {
            values,
            labels,
            feature_names,
        })
    }

    /// Unlabeled table with names `x0, x1, ...`.
    pub fn from_values(values: Array2<T>) -> Result<Self> {
        let names = (0..values.ncols()).map(|j| format!("x{j}")).collect();
        Table::new(values, None, names)
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values
            .row(i)
            .to_slice()
            .expect("tables are stored in standard layout")
    }

    pub fn anomaly_fraction(&self) -> Option<f64> {
        self.labels.as_ref().map(|l| {
            if l.is_empty() {
                0.0
            } else {
                l.iter().filter(|&&x| x == 1).count() as f64 / l.len() as f64
            }
        })
    }

    /// New table made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table<T> {
        let values = self.values.select(Axis(0), rows);
        let labels = self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect());
        Table {
            values: values.as_standard_layout().into_owned(),
            labels,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn without_labels(&self) -> Table<T> {
        Table {
            labels: None,
            ..self.clone()
        }
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Table<T>> {
        Table::new(self.values.clone(), Some(labels), self.feature_names.clone())
    }

    /// Stacks rows of `other` below `self`. Labels survive only if both have them.
    pub fn concat(&self, other: &Table<T>) -> Result<Table<T>> {
        if self.n_features() != other.n_features() {
            return Err(VsdeError::Shape(format!(
                "cannot stack {} columns onto {}",
                other.n_features(),
                self.n_features()
            )));
        }
        let values = ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .map_err(|e| VsdeError::Shape(e.to_string()))?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Table {
            values,
            labels,
            feature_names: self.feature_names.clone(),
        })
    }

    /// Row indices grouped by label: `(normal, anomalous)`.
    pub fn label_partition(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let labels = self.labels.as_ref()?;
        let normal = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
        let anomalous = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        Some((normal, anomalous))
    }

    /// Writes the table as CSV with a header; labels (if any) go last as `label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let mut header = self.feature_names.join(",");
        if self.labels.is_some() {
            header.push_str(",label");
        }
        out.push_str(&header);
        out.push('\n');
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v}").unwrap();
            }
            if let Some(labels) = &self.labels {
                write!(out, ",{}", labels[i]).unwrap();
            }
            out.push('\n');
        }
        crate::kv::write_atomic(path, out.as_bytes())
    }
}

/// What ingestion saw: shape, class balance and how many rows were dropped for
/// non-finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct TableSummary {
    pub n_rows: usize,
    pub n_features: usize,
    pub anomaly_fraction: Option<f64>,
    pub rejected_rows: usize,
}

/// Reads a comma-separated file with one header row. With `has_labels`, the
/// last column is a 0/1 label. Rows holding NaN or infinite values are
/// skipped and counted; unparsable cells fail with their 1-based data-row
/// number (header excluded) and column name.
pub fn load_table<T: Scalar>(path: &Path, has_labels: bool) -> Result<(Table<T>, TableSummary)> {
    let file = std::fs::File::open(path).map_err(|e| VsdeError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| VsdeError::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let n_features = if has_labels {
        header.len().checked_sub(1).filter(|&d| d > 0)
    } else {
        Some(header.len()).filter(|&d| d > 0)
    }
    .ok_or_else(|| VsdeError::Format(format!("{}: no feature columns in header", path.display())))?;

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    let mut rejected = 0;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| VsdeError::Parse {
            path: path.into(),
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(VsdeError::Parse {
                path: path.into(),
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut parsed = Vec::with_capacity(n_features);
        for (j, cell) in record.iter().take(n_features).enumerate() {
            let v: T = cell.parse().map_err(|_| VsdeError::Parse {
                path: path.into(),
                row,
                column: header[j].clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            parsed.push(v);
        }
        if has_labels {
            let cell = &record[n_features];
            let label = match cell.parse::<f64>() {
                Ok(x) if x == 0.0 => 0u8,
                Ok(x) if x == 1.0 => 1u8,
                _ => {
                    return Err(VsdeError::InvalidLabel {
                        path: path.into(),
                        row,
                        value: cell.to_owned(),
                    })
                }
            };
            if parsed.iter().all(|v| v.is_finite()) {
                labels.push(label);
            }
        }
        if parsed.iter().all(|v| v.is_finite()) {
            flat.extend(parsed);
        } else {
            rejected += 1;
        }
    }
    let n_rows = flat.len() / n_features;
    let values = Array2::from_shape_vec((n_rows, n_features), flat).map_err(|e| VsdeError::Shape(e.to_string()))?;
    let table = Table::new(values, has_labels.then_some(labels), header[..n_features].to_vec())?;
    if rejected > 0 {
        log::warn!("{}: rejected {rejected} rows with non-finite values", path.display());
    }
    let summary = TableSummary {
        n_rows,
        n_features,
        anomaly_fraction: table.anomaly_fraction(),
        rejected_rows: rejected,
    };
    Ok((table, summary))
}

/// Compact support `[low, high]` of every per-feature conditional density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Support<T> {
    pub low: T,
    pub high: T,
}

impl<T: Scalar> Support<T> {
    pub fn new(low: T, high: T) -> Result<Self> {
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(VsdeError::Config(format!("invalid support [{low}, {high}]")));
        }
        Ok(Support { low, high })
    }

    pub fn contains(&self, t: T) -> bool {
        t >= self.low && t <= self.high
    }
}

impl<T: Scalar> Default for Support<T> {
    fn default() -> Self {
        Support {
            low: T::lit(-10.0),
            high: T::lit(10.0),
        }
    }
}

/// Margin kept between standardized values and the support edges.
pub const CLAMP_MARGIN: f64 = 1e-4;

/// Per-feature affine map to z-scores. Constant features get `std = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizationParams<T> {
    pub feature_names: Vec<String>,
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> StandardizationParams<T> {
    pub fn fit(train: &Table<T>) -> Result<Self> {
        let n = train.n_rows();
        if n == 0 {
            return Err(VsdeError::InsufficientData {
                what: "standardization",
                got: 0,
                need: 1,
            });
        }
        let nt = T::from_usize(n).unwrap();
        let mut mean = Vec::with_capacity(train.n_features());
        let mut std = Vec::with_capacity(train.n_features());
        for col in train.values.columns() {
            let m = col.iter().copied().sum::<T>() / nt;
            let var = col.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / nt;
            let s = var.sqrt();
            let constant = s <= T::lit(1e-12) * m.abs().max(T::one());
            mean.push(m);
            std.push(if constant { T::one() } else { s });
        }
        Ok(StandardizationParams {
            feature_names: train.feature_names.clone(),
            mean,
            std,
        })
    }

    /// Standardizes and clamps into `[low + 1e-4, high - 1e-4]`; returns the
    /// table and the number of clamped cells.
    pub fn apply(&self, table: &Table<T>, support: Support<T>) -> Result<(Table<T>, usize)> {
        if table.n_features() != self.mean.len() {
            return Err(VsdeError::Shape(format!(
                "standardizer fitted on {} features, table has {}",
                self.mean.len(),
                table.n_features()
            )));
        }
        let lo = support.low + T::lit(CLAMP_MARGIN);
        let hi = support.high - T::lit(CLAMP_MARGIN);
        let mut clamped = 0;
        let mut values = table.values.clone();
        for mut row in values.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let z = (*v - self.mean[j]) / self.std[j];
                *v = if z < lo {
                    clamped += 1;
                    lo
                } else if z > hi {
                    clamped += 1;
                    hi
                } else {
                    z
                };
            }
        }
        Ok((
            Table {
                values,
                labels: table.labels.clone(),
                feature_names: table.feature_names.clone(),
            },
            clamped,
        ))
    }

    /// Flat `name = mean std` lines with round-trip exact numbers.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::from("# feature = mean std\n");
        for ((name, m), s) in self.feature_names.iter().zip(&self.mean).zip(&self.std) {
            writeln!(out, "{name} = {m:e} {s:e}").unwrap();
        }
        out
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut params = StandardizationParams {
            feature_names: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
        };
        for (key, value) in crate::kv::parse_kv_lines(text)? {
            let mut parts = value.split_whitespace();
            let (Some(m), Some(s), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(VsdeError::Format(format!("feature `{key}`: expected `mean std`")));
            };
            let parse = |x: &str| {
                x.parse::<T>()
                    .map_err(|_| VsdeError::Format(format!("feature `{key}`: bad number `{x}`")))
            };
            let (m, s) = (parse(m)?, parse(s)?);
            if !(s > T::zero()) {
                return Err(VsdeError::Format("standard deviation must be positive".into()));
            }
            params.feature_names.push(key);
            params.mean.push(m);
            params.std.push(s);
        }
        Ok(params)
    }
}

/// Standardized tables plus the number of clamped cells in each.
#[derive(Clone, Debug)]
pub struct Standardized<T> {
    pub params: StandardizationParams<T>,
    pub train: Table<T>,
    pub others: Vec<Table<T>>,
    pub train_clamped: usize,
    pub others_clamped: Vec<usize>,
}

/// Fits on `train` only and applies the same map to every table.
pub fn fit_apply_standardizer<T: Scalar>(
    train: &Table<T>,
    others: &[&Table<T>],
    support: Support<T>,
) -> Result<Standardized<T>> {
    let params = StandardizationParams::fit(train)?;
    let (train_std, train_clamped) = params.apply(train, support)?;
    let mut out = Vec::with_capacity(others.len());
    let mut counts = Vec::with_capacity(others.len());
    for t in others {
        let (s, c) = params.apply(t, support)?;
        out.push(s);
        counts.push(c);
    }
    Ok(Standardized {
        params,
        train: train_std,
        others: out,
        train_clamped,
        others_clamped: counts,
    })
}

/// Normal-only split: `train_fraction` of the shuffled normal rows train the
/// model; the remaining normals and every anomaly form the test set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train_fraction: 0.5,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Split<T> {
    /// Unlabeled normal rows.
    pub train: Table<T>,
    /// Labeled rows, ascending by original row index.
    pub test: Table<T>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

pub fn split_5050<T: Scalar>(table: &Table<T>, spec: SplitSpec) -> Result<Split<T>> {
    let (mut normal, anomalous) = table
        .label_partition()
        .ok_or_else(|| VsdeError::Domain("the split needs a labeled table".into()))?;
    if normal.len() < 2 {
        return Err(VsdeError::InsufficientData {
            what: "train/test split (normal rows)",
            got: normal.len(),
            need: 2,
        });
    }
    RngStream::new(spec.seed, streams::SPLIT).shuffle(&mut normal);
    let n_train = (normal.len() as f64 * spec.train_fraction).floor() as usize;
    let n_train = n_train.clamp(1, normal.len() - 1);
    let train_rows = normal[..n_train].to_vec();
    let mut test_rows: Vec<usize> = normal[n_train..].iter().chain(&anomalous).copied().collect();
    test_rows.sort_unstable();
    Ok(Split {
        train: table.select_rows(&train_rows).without_labels(),
        test: table.select_rows(&test_rows),
        train_rows,
        test_rows,
    })
}

/// Column order for one autoregressive model: model feature `i` is table
/// column `order[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PermutationSpec {
    order: Vec<usize>,
}

impl PermutationSpec {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(VsdeError::Domain(format!("{order:?} is not a permutation")));
            }
        }
        Ok(PermutationSpec { order })
    }

    pub fn identity(d: usize) -> Self {
        PermutationSpec {
            order: (0..d).collect(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn inverse(&self) -> PermutationSpec {
        let mut inv = vec![0; self.order.len()];
        for (i, &o) in self.order.iter().enumerate() {
            inv[o] = i;
        }
        PermutationSpec { order: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &o)| i == o)
    }

    /// `out[i] = x[order[i]]`.
    pub fn apply_to<T: Copy>(&self, x: &[T], out: &mut [T]) {
        for (o, &src) in out.iter_mut().zip(&self.order) {
            *o = x[src];
        }
    }
}

/// Reorders the columns (values and names) of `table` by `perm`.
pub fn apply_permutation<T: Scalar>(table: &Table<T>, perm: &PermutationSpec) -> Result<Table<T>> {
    if perm.len() != table.n_features() {
        return Err(VsdeError::Shape(format!(
            "permutation of length {} for {} features",
            perm.len(),
            table.n_features()
        )));
    }
    let values = table
        .values
        .select(Axis(1), perm.order())
        .as_standard_layout()
        .into_owned();
    let names = perm.order().iter().map(|&j| table.feature_names[j].clone()).collect();
    Ok(Table {
        values,
        labels: table.labels.clone(),
        feature_names: names,
    })
}

/// `k` independent uniform permutations of `0..d`. With `include_identity`
/// the first one is the identity.
pub fn sample_permutations(d: usize, k: usize, seed: u64, include_identity: bool) -> Result<Vec<PermutationSpec>> {
    if d == 0 {
        return Err(VsdeError::Domain("cannot permute zero features".into()));
    }
    if k == 0 {
        return Err(VsdeError::Domain("need at least one permutation".into()));
    }
    let mut rng = RngStream::new(seed, streams::PERMUTATIONS);
    Ok((0..k)
        .map(|i| {
            let mut order: Vec<usize> = (0..d).collect();
            if !(include_identity && i == 0) {
                rng.shuffle(&mut order);
            }
            PermutationSpec { order }
        })
        .collect())
}

/// Like [`sample_permutations`], but redraws a permutation that duplicates an
/// earlier one, up to `max_retries` times each. Duplicates remain only when
/// `d!` is smaller than `k` (or the retry budget runs out).
pub fn sample_distinct_permutations(d: usize, k: usize, seed: u64, max_retries: usize) -> Result<Vec<PermutationSpec>> {
    if d == 0 {
        return Err(VsdeError::Domain("cannot permute zero features".into()));
    }
    let mut rng = RngStream::new(seed, streams::PERMUTATIONS);
    let mut out: Vec<PermutationSpec> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut order: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut order);
        let mut retries = 0;
        while retries < max_retries && out.iter().any(|p| p.order == order) {
            rng.shuffle(&mut order);
            retries += 1;
        }
        out.push(PermutationSpec { order });
    }
    Ok(out)
}

/// Parameters of the three-cluster benchmark in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub normal_centers: Vec<[f64; 2]>,
    pub normal_per_center: usize,
    pub normal_std: f64,
    pub anomaly_centers: Vec<[f64; 2]>,
    pub anomaly_per_center: usize,
    /// Covariance of each anomaly cluster (row-major 2x2).
    pub anomaly_covariance: [[f64; 2]; 2],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            normal_centers: vec![[0.0, 0.0], [-5.0, -5.0], [5.0, 5.0]],
            normal_per_center: 100,
            normal_std: 1.0,
            anomaly_centers: vec![[-5.0, 5.0], [5.0, -5.0]],
            anomaly_per_center: 20,
            anomaly_covariance: [[1.0, 0.9], [0.9, 1.0]],
        }
    }
}

pub fn generate_synthetic<T: Scalar>(seed: u64) -> Table<T> {
    generate_synthetic_with(&SyntheticConfig::default(), seed).expect("default synthetic config is valid")
}

/// Normal rows first (label 0), then anomaly rows (label 1).
pub fn generate_synthetic_with<T: Scalar>(cfg: &SyntheticConfig, seed: u64) -> Result<Table<T>> {
    let [[a, b], [c, d]] = cfg.anomaly_covariance;
    if (b - c).abs() > 1e-12 || a <= 0.0 || a * d - b * c <= 0.0 {
        return Err(VsdeError::Config(
            "anomaly covariance must be symmetric positive definite".into(),
        ));
    }
    // Cholesky factor of [[a, b], [b, d]]
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (d - l21 * l21).sqrt();

    let mut rng = RngStream::new(seed, streams::SYNTHETIC);
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for center in &cfg.normal_centers {
        for _ in 0..cfg.normal_per_center {
            flat.push(center[0] + cfg.normal_std * rng.normal());
            flat.push(center[1] + cfg.normal_std * rng.normal());
            labels.push(0);
        }
    }
    for center in &cfg.anomaly_centers {
        for _ in 0..cfg.anomaly_per_center {
            let z1 = rng.normal();
            let z2 = rng.normal();
            flat.push(center[0] + l11 * z1);
            flat.push(center[1] + l21 * z1 + l22 * z2);
            labels.push(1);
        }
    }
    let n = labels.len();
    let values = Array2::from_shape_vec((n, 2), flat.into_iter().map(T::lit).collect())
        .map_err(|e| VsdeError::Shape(e.to_string()))?;
    Table::new(values, Some(labels), vec!["x0".into(), "x1".into()])
}

/// Training set with injected anomalies.
#[derive(Clone, Debug)]
pub struct Contaminated<T> {
    pub train: Table<T>,
    /// Rows of the anomaly pool that were injected (may repeat when sampled
    /// with replacement); the caller removes them from its test set.
    pub injected: Vec<usize>,
    pub with_replacement: bool,
}

/// Adds `ceil(rate * n_train)` rows drawn from `anomalies` (without
/// replacement when the pool is large enough) and shuffles the result. The
/// returned rows carry no labels, since training is label-blind.
pub fn inject_contamination<T: Scalar>(
    train: &Table<T>,
    anomalies: &Table<T>,
    rate: f64,
    seed: u64,
) -> Result<Contaminated<T>> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(VsdeError::Domain(format!("contamination rate {rate} outside [0, 0.5]")));
    }
    let count = (rate * train.n_rows() as f64).ceil() as usize;
    if count == 0 {
        return Ok(Contaminated {
            train: train.clone(),
            injected: Vec::new(),
            with_replacement: false,
        });
    }
    if anomalies.n_rows() == 0 {
        return Err(VsdeError::InsufficientData {
            what: "contamination pool",
            got: 0,
            need: 1,
        });
    }
    let mut rng = RngStream::new(seed, streams::CONTAMINATION);
    let with_replacement = count > anomalies.n_rows();
    let injected: Vec<usize> = if with_replacement {
        log::warn!(
            "contamination needs {count} rows but only {} anomalies are available; sampling with replacement",
            anomalies.n_rows()
        );
        (0..count).map(|_| rng.below(anomalies.n_rows())).collect()
    } else {
        let mut pool: Vec<usize> = (0..anomalies.n_rows()).collect();
        rng.shuffle(&mut pool);
        pool.truncate(count);
        pool
    };
    let combined = train
        .without_labels()
        .concat(&anomalies.select_rows(&injected).without_labels())?;
    let mut order: Vec<usize> = (0..combined.n_rows()).collect();
    rng.shuffle(&mut order);
    Ok(Contaminated {
        train: combined.select_rows(&order),
        injected,
        with_replacement,
    })
}

/// Name to path map used by the benchmark loop: `name = path [labels|nolabels]`.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, String, bool)>> {
    let mut out = Vec::new();
    for (name, value) in crate::kv::parse_kv_lines(text)? {
        let mut parts = value.split_whitespace();
        let path = parts
            .next()
            .ok_or_else(|| VsdeError::Format(format!("dataset `{name}` has no path")))?;
        let has_labels = match parts.next() {
            None | Some("labels") => true,
            Some("nolabels") => false,
            Some(other) => {
                return Err(VsdeError::Format(format!(
                    "dataset `{name}`: expected `labels` or `nolabels`, got `{other}`"
                )))
            }
        };
        out.push((name, path.to_owned(), has_labels));
    }
    let mut seen = HashMap::new();
    for (i, (name, _, _)) in out.iter().enumerate() {
        if let Some(prev) = seen.insert(name.clone(), i) {
            return Err(VsdeError::Format(format!(
                "dataset `{name}` listed twice (entries {prev} and {i})"
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path)
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
        path
    }

    fn labeled(n_normal: usize, n_anom: usize) -> Table<f64> {
        let n = n_normal + n_anom;
        let values = Array2::from_shape_fn((n, 2), |(i, j)| (i * 10 + j) as f64);
        let labels = (0..n).map(|i| u8::from(i >= n_normal)).collect();
        Table::new(values, Some(labels), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn load_small_labeled_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "a,b,label\n1,2,0\n3,4,0\n5,6,1\n");
        let (t, summary) = load_table::<f64>(&path, true).unwrap();
        assert_eq!((summary.n_rows, summary.n_features), (3, 2));
        assert!((summary.anomaly_fraction.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.labels().unwrap(), &[0, 0, 1]);
        assert_eq!(t.feature_names(), &["a", "b"]);
    }

    #[test]
    fn load_reports_bad_cell_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "a,b,label\n1,2,0\n3,oops,0\n");
        match load_table::<f64>(&path, true) {
            Err(VsdeError::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_label_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "a,label\n1,0\n2,2\n");
        assert!(matches!(
            load_table::<f64>(&path, true),
            Err(VsdeError::InvalidLabel { row: 2, .. })
        ));
        assert!(matches!(
            load_table::<f64>(&dir.path().join("missing.csv"), false),
            Err(VsdeError::Io { .. })
        ));
    }

    #[test]
    fn load_drops_non_finite_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "a,b\n1,2\nNaN,4\n5,inf\n7,8\n");
        let (t, summary) = load_table::<f32>(&path, false).unwrap();
        assert_eq!(summary.rejected_rows, 2);
        assert_eq!(t.n_rows(), 2);
        assert!(t.labels().is_none());
    }

    #[test]
    fn csv_write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let t = generate_synthetic::<f64>(3);
        let path = dir.path().join("s.csv");
        t.write_csv(&path).unwrap();
        let (back, _) = load_table::<f64>(&path, true).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn standardizer_examples() {
        let train = Table::from_values(array![[3.0f64, 1.0], [7.0, 1.0]]).unwrap();
        let probe = Table::from_values(array![[7.0f64, 1.0], [65.0, 1.0]]).unwrap();
        let out = fit_apply_standardizer(&train, &[&probe], Support::default()).unwrap();
        assert_eq!(out.params.mean, vec![5.0, 1.0]);
        assert_eq!(out.params.std, vec![2.0, 1.0]);
        let p = &out.others[0];
        assert_eq!(p.values()[[0, 0]], 1.0);
        // 65 maps to 30, clamped to the support edge
        assert_eq!(p.values()[[1, 0]], 10.0 - 1e-4);
        assert_eq!(out.others_clamped[0], 1);
        // constant column becomes zeros
        assert!(out.train.values().column(1).iter().all(|&x| x == 0.0));
        assert_eq!(out.train_clamped, 0);
    }

    #[test]
    fn standardizer_rejects_empty_and_roundtrips() {
        let empty = Table::<f64>::from_values(Array2::zeros((0, 2))).unwrap();
        assert!(StandardizationParams::fit(&empty).is_err());

        let t = generate_synthetic::<f64>(1);
        let p = StandardizationParams::fit(&t).unwrap();
        let back = StandardizationParams::<f64>::from_kv_str(&p.to_kv_string()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn standardized_moments() {
        let t = generate_synthetic::<f64>(11);
        let out = fit_apply_standardizer(&t, &[], Support::default()).unwrap();
        for col in out.train.values().columns() {
            let n = col.len() as f64;
            let m = col.sum() / n;
            let s = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn split_counts() {
        let s = split_5050(&labeled(10, 4), SplitSpec::new(0)).unwrap();
        assert_eq!((s.train.n_rows(), s.test.n_rows()), (5, 9));
        assert!(s.train.labels().is_none());
        let s = split_5050(&labeled(11, 0), SplitSpec::new(0)).unwrap();
        assert_eq!((s.train.n_rows(), s.test.n_rows()), (5, 6));
        assert!(split_5050(&labeled(1, 3), SplitSpec::new(0)).is_err());
        assert!(split_5050(&labeled(4, 0).without_labels(), SplitSpec::new(0)).is_err());
    }

    #[test]
    fn split_is_deterministic_and_partitions_rows() {
        let t = labeled(30, 7);
        let a = split_5050(&t, SplitSpec::new(9)).unwrap();
        let b = split_5050(&t, SplitSpec::new(9)).unwrap();
        assert_eq!(a.train_rows, b.train_rows);
        assert_eq!(a.test_rows, b.test_rows);
        let mut all: Vec<usize> = a.train_rows.iter().chain(&a.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert!(a.train_rows.iter().all(|&r| t.labels().unwrap()[r] == 0));
        assert_eq!(a.test.labels().unwrap().iter().filter(|&&l| l == 1).count(), 7);
    }

    #[test]
    fn permutations() {
        assert_eq!(sample_permutations(3, 1, 5, true).unwrap()[0].order(), &[0, 1, 2]);
        assert_eq!(
            sample_permutations(5, 3, 17, false).unwrap(),
            sample_permutations(5, 3, 17, false).unwrap()
        );
        assert!(sample_permutations(0, 3, 1, false).is_err());
        assert!(PermutationSpec::new(vec![0, 0, 1]).is_err());
        assert!(PermutationSpec::new(vec![0, 3, 1]).is_err());

        let distinct = sample_distinct_permutations(4, 5, 2, 100).unwrap();
        for i in 0..distinct.len() {
            for j in 0..i {
                assert_ne!(distinct[i], distinct[j]);
            }
        }
        // only 2 permutations of 2 features exist; both must appear among 3 draws
        let two = sample_distinct_permutations(2, 3, 8, 100).unwrap();
        assert_ne!(two[0], two[1]);
    }

    #[test]
    fn permutations_are_uniform() {
        // chi-square goodness of fit over the 24 permutations of 4 items, 100
        // draws, df = 23; upper 1% critical value from scipy.stats.chi2.ppf(0.99, 23)
        const CRITICAL: f64 = 41.638398118858476;
        let mut failures = 0;
        for seed in 0..20u64 {
            let perms = sample_permutations(4, 100, seed, false).unwrap();
            let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
            for p in perms {
                *counts.entry(p.order().to_vec()).or_default() += 1;
            }
            let expected = 100.0 / 24.0;
            let mut stat = 0.0;
            let mut all: Vec<usize> = (0..4).collect();
            // visit every permutation, including the ones never drawn
            permute_all(&mut all, 0, &mut |p| {
                let c = *counts.get(p).unwrap_or(&0) as f64;
                stat += (c - expected).powi(2) / expected;
            });
            if stat > CRITICAL {
                failures += 1;
            }
        }
        // at alpha = 0.01, 20 independent tests essentially never fail more than twice
        assert!(failures <= 2, "{failures} of 20 seeds rejected uniformity");
    }

    fn permute_all(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&Vec<usize>)) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute_all(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn synthetic_shape_and_cluster_means() {
        let t = generate_synthetic::<f64>(7);
        assert_eq!((t.n_rows(), t.n_features()), (340, 2));
        assert_eq!(t.labels().unwrap().iter().filter(|&&l| l == 1).count(), 40);
        assert_eq!(t, generate_synthetic::<f64>(7));
        assert_ne!(t, generate_synthetic::<f64>(8));
        // third normal cluster is rows 200..300, centered at (5, 5)
        let cluster = t.values().slice(ndarray::s![200..300, ..]);
        let mean = cluster.mean_axis(Axis(0)).unwrap();
        assert!((mean[0] - 5.0).abs() < 0.35 && (mean[1] - 5.0).abs() < 0.35);
    }

    #[test]
    fn contamination_counts() {
        let train = labeled(100, 0).without_labels();
        let pool = labeled(0, 10);
        let same = inject_contamination(&train, &pool, 0.0, 1).unwrap();
        assert_eq!(same.train, train);
        let c = inject_contamination(&train, &pool, 0.05, 1).unwrap();
        assert_eq!(c.train.n_rows(), 105);
        assert_eq!(c.injected.len(), 5);
        assert!(!c.with_replacement);
        let mut uniq = c.injected.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);

        let tiny_pool = labeled(0, 2);
        let r = inject_contamination(&train, &tiny_pool, 0.05, 1).unwrap();
        assert!(r.with_replacement);
        assert_eq!(r.train.n_rows(), 105);

        assert!(inject_contamination(&train, &pool, 0.6, 1).is_err());
        assert!(inject_contamination(&train, &pool, -0.1, 1).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("# datasets\nbreastw = data/breastw.csv\nfoo = foo.csv nolabels\n").unwrap();
        assert_eq!(m[0], ("breastw".into(), "data/breastw.csv".into(), true));
        assert!(!m[1].2);
        assert!(parse_manifest("a = x.csv\na = y.csv\n").is_err());
    }

    proptest! {
        #[test]
        fn permutation_inverse_roundtrip(d in 1usize..8, seed in any::<u64>()) {
            let values = Array2::from_shape_fn((3, d), |(i, j)| (i * d + j) as f64);
            let t = Table::from_values(values).unwrap();
            let p = &sample_permutations(d, 1, seed, false).unwrap()[0];
            let there = apply_permutation(&t, p).unwrap();
            let back = apply_permutation(&there, &p.inverse()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn split_is_a_partition(n_normal in 2usize..40, n_anom in 0usize..10, seed in any::<u64>()) {
            let t = labeled(n_normal, n_anom);
            let s = split_5050(&t, SplitSpec::new(seed)).unwrap();
            let mut rows: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
            rows.sort_unstable();
            prop_assert_eq!(rows, (0..n_normal + n_anom).collect::<Vec<_>>());
            prop_assert_eq!(s.train.n_rows(), n_normal / 2);
        }
    }
}
