use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use vsde::data::{generate_synthetic, load_table, parse_manifest, split_5050, SplitSpec, Table};
use vsde::ensemble::{load_ensemble, save_ensemble, score as score_ensemble, train_ensemble};
use vsde::eval::{dolan_more, mean_std, roc_auc, summary_stats, theta_grid, variance_ratio};
use vsde::kv::{format_kv, read_to_string, write_atomic};
use vsde::pipeline::{run_seed, RunConfig, RunResult};

use crate::settings::Settings;
use crate::CliError;

fn init_threads(threads: usize) {
    if threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Core(vsde::VsdeError::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn load_labeled(path: &Path) -> Result<Table<f64>, CliError> {
    let (table, summary) = load_table::<f64>(path, true)?;
    if summary.rejected_rows > 0 {
        eprintln!(
            "warning: {}: skipped {} rows with non-finite values",
            path.display(),
            summary.rejected_rows
        );
    }
    Ok(table)
}

fn percent(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

pub fn synth(seed: u64, out: &Path) -> Result<(), CliError> {
    let table = generate_synthetic::<f64>(seed);
    table.write_csv(out)?;
    println!(
        "wrote {} rows ({} anomalies) to {}",
        table.n_rows(),
        table.label_partition().map_or(0, |p| p.1.len()),
        out.display()
    );
    Ok(())
}

pub fn train(data: &Path, out: &Path, s: &Settings) -> Result<(), CliError> {
    init_threads(s.threads);
    let (lambda, n_perm, contamination) = s.single()?;
    if contamination > 0.0 {
        return Err(CliError::Config(
            "contamination is an evaluation protocol; use `eval` or `sweep`".into(),
        ));
    }
    let seed = s.seeds[0];
    let table = load_labeled(data)?;
    let cfg = s.run_config(lambda, n_perm, 0.0)?;
    let split = split_5050(&table, SplitSpec::new(seed))?;
    let support = cfg.ensemble.train.pnn.support;
    let std = vsde::data::fit_apply_standardizer(&split.train, &[], support)?;
    let mut ecfg = cfg.ensemble.clone();
    ecfg.train.seed = seed;
    let mut model = train_ensemble(&std.train, &ecfg)?;
    model.standardization = Some(std.params);
    if model.weight_source == vsde::ensemble::WeightSource::Training {
        model.fit_weights(&std.train)?;
    }
    save_ensemble(&model, out)?;
    split.test.write_csv(&out.join("test.csv"))?;
    let rows: String = split.test_rows.iter().map(|r| format!("{r}\n")).collect();
    write_atomic(&out.join("test_rows.txt"), rows.as_bytes())?;
    let mut metrics = vec![
        ("seed".to_string(), seed.to_string()),
        ("n_train".into(), std.train.n_rows().to_string()),
        ("n_test".into(), split.test.n_rows().to_string()),
        ("clamped_train_values".into(), std.train_clamped.to_string()),
    ];
    for (k, log) in model.logs.iter().enumerate() {
        if let Some(last) = log.epochs.last() {
            metrics.push((format!("member_{k}_final_loss"), last.loss.to_string()));
        }
        metrics.push((format!("member_{k}_clip_events"), log.total_clip_events().to_string()));
    }
    metrics.extend(s.describe());
    write_atomic(&out.join("train_metrics.txt"), format_kv(&metrics).as_bytes())?;
    println!(
        "trained {} members on {} rows (seed {seed}); model saved to {}",
        model.n_members(),
        std.train.n_rows(),
        out.display()
    );
    Ok(())
}

fn write_scores(path: &Path, rows: &[usize], scores: &[f64], labels: Option<&[u8]>) -> Result<(), CliError> {
    let mut out = String::from(if labels.is_some() {
        "row_index,anomaly_score,label\n"
    } else {
        "row_index,anomaly_score\n"
    });
    for (i, (&r, &s)) in rows.iter().zip(scores).enumerate() {
        match labels {
            Some(l) => writeln!(out, "{r},{s},{}", l[i]).unwrap(),
            None => writeln!(out, "{r},{s}").unwrap(),
        }
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn score(model_dir: &Path, data: &Path, has_labels: bool, out: &Path) -> Result<(), CliError> {
    let mut model = load_ensemble::<f64>(model_dir)?;
    let (table, summary) = load_table::<f64>(data, has_labels)?;
    let params = model
        .standardization
        .clone()
        .ok_or_else(|| CliError::Config(format!("{} holds no standardization parameters", model_dir.display())))?;
    let support = model.members[0].config().pnn.support;
    let (standardized, clamped) = params.apply(&table, support)?;
    if clamped > 0 {
        log::info!("{clamped} values clamped into the model support");
    }
    let scores = score_ensemble(&mut model, &standardized)?;
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    write_scores(out, &rows, &scores.anomaly, table.labels())?;
    print!("scored {} rows", table.n_rows());
    if summary.rejected_rows > 0 {
        print!(" ({} rows with non-finite values skipped)", summary.rejected_rows);
    }
    println!("; weights {:?}", scores.weights);
    if let Some(labels) = table.labels() {
        if let Ok(auc) = roc_auc(&scores.anomaly, labels) {
            println!("auc = {}", percent(auc));
        }
    }
    Ok(())
}

/// Runs every seed of one configuration, in seed order.
fn run_seeds(
    table: &Table<f64>,
    cfg: &RunConfig<f64>,
    seeds: &[u64],
) -> Result<Vec<(RunResult, vsde::pipeline::RunArtifacts<f64>)>, CliError> {
    seeds
        .par_iter()
        .map(|&seed| run_seed(table, cfg, seed).map_err(CliError::from))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn eval(data: &Path, out: Option<&Path>, s: &Settings) -> Result<(), CliError> {
    init_threads(s.threads);
    let (lambda, n_perm, contamination) = s.single()?;
    let table = load_labeled(data)?;
    let cfg = s.run_config(lambda, n_perm, contamination)?;
    let runs = run_seeds(&table, &cfg, &s.seeds)?;
    let results: Vec<&RunResult> = runs.iter().map(|(r, _)| r).collect();
    let pick = |f: fn(&RunResult) -> f64| results.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let aucs = pick(|r| r.auc);
    let (auc_mean, auc_std) = mean_std(&aucs)?;
    let (spec_mean, _) = mean_std(&pick(|r| r.auc_spectral))?;
    let (avg_mean, _) = mean_std(&pick(|r| r.auc_mean))?;
    let ratios: Vec<f64> = results.iter().filter_map(|r| r.variance_ratio.ratio).collect();
    let mut metrics = vec![
        ("dataset".to_string(), data.display().to_string()),
        ("auc_mean".into(), auc_mean.to_string()),
        ("auc_std".into(), auc_std.to_string()),
        ("auc_per_seed".into(), join(&aucs)),
        ("auc_spectral_mean".into(), spec_mean.to_string()),
        ("auc_mean_ensemble_mean".into(), avg_mean.to_string()),
        ("variance_ratio_per_seed".into(), join(&ratios)),
    ];
    if !ratios.is_empty() {
        metrics.push(("variance_ratio_mean".into(), mean_std(&ratios)?.0.to_string()));
    }
    metrics.extend(s.describe());

    println!(
        "auc = {} ± {} over {} seeds",
        percent(auc_mean),
        percent(auc_std),
        aucs.len()
    );
    for r in &results {
        println!(
            "  seed {}: auc {} (spectral {}, mean {}), variance ratio {}",
            r.seed,
            percent(r.auc),
            percent(r.auc_spectral),
            percent(r.auc_mean),
            r.variance_ratio.ratio.map_or("undefined".into(), |v| format!("{v:.3}"))
        );
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write_atomic(&dir.join("metrics.txt"), format_kv(&metrics).as_bytes())?;
        let mut csv =
            String::from("seed,auc,auc_spectral,auc_mean,variance_ratio,n_train,n_test,injected,clip_events,weights\n");
        for r in &results {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.auc,
                r.auc_spectral,
                r.auc_mean,
                r.variance_ratio.ratio.map_or(String::new(), |v| v.to_string()),
                r.n_train,
                r.n_test,
                r.injected,
                r.clip_events,
                r.weights.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
            )
            .unwrap();
        }
        write_atomic(&dir.join("runs.csv"), csv.as_bytes())?;
        for (r, a) in &runs {
            write_scores(
                &dir.join(format!("scores_seed_{}.csv", r.seed)),
                &a.test_rows,
                &a.anomaly_scores,
                a.test.labels(),
            )?;
        }
    }
    Ok(())
}

pub fn bench(manifest: &Path, out: &Path, n_thetas: usize, s: &Settings) -> Result<(), CliError> {
    init_threads(s.threads);
    let (lambda, n_perm, contamination) = s.single()?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&read_to_string(manifest)?)?;
    let cfg = s.run_config(lambda, n_perm, contamination)?;
    let methods = ["vsde", "vsde_spectral", "vsde_mean"];
    let mut names = Vec::new();
    let mut table_csv = String::from("method,dataset,auc_mean,auc_std\n");
    let mut columns: Vec<[f64; 3]> = Vec::new();
    for (name, path, has_labels) in entries {
        if !has_labels {
            eprintln!("warning: skipping `{name}`: AUC needs labels");
            continue;
        }
        let path = base.join(path);
        let table = load_labeled(&path)?;
        let runs = run_seeds(&table, &cfg, &s.seeds)?;
        let mut col = [0.0; 3];
        for (m, method) in methods.iter().enumerate() {
            let aucs: Vec<f64> = runs
                .iter()
                .map(|(r, _)| [r.auc, r.auc_spectral, r.auc_mean][m])
                .collect();
            let (mean, std) = mean_std(&aucs)?;
            col[m] = mean;
            writeln!(table_csv, "{method},{name},{mean},{std}").unwrap();
        }
        println!(
            "{name}: auc = {} ± {}",
            percent(col[0]),
            percent(mean_std(&runs.iter().map(|(r, _)| r.auc).collect::<Vec<_>>())?.1)
        );
        names.push(name);
        columns.push(col);
    }
    if names.is_empty() {
        return Err(CliError::Config(format!(
            "{} lists no labeled datasets",
            manifest.display()
        )));
    }
    create_dir(out)?;
    write_atomic(&out.join("auc_table.csv"), table_csv.as_bytes())?;

    let auc = Array2::from_shape_fn((methods.len(), names.len()), |(m, j)| columns[j][m]);
    let thetas = theta_grid(n_thetas);
    let curves = dolan_more(auc.view(), &thetas)?;
    let mut profile = String::from("method,theta,coverage\n");
    for (method, curve) in methods.iter().zip(&curves) {
        for (t, c) in curve.thetas.iter().zip(&curve.coverage) {
            writeln!(profile, "{method},{t},{c}").unwrap();
        }
    }
    write_atomic(&out.join("profile.csv"), profile.as_bytes())?;

    let mut summary = String::from("method,mean,median,q1,q3,min,max\n");
    for (m, method) in methods.iter().enumerate() {
        let st = summary_stats(&auc.row(m).to_vec())?;
        writeln!(
            summary,
            "{method},{},{},{},{},{},{}",
            st.mean, st.median, st.q1, st.q3, st.min, st.max
        )
        .unwrap();
    }
    write_atomic(&out.join("summary.csv"), summary.as_bytes())?;
    println!("wrote auc_table.csv, profile.csv and summary.csv to {}", out.display());
    Ok(())
}

pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.0, 1.0, 3.33, 10.0];

pub fn sweep(data: &Path, out: Option<&Path>, s: &Settings) -> Result<(), CliError> {
    init_threads(s.threads);
    if s.lambda_zero {
        return Err(CliError::Config("--lambda-zero conflicts with a lambda sweep".into()));
    }
    let table = load_labeled(data)?;
    let lambdas: Vec<f64> = if s.lambda_set {
        s.lambda.clone()
    } else {
        DEFAULT_LAMBDA_GRID.to_vec()
    };
    let mut csv = String::from("n_perm,contamination,lambda,auc_mean,auc_std,baseline_auc,ratio\n");
    println!(
        "{:>6} {:>13} {:>7} {:>8} {:>8}",
        "n_perm", "contamination", "lambda", "auc", "ratio"
    );
    for &n_perm in &s.n_perm {
        for &rate in &s.contamination {
            // lambda = 0 is the baseline of every row in this block
            let mut grid = vec![0.0];
            grid.extend(lambdas.iter().copied().filter(|&l| l != 0.0));
            let mut aucs = Vec::with_capacity(grid.len());
            for &lambda in &grid {
                let cfg = s.run_config(lambda, n_perm, rate)?;
                let runs = run_seeds(&table, &cfg, &s.seeds)?;
                aucs.push(mean_std(&runs.iter().map(|(r, _)| r.auc).collect::<Vec<_>>())?);
            }
            let baseline = aucs[0].0;
            for &lambda in &lambdas {
                let idx = grid.iter().position(|&g| g == lambda).expect("grid holds every lambda");
                let (mean, std) = aucs[idx];
                let ratio = if baseline > 0.0 { mean / baseline } else { f64::NAN };
                writeln!(csv, "{n_perm},{rate},{lambda},{mean},{std},{baseline},{ratio}").unwrap();
                println!("{n_perm:>6} {rate:>13} {lambda:>7} {:>8} {ratio:>8.4}", percent(mean));
            }
        }
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
    }
    Ok(())
}

pub fn diagnose(scores: &Path, data: &Path, seed: u64, repeats: usize, out: Option<&Path>) -> Result<(), CliError> {
    if repeats == 0 {
        return Err(CliError::Config("repeats must be positive".into()));
    }
    let table = load_labeled(data)?;
    let labels = table.labels().expect("labeled table");
    let (scored, _) = load_table::<f64>(scores, false)?;
    if scored.n_features() < 2 {
        return Err(CliError::Config(format!(
            "{}: expected row_index and anomaly_score columns",
            scores.display()
        )));
    }
    let mut log_density = Vec::with_capacity(scored.n_rows());
    let mut sub_labels = Vec::with_capacity(scored.n_rows());
    for r in 0..scored.n_rows() {
        let row = scored.row(r);
        let idx = row[0];
        if idx < 0.0 || idx.fract() != 0.0 || idx as usize >= labels.len() {
            return Err(CliError::Config(format!(
                "{}: row index {idx} does not address a row of {}",
                scores.display(),
                data.display()
            )));
        }
        log_density.push(-row[1]);
        sub_labels.push(labels[idx as usize]);
    }
    let reports = (0..repeats as u64)
        .map(|k| variance_ratio(&log_density, &sub_labels, seed + k))
        .collect::<Result<Vec<_>, _>>()?;
    let ratios: Vec<f64> = reports.iter().filter_map(|r| r.ratio).collect();
    let first = &reports[0];
    let mut metrics = vec![
        ("sigma2_normal".to_string(), first.sigma2_normal.to_string()),
        ("sigma2_anomal".into(), first.sigma2_anomal.to_string()),
        ("mu_normal".into(), first.mu_normal.to_string()),
        ("mu_anomal".into(), first.mu_anomal.to_string()),
        ("subsample_size".into(), first.subsample_size.to_string()),
        ("seed".into(), seed.to_string()),
        ("repeats".into(), repeats.to_string()),
        ("ratio_per_repeat".into(), join(&ratios)),
    ];
    match mean_std(&ratios) {
        Ok((m, _)) => {
            metrics.push(("ratio_mean".into(), m.to_string()));
            println!("variance ratio = {m:.4} over {} subsample(s)", ratios.len());
        }
        Err(_) => println!("variance ratio undefined: anomaly log-likelihoods are constant"),
    }
    let text = format_kv(&metrics);
    print!("{text}");
    if let Some(path) = out {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}
