//! Command implementations behind the `cdm` binary: declarative TOML
//! configuration with canonical hashing, dataset generation and ingestion,
//! model training and persistence, conformal prediction over test rows, the
//! replicated experiment harness, and results inspection.

use cdm_core::bench::{
    aggregate, calibrate_scores, choose_bandwidth, evaluate_dataset, predict_points,
    EngineConfigs, MethodAggregate, MethodSpec, MethodTag, MlpRegressor, ReplicateRecord,
    SelectionPoint,
};
use cdm_core::checkpoint::{self, Checkpoint, CheckpointMeta};
use cdm_core::conformal::{
    balance_weight, build_prediction_set, Bandwidth, CalibrationRecord, WeightedScoreSet,
};
use cdm_core::datagen::{
    gen_dataset, read_dataset_csv, read_table_csv, semi_synthetic, write_dataset_csv, Dataset,
    DgpConfig, SemiSyntheticConfig, Split, TableColumns,
};
use cdm_core::diffusion::{train_denoiser, DiffusionTrainConfig};
use cdm_core::error::{Error, Result};
use cdm_core::propensity::fit_gbm;
use cdm_core::rng::Seed;
use cdm_core::CODE_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Experiment-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub id: String,
    pub replicates: usize,
    pub root_seed: u64,
    pub methods: Vec<MethodTag>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            id: "experiment".into(),
            replicates: 50,
            root_seed: 0,
            methods: vec![
                MethodTag::Cdm,
                MethodTag::CdmNolocal,
                MethodTag::Mlp,
                MethodTag::Naive,
            ],
        }
    }
}

/// Conformal settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConformalSection {
    pub alpha: f64,
    pub m_samples: usize,
    pub bandwidth_grid: Vec<f64>,
}

impl Default for ConformalSection {
    fn default() -> Self {
        ConformalSection {
            alpha: 0.05,
            m_samples: 40,
            bandwidth_grid: cdm_core::bench::default_bandwidth_grid(),
        }
    }
}

/// Semi-synthetic data source over a user CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSyntheticSection {
    pub csv: PathBuf,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_fit_fraction")]
    pub fit_fraction: f64,
}

fn default_fit_fraction() -> f64 {
    0.4
}

/// The full declarative configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dgp: DgpConfig,
    pub semi_synthetic: Option<SemiSyntheticSection>,
    pub diffusion: DiffusionTrainConfig,
    pub propensity: cdm_core::propensity::GbmConfig,
    pub mlp: cdm_core::bench::MlpTrainConfig,
    pub conformal: ConformalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.diffusion.validate()?;
        if !(self.conformal.alpha > 0.0 && self.conformal.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0,1), got {}",
                self.conformal.alpha
            )));
        }
        if self.conformal.m_samples == 0 {
            return Err(Error::Config("m_samples must be ≥ 1".into()));
        }
        if self.conformal.bandwidth_grid.is_empty() {
            return Err(Error::Config("bandwidth grid must not be empty".into()));
        }
        if self.experiment.replicates == 0 {
            return Err(Error::Config("replicates must be ≥ 1".into()));
        }
        if self.experiment.methods.is_empty() {
            return Err(Error::Config("at least one method required".into()));
        }
        if let Some(ss) = &self.semi_synthetic {
            if !ss.csv.exists() {
                return Err(Error::Config(format!(
                    "semi-synthetic table {} does not exist",
                    ss.csv.display()
                )));
            }
            if !(ss.fit_fraction > 0.0 && ss.fit_fraction < 1.0) {
                return Err(Error::Config("fit_fraction must lie in (0,1)".into()));
            }
        }
        Ok(())
    }

    /// Canonical hash: the config is re-serialized from its typed form, so
    /// key order and whitespace in the source file cannot affect it.
    pub fn canonical_hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        let digest = h.finalize();
        digest.iter().fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }

    pub fn engines(&self) -> EngineConfigs {
        EngineConfigs {
            diffusion: self.diffusion.clone(),
            propensity: self.propensity,
            mlp: self.mlp.clone(),
        }
    }

    pub fn method_spec(&self, tag: MethodTag) -> MethodSpec {
        MethodSpec {
            tag,
            alpha: self.conformal.alpha,
            m_samples: self.conformal.m_samples,
            bandwidth_grid: self.conformal.bandwidth_grid.clone(),
        }
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Generates a dataset (synthetic, or semi-synthetic when that section is
/// present) and writes it as CSV with embedded provenance.
pub fn cmd_gen_data(config: &ExperimentConfig, seed_override: Option<u64>, out: &Path) -> Result<()> {
    let hash = config.canonical_hash();
    let dataset = match &config.semi_synthetic {
        Some(ss) => {
            let columns = TableColumns {
                treatment: ss.treatment.clone(),
                outcome: ss.outcome.clone(),
                covariates: if ss.covariates.is_empty() {
                    None
                } else {
                    Some(ss.covariates.clone())
                },
            };
            let (x, t, y) = read_table_csv(&ss.csv, &columns)?;
            let ss_config = SemiSyntheticConfig {
                fit_fraction: ss.fit_fraction,
                n_train: config.dgp.n_train,
                n_cal: config.dgp.n_cal,
                n_test: config.dgp.n_test,
                seed: seed_override.unwrap_or(config.dgp.seed),
                gbm: config.propensity,
                ..SemiSyntheticConfig::default()
            };
            let (ds, info) = semi_synthetic(x.view(), &t, &y, &ss_config)?;
            log::info!(
                "semi-synthetic generation: residual IQR {:.4}, {} fitting rows, {} pool rows",
                info.residual_iqr,
                info.n_fit,
                info.n_pool
            );
            ds
        }
        None => {
            let mut dgp = config.dgp;
            if let Some(s) = seed_override {
                dgp.seed = s;
            }
            gen_dataset(&dgp)?
        }
    };
    let seed_used = seed_override.unwrap_or(config.dgp.seed);
    write_dataset_csv(
        &dataset,
        out,
        &[
            ("config_hash", hash),
            ("code_version", CODE_VERSION.to_string()),
            ("seed", seed_used.to_string()),
        ],
    )?;
    log::info!("wrote {} rows to {}", dataset.n_rows(), out.display());
    Ok(())
}

/// Which score source `train` fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainKind {
    Diffusion,
    Mlp,
}

fn treated_train_rows(ds: &Dataset) -> Result<(ndarray::Array2<f64>, Vec<f64>)> {
    let idx: Vec<usize> = ds
        .indices(Split::Train)?
        .into_iter()
        .filter(|&i| ds.t[i])
        .collect();
    if idx.is_empty() {
        return Err(Error::Data("no treated training rows".into()));
    }
    let mut x = ndarray::Array2::zeros((idx.len(), ds.dim()));
    let mut y = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        x.row_mut(k).assign(&ds.x.row(i));
        y.push(ds.y[i]);
    }
    Ok((x, y))
}

/// Trains the generative score source (or the MLP baseline regressor) on
/// treated training rows and writes a checkpoint.
pub fn cmd_train(
    config: &ExperimentConfig,
    kind: TrainKind,
    seed_override: Option<u64>,
    data_path: &Path,
    out_model: &Path,
) -> Result<()> {
    let ds = read_dataset_csv(data_path)?;
    if ds.split.is_none() {
        return Err(Error::Data(
            "dataset has no split tags; train needs train/cal/test".into(),
        ));
    }
    let (x, y) = treated_train_rows(&ds)?;
    let root = Seed::from_u64(seed_override.unwrap_or(config.experiment.root_seed));
    let meta = CheckpointMeta::new(config.canonical_hash());
    match kind {
        TrainKind::Diffusion => {
            let (model, report) =
                train_denoiser(x.view(), &y, &config.diffusion, root.child("train"))?;
            for loss in &report.history {
                log::debug!(
                    "epoch {} train_mse {:.6}{}",
                    loss.epoch,
                    loss.train_mse,
                    loss.val_mse
                        .map(|v| format!(" val_mse {v:.6}"))
                        .unwrap_or_default()
                );
            }
            log::info!(
                "diffusion training: {} epochs run, best epoch {}, steps {}",
                report.epochs_run,
                report.best_epoch,
                model.steps()
            );
            checkpoint::save(&Checkpoint::Diffusion(model), &meta, out_model)?;
        }
        TrainKind::Mlp => {
            let (model, report) =
                MlpRegressor::train(x.view(), &y, &config.mlp, root.child("train"))?;
            for loss in &report.history {
                log::debug!(
                    "epoch {} train_mse {:.6}{}",
                    loss.epoch,
                    loss.train_mse,
                    loss.val_mse
                        .map(|v| format!(" val_mse {v:.6}"))
                        .unwrap_or_default()
                );
            }
            log::info!(
                "mlp training: {} epochs run, best epoch {}",
                report.epochs_run,
                report.best_epoch
            );
            checkpoint::save(&Checkpoint::MlpRegressor(model), &meta, out_model)?;
        }
    }
    log::info!("wrote checkpoint {}", out_model.display());
    Ok(())
}

/// One emitted prediction row.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub row: usize,
    /// Conformal quantile; `None` encodes an infinite quantile (entire-line
    /// set, also flagged inside the set).
    pub quantile: Option<f64>,
    pub test_mass: f64,
    pub set: cdm_core::conformal::PredictionSet,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionHeader<'a> {
    config_hash: &'a str,
    code_version: &'a str,
    alpha: f64,
    m_samples: usize,
    n_rows: usize,
}

/// Loads a checkpoint and a tagged dataset, fits the propensity model on the
/// training split, calibrates on treated calibration rows, and writes one
/// JSON line per test row with the prediction set, quantile, and normalized
/// test-point mass.
pub fn cmd_predict(
    config: &ExperimentConfig,
    seed_override: Option<u64>,
    model_path: &Path,
    data_path: &Path,
    out_path: &Path,
) -> Result<()> {
    let (ckpt, ckpt_meta) = checkpoint::load(model_path)?;
    let config_hash = config.canonical_hash();
    if ckpt_meta.config_hash != config_hash {
        log::warn!(
            "checkpoint config hash {} differs from current config {}",
            &ckpt_meta.config_hash[..12.min(ckpt_meta.config_hash.len())],
            &config_hash[..12]
        );
    }
    let ds = read_dataset_csv(data_path)?;
    if ds.split.is_none() {
        return Err(Error::Data("dataset has no split tags".into()));
    }
    let train_idx = ds.indices(Split::Train)?;
    let cal_idx: Vec<usize> = ds
        .indices(Split::Cal)?
        .into_iter()
        .filter(|&i| ds.t[i])
        .collect();
    let test_idx = ds.indices(Split::Test)?;
    if cal_idx.is_empty() {
        return Err(Error::Data("no treated calibration rows".into()));
    }
    if test_idx.is_empty() {
        return Err(Error::Data("no test rows".into()));
    }
    let take = |rows: &[usize]| {
        let mut m = ndarray::Array2::zeros((rows.len(), ds.dim()));
        for (k, &i) in rows.iter().enumerate() {
            m.row_mut(k).assign(&ds.x.row(i));
        }
        m
    };
    let x_train = take(&train_idx);
    let t_train: Vec<bool> = train_idx.iter().map(|&i| ds.t[i]).collect();
    let x_cal = take(&cal_idx);
    let y_cal: Vec<f64> = cal_idx.iter().map(|&i| ds.y[i]).collect();
    let x_test = take(&test_idx);
    let root =
        Seed::from_u64(seed_override.unwrap_or(config.experiment.root_seed)).child("predict-cmd");
    let propensity = fit_gbm(x_train.view(), &t_train, &config.propensity)?;
    let alpha = config.conformal.alpha;
    let m_samples = config.conformal.m_samples;

    let rows: Vec<PredictionRow> = match ckpt {
        Checkpoint::Diffusion(model) => {
            if model.cov_dim != ds.dim() {
                return Err(Error::Shape(format!(
                    "checkpoint covariate dimension {} != dataset dimension {}",
                    model.cov_dim,
                    ds.dim()
                )));
            }
            let records = calibrate_scores(
                &model,
                &propensity,
                x_cal.view(),
                &y_cal,
                m_samples,
                root.child("cal"),
            )?;
            let c_factor = if config.conformal.bandwidth_grid.len() == 1 {
                config.conformal.bandwidth_grid[0]
            } else {
                let (x_tr, y_tr) = treated_train_rows(&ds)?;
                let (sel_records, sel_points) = selection_inputs(
                    &model,
                    &propensity,
                    x_tr.view(),
                    &y_tr,
                    m_samples,
                    records.len(),
                    root.child("select"),
                )?;
                choose_bandwidth(
                    &config.conformal.bandwidth_grid,
                    &sel_records,
                    &sel_points,
                    alpha,
                )?
            };
            log::info!("bandwidth factor: {c_factor}");
            let bandwidth = if c_factor.is_finite() {
                Bandwidth::Fixed(c_factor * (ds.dim() as f64).sqrt())
            } else {
                Bandwidth::NoLocalization
            };
            let preds = predict_points(
                &model,
                &propensity,
                &records,
                x_test.view(),
                bandwidth,
                alpha,
                m_samples,
                root.child("predict"),
            )?;
            preds
                .into_iter()
                .enumerate()
                .map(|(k, p)| PredictionRow {
                    row: k,
                    quantile: p.quantile.is_finite().then_some(p.quantile),
                    test_mass: p.test_mass,
                    set: p.set,
                })
                .collect()
        }
        Checkpoint::MlpRegressor(model) => {
            if model.cov_dim != ds.dim() {
                return Err(Error::Shape(format!(
                    "checkpoint covariate dimension {} != dataset dimension {}",
                    model.cov_dim,
                    ds.dim()
                )));
            }
            let mut records = Vec::with_capacity(cal_idx.len());
            for j in 0..x_cal.nrows() {
                let x = x_cal.row(j).to_vec();
                let score = (y_cal[j] - model.predict(&x)?).abs();
                let pi = propensity.predict_propensity(&x)?;
                records.push(CalibrationRecord::new(x, score, balance_weight(true, pi)?)?);
            }
            let mut rows = Vec::with_capacity(x_test.nrows());
            for k in 0..x_test.nrows() {
                let x = x_test.row(k).to_vec();
                let local = vec![1.0; records.len() + 1];
                let pi = propensity.predict_propensity(&x)?;
                let wset =
                    WeightedScoreSet::assemble(&records, &local, balance_weight(true, pi)?)?;
                let q = wset.quantile(alpha)?;
                let set = build_prediction_set(&[model.predict(&x)?], q)?;
                rows.push(PredictionRow {
                    row: k,
                    quantile: q.is_finite().then_some(q),
                    test_mass: wset.test_mass,
                    set,
                });
            }
            rows
        }
        other => {
            return Err(Error::Config(format!(
                "checkpoint kind '{}' cannot drive prediction",
                other.kind()
            )));
        }
    };

    let mut out = String::new();
    let header = PredictionHeader {
        config_hash: &config_hash,
        code_version: CODE_VERSION,
        alpha,
        m_samples,
        n_rows: rows.len(),
    };
    out.push_str(&serde_json::to_string(&header).map_err(|e| Error::Data(e.to_string()))?);
    out.push('\n');
    let mut entire_line = 0usize;
    for row in &rows {
        if row.set.entire_line {
            entire_line += 1;
        }
        out.push_str(&serde_json::to_string(row).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    atomic_write(out_path, out.as_bytes())?;
    log::info!(
        "wrote {} prediction rows ({} entire-line) to {}",
        rows.len(),
        entire_line,
        out_path.display()
    );
    Ok(())
}

/// Bandwidth-selection inputs built from treated training rows: 15% become
/// pseudo-test points with their observed (treated) outcomes as truth, the
/// rest form the pseudo-calibration set (capped at the deployed calibration
/// size so the validated finite-mass behavior matches prediction).
fn selection_inputs(
    model: &cdm_core::diffusion::DiffusionModel,
    propensity: &cdm_core::propensity::BoostedTreesModel,
    x_treated: ndarray::ArrayView2<'_, f64>,
    y_treated: &[f64],
    m_samples: usize,
    deployed_cal_size: usize,
    seed: Seed,
) -> Result<(Vec<CalibrationRecord>, Vec<SelectionPoint>)> {
    use cdm_core::conformal::{localization_offset, nonconformity_score};
    use rand::Rng;
    let n = x_treated.nrows();
    if n < 2 {
        return Ok((Vec::new(), Vec::new()));
    }
    let d = x_treated.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng_split = seed.child("select.split").rng();
    for i in (1..n).rev() {
        order.swap(i, rng_split.gen_range(0..=i));
    }
    let n_holdout = ((0.15 * n as f64).floor() as usize).clamp(1, n - 1);
    let (holdout, rest) = order.split_at(n_holdout);
    let cap = deployed_cal_size.max(1).min(rest.len());
    let rest = &rest[..cap];
    let take = |rows: &[usize]| {
        let mut m = ndarray::Array2::zeros((rows.len(), d));
        for (k, &i) in rows.iter().enumerate() {
            m.row_mut(k).assign(&x_treated.row(i));
        }
        m
    };
    let x_cal = take(rest);
    let cal_seeds: Vec<Seed> = (0..rest.len())
        .map(|j| seed.child_indexed("select.cal", j))
        .collect();
    let cal_samples = model.sample_many(x_cal.view(), m_samples, &cal_seeds)?;
    let mut records = Vec::with_capacity(rest.len());
    for (j, &i) in rest.iter().enumerate() {
        let x = x_cal.row(j).to_vec();
        let score = nonconformity_score(y_treated[i], &cal_samples[j])?;
        let pi = propensity.predict_propensity(&x)?;
        records.push(CalibrationRecord::new(x, score, balance_weight(true, pi)?)?);
    }
    let x_hold = take(holdout);
    let test_seeds: Vec<Seed> = (0..holdout.len())
        .map(|k| seed.child_indexed("select.test", k))
        .collect();
    let test_samples = model.sample_many(x_hold.view(), m_samples, &test_seeds)?;
    let mut points = Vec::with_capacity(holdout.len());
    for (k, &i) in holdout.iter().enumerate() {
        let x = x_hold.row(k).to_vec();
        let mut rng = seed.child_indexed("select.loc", k).rng();
        let z = localization_offset(d, &mut rng);
        let pi = propensity.predict_propensity(&x)?;
        points.push(SelectionPoint {
            x,
            truth: y_treated[i],
            samples: test_samples[k].clone(),
            z,
            balance_weight: balance_weight(true, pi)?,
        });
    }
    Ok((records, points))
}

/// Cell result persisted for resumability; wallclock stays out of the
/// canonical results document.
#[derive(Debug, Serialize, Deserialize)]
struct CellFile {
    record: ReplicateRecord,
    wallclock_seconds: f64,
    selected_bandwidth: Option<f64>,
}

fn record_to_csv_row(r: &ReplicateRecord) -> Vec<String> {
    vec![
        r.experiment_id.clone(),
        r.method.clone(),
        r.replicate.to_string(),
        r.seed.to_string(),
        format!("{}", r.coverage),
        format!("{}", r.median_length),
        r.infinite_count.to_string(),
        r.config_hash.clone(),
        r.code_version.clone(),
    ]
}

const RESULTS_HEADER: [&str; 9] = [
    "experiment_id",
    "method",
    "replicate",
    "seed",
    "coverage",
    "median_length",
    "infinite_count",
    "config_hash",
    "code_version",
];

/// Renders the aggregate table: method, coverage mean and 95% CI, length
/// mean and 95% CI, infinite-set count, below-nominal flag.
pub fn render_summary(aggregates: &[MethodAggregate], alpha: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>4}  {:>8} {:>18}  {:>10} {:>22}  {:>6} {:>6}",
        "method", "reps", "coverage", "95% CI", "med.length", "95% CI", "inf", "flag"
    );
    for a in aggregates {
        let flag = if a.mean_coverage < 1.0 - alpha {
            "BELOW"
        } else {
            ""
        };
        let len_str = if a.mean_length.is_finite() {
            format!("{:.3}", a.mean_length)
        } else {
            "inf".into()
        };
        let len_ci = if a.length_ci.0.is_finite() {
            format!("[{:.3}, {:.3}]", a.length_ci.0, a.length_ci.1)
        } else {
            "[inf, inf]".into()
        };
        let _ = writeln!(
            out,
            "{:<14} {:>4}  {:>8.3} {:>18}  {:>10} {:>22}  {:>6} {:>6}",
            a.method,
            a.n_replicates,
            a.mean_coverage,
            format!("[{:.3}, {:.3}]", a.coverage_ci.0, a.coverage_ci.1),
            len_str,
            len_ci,
            a.total_infinite_sets,
            flag
        );
    }
    out
}

/// Runs every (method × replicate) cell, resuming any cell whose persisted
/// record carries the current config hash, then writes the canonical results
/// CSV, a timing sidecar, and a human-readable summary. Returns the summary.
pub fn cmd_experiment(
    config: &ExperimentConfig,
    seed_override: Option<u64>,
    workers: usize,
    out_dir: &Path,
) -> Result<String> {
    let hash = config.canonical_hash();
    let root_seed = seed_override.unwrap_or(config.experiment.root_seed);
    let root = Seed::from_u64(root_seed);
    std::fs::create_dir_all(out_dir.join("cells"))?;

    // Semi-synthetic experiments load the source table once.
    let table = match &config.semi_synthetic {
        Some(ss) => {
            let columns = TableColumns {
                treatment: ss.treatment.clone(),
                outcome: ss.outcome.clone(),
                covariates: if ss.covariates.is_empty() {
                    None
                } else {
                    Some(ss.covariates.clone())
                },
            };
            Some((read_table_csv(&ss.csv, &columns)?, ss.fit_fraction))
        }
        None => None,
    };

    let engines = config.engines();
    let mut cells: Vec<(MethodTag, usize)> = Vec::new();
    for &tag in &config.experiment.methods {
        if tag.is_external() {
            log::info!("method '{tag}' is an external-results slot; skipping computation");
            continue;
        }
        for r in 0..config.experiment.replicates {
            cells.push((tag, r));
        }
    }

    let run_cell = |&(tag, r): &(MethodTag, usize)| -> std::result::Result<CellFile, (MethodTag, usize, String)> {
        let cell_path = out_dir.join("cells").join(format!("{tag}-r{r:04}.json"));
        if let Ok(text) = std::fs::read_to_string(&cell_path) {
            if let Ok(cell) = serde_json::from_str::<CellFile>(&text) {
                if cell.record.config_hash == hash && cell.record.code_version == CODE_VERSION {
                    log::info!("cell {tag} replicate {r}: reusing existing record");
                    return Ok(cell);
                }
            }
        }
        let seed = root
            .child(&format!("method:{tag}"))
            .child_indexed("replicate", r);
        let spec = config.method_spec(tag);
        let outcome = match &table {
            Some(((x, t, y), fit_fraction)) => {
                let ss_config = SemiSyntheticConfig {
                    fit_fraction: *fit_fraction,
                    n_train: config.dgp.n_train,
                    n_cal: config.dgp.n_cal,
                    n_test: config.dgp.n_test,
                    seed: seed.child("data").as_u64(),
                    gbm: config.propensity,
                    ..SemiSyntheticConfig::default()
                };
                semi_synthetic(x.view(), t, y, &ss_config)
                    .and_then(|(ds, _)| evaluate_dataset(&ds, &spec, &engines, seed))
            }
            None => cdm_core::bench::run_replicate(&config.dgp, &spec, &engines, seed),
        };
        match outcome {
            Ok(o) => {
                let cell = CellFile {
                    record: ReplicateRecord {
                        experiment_id: config.experiment.id.clone(),
                        method: tag.to_string(),
                        replicate: r,
                        seed: seed.as_u64(),
                        coverage: o.coverage,
                        median_length: o.median_length,
                        infinite_count: o.infinite_count,
                        config_hash: hash.clone(),
                        code_version: CODE_VERSION.to_string(),
                    },
                    wallclock_seconds: o.wallclock_seconds,
                    selected_bandwidth: o.selected_bandwidth,
                };
                let json =
                    serde_json::to_string_pretty(&cell).map_err(|e| (tag, r, e.to_string()))?;
                atomic_write(&cell_path, json.as_bytes()).map_err(|e| (tag, r, e.to_string()))?;
                log::info!(
                    "cell {tag} replicate {r}: coverage {:.3}, median length {:.3}, {:.1}s",
                    cell.record.coverage,
                    cell.record.median_length,
                    cell.wallclock_seconds
                );
                Ok(cell)
            }
            Err(e) => {
                let msg = e.to_string();
                let err_path = out_dir
                    .join("cells")
                    .join(format!("{tag}-r{r:04}.error.txt"));
                let _ = atomic_write(&err_path, msg.as_bytes());
                Err((tag, r, msg))
            }
        }
    };

    let results: Vec<std::result::Result<CellFile, (MethodTag, usize, String)>> = if workers == 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if workers > 0 {
            builder = builder.num_threads(workers);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        use rayon::prelude::*;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    };

    let mut records: Vec<ReplicateRecord> = Vec::new();
    let mut timings: Vec<(String, usize, f64)> = Vec::new();
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(cell) => {
                timings.push((
                    cell.record.method.clone(),
                    cell.record.replicate,
                    cell.wallclock_seconds,
                ));
                records.push(cell.record);
            }
            Err((tag, r, msg)) => failures.push(format!("{tag} replicate {r}: {msg}")),
        }
    }
    records.sort_by(|a, b| a.method.cmp(&b.method).then(a.replicate.cmp(&b.replicate)));
    timings.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut csv_out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut csv_out);
        w.write_record(RESULTS_HEADER).map_err(Error::from)?;
        for r in &records {
            w.write_record(record_to_csv_row(r)).map_err(Error::from)?;
        }
        w.flush()?;
    }
    atomic_write(&out_dir.join("results.csv"), &csv_out)?;

    let mut timing_out = String::from("method,replicate,wallclock_seconds\n");
    for (m, r, w) in &timings {
        let _ = writeln!(timing_out, "{m},{r},{w}");
    }
    atomic_write(&out_dir.join("timings.csv"), timing_out.as_bytes())?;

    let aggregates = aggregate(&records);
    let summary = render_summary(&aggregates, config.conformal.alpha);
    atomic_write(&out_dir.join("summary.txt"), summary.as_bytes())?;

    if !failures.is_empty() {
        return Err(Error::Data(format!(
            "{} cell(s) failed:\n{}",
            failures.len(),
            failures.join("\n")
        )));
    }
    log::info!("wrote results to {}", out_dir.display());
    Ok(summary)
}

/// Reads a results CSV (ours, or an externally produced per-replicate table
/// with at least method, coverage, and median_length columns).
pub fn read_results_csv(path: &Path) -> Result<Vec<ReplicateRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let method_idx =
        find("method").ok_or_else(|| Error::Data("results file missing 'method' column".into()))?;
    let coverage_idx = find("coverage")
        .ok_or_else(|| Error::Data("results file missing 'coverage' column".into()))?;
    let length_idx = find("median_length")
        .ok_or_else(|| Error::Data("results file missing 'median_length' column".into()))?;
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let get = |idx: Option<usize>| idx.and_then(|j| rec.get(j)).map(str::trim);
        let parse_f = |v: Option<&str>, name: &str| -> Result<f64> {
            v.ok_or_else(|| Error::Data(format!("row {i}: missing {name}")))?
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("row {i}: bad {name}: {e}")))
        };
        records.push(ReplicateRecord {
            experiment_id: get(find("experiment_id")).unwrap_or("external").to_string(),
            method: get(Some(method_idx))
                .ok_or_else(|| Error::Data(format!("row {i}: missing method")))?
                .to_string(),
            replicate: get(find("replicate"))
                .and_then(|v| v.parse().ok())
                .unwrap_or(i),
            seed: get(find("seed")).and_then(|v| v.parse().ok()).unwrap_or(0),
            coverage: parse_f(get(Some(coverage_idx)), "coverage")?,
            median_length: parse_f(get(Some(length_idx)), "median_length")?,
            infinite_count: get(find("infinite_count"))
                .and_then(|v| v.parse().ok())
                .unwrap_or(0),
            config_hash: get(find("config_hash")).unwrap_or("-").to_string(),
            code_version: get(find("code_version")).unwrap_or("-").to_string(),
        });
    }
    Ok(records)
}

/// Prints per-method aggregates from a results document, optionally merging
/// externally produced per-replicate CSVs (reserved method slots), flagging
/// methods below the nominal level, and refusing mixed config hashes unless
/// forced.
pub fn cmd_inspect(
    results_path: &Path,
    externals: &[PathBuf],
    alpha: f64,
    force: bool,
) -> Result<String> {
    let mut records = read_results_csv(results_path)?;
    for ext in externals {
        records.extend(read_results_csv(ext)?);
    }
    if records.is_empty() {
        return Ok("no records\n".to_string());
    }
    let hashes: std::collections::BTreeSet<&str> = records
        .iter()
        .map(|r| r.config_hash.as_str())
        .filter(|h| *h != "-")
        .collect();
    if hashes.len() > 1 && !force {
        return Err(Error::Data(format!(
            "results mix {} distinct config hashes; pass --force to aggregate anyway",
            hashes.len()
        )));
    }
    let mut by_method: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *by_method.entry(r.method.as_str()).or_default() += 1;
    }
    let aggregates = aggregate(&records);
    let mut out = render_summary(&aggregates, alpha);
    for a in &aggregates {
        if a.mean_coverage < 1.0 - alpha {
            let _ = writeln!(
                out,
                "flag: method '{}' mean coverage {:.3} is below the nominal {:.3}",
                a.method,
                a.mean_coverage,
                1.0 - alpha
            );
        }
        if a.n_infinite_median > 0 || a.total_infinite_sets > 0 {
            let _ = writeln!(
                out,
                "note: method '{}' produced {} infinite-median replicate(s), {} infinite set(s) total",
                a.method, a.n_infinite_median, a.total_infinite_sets
            );
        }
    }
    let _ = writeln!(
        out,
        "records: {} across {} method(s)",
        records.len(),
        by_method.len()
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_hash_ignores_key_order_and_whitespace() {
        let a: ExperimentConfig = toml::from_str(
            "[experiment]\nid = \"x\"\nreplicates = 3\n\n[dgp]\nd = 10\nn_train = 100\nn_cal = 50\nn_test = 10\n",
        )
        .unwrap();
        let b: ExperimentConfig = toml::from_str(
            "[dgp]\nn_test   =   10\nn_cal = 50\nn_train = 100\nd = 10\n[experiment]\nreplicates = 3\nid = \"x\"\n",
        )
        .unwrap();
        assert_eq!(a.canonical_hash(), b.canonical_hash());
        let c: ExperimentConfig = toml::from_str("[experiment]\nid = \"y\"\n").unwrap();
        assert_ne!(a.canonical_hash(), c.canonical_hash());
    }

    #[test]
    fn config_defaults_match_stated_values() {
        let config = ExperimentConfig::default();
        assert_eq!(config.diffusion.steps, 400);
        assert_eq!(config.diffusion.beta_min, 1e-4);
        assert_eq!(config.diffusion.beta_max, 0.02);
        assert_eq!(config.diffusion.batch_size, 128);
        assert_eq!(config.diffusion.lr, 1e-2);
        assert_eq!(config.diffusion.weight_decay, 1e-2);
        assert_eq!(config.diffusion.lr_decay_factor, 0.7);
        assert_eq!(config.diffusion.lr_decay_every, 500);
        assert_eq!(config.diffusion.hidden, vec![128, 128, 128]);
        assert_eq!(config.conformal.alpha, 0.05);
        assert_eq!(config.conformal.m_samples, 40);
        assert_eq!(config.dgp.n_train, 7500);
        assert_eq!(config.dgp.n_cal, 2500);
        assert_eq!(config.dgp.n_test, 1000);
        assert_eq!(config.experiment.replicates, 50);
    }

    #[test]
    fn bandwidth_grid_parses_inf() {
        let config: ExperimentConfig =
            toml::from_str("[conformal]\nbandwidth_grid = [0.1, 1.0, inf]\n").unwrap();
        assert_eq!(config.conformal.bandwidth_grid.len(), 3);
        assert!(config.conformal.bandwidth_grid[2].is_infinite());
        let _ = config.canonical_hash();
    }
}
