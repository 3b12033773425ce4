//! Experiment orchestration: runs the conformal-diffusion pipeline and the
//! baseline methods over seeded replicates of a data-generating process,
//! selects the localization bandwidth on a validation split, and aggregates
//! coverage and median-length metrics across replicates.
//!
//! Every replicate derives named child streams from one seed, so replicates
//! are order-independent and adding a method never perturbs another method's
//! draws.

use crate::conformal::{
    balance_weight, build_prediction_set, local_weights_at, localization_offset,
    nonconformity_score, Bandwidth, CalibrationRecord, PredictionSet, WeightedScoreSet,
};
use crate::datagen::{gen_dataset, Dataset, DgpConfig, Split};
use crate::diffusion::{train_denoiser, DiffusionModel, DiffusionTrainConfig, TrainingReport};
use crate::error::{Error, Result};
use crate::numerics::{lr_at_epoch, AdamWConfig, AdamWState, MlpParams};
use crate::propensity::{fit_gbm, BoostedTreesModel, GbmConfig};
use crate::rng::Seed;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Method identifiers. `Cqr` and `CausalForest` are reserved for externally
/// produced records and cannot be computed by [`run_replicate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Cdm,
    CdmNolocal,
    Mlp,
    Naive,
    Cqr,
    CausalForest,
}

impl MethodTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodTag::Cdm => "cdm",
            MethodTag::CdmNolocal => "cdm_nolocal",
            MethodTag::Mlp => "mlp",
            MethodTag::Naive => "naive",
            MethodTag::Cqr => "cqr",
            MethodTag::CausalForest => "causal_forest",
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, MethodTag::Cqr | MethodTag::CausalForest)
    }
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cdm" => Ok(MethodTag::Cdm),
            "cdm_nolocal" => Ok(MethodTag::CdmNolocal),
            "mlp" => Ok(MethodTag::Mlp),
            "naive" => Ok(MethodTag::Naive),
            "cqr" => Ok(MethodTag::Cqr),
            "causal_forest" => Ok(MethodTag::CausalForest),
            other => Err(Error::Config(format!("unknown method tag '{other}'"))),
        }
    }
}

/// Default bandwidth-factor grid, spanning heavy localization to none.
pub fn default_bandwidth_grid() -> Vec<f64> {
    vec![0.02, 0.05, 0.1, 0.2, 0.5, 1.0, f64::INFINITY]
}

/// One method's shared hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub tag: MethodTag,
    pub alpha: f64,
    pub m_samples: usize,
    /// Bandwidth factors `c` (with `h = c·√d`); `inf` means no localization.
    /// Only the `cdm` method consults the grid; a singleton grid skips
    /// selection entirely.
    pub bandwidth_grid: Vec<f64>,
}

impl MethodSpec {
    pub fn new(tag: MethodTag) -> Self {
        MethodSpec {
            tag,
            alpha: 0.05,
            m_samples: 40,
            bandwidth_grid: default_bandwidth_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.m_samples == 0 {
            return Err(Error::Config("m_samples must be ≥ 1".into()));
        }
        if self.bandwidth_grid.is_empty() {
            return Err(Error::Config("bandwidth grid must not be empty".into()));
        }
        if self.bandwidth_grid.iter().any(|&c| c.is_nan() || c <= 0.0) {
            return Err(Error::Config("bandwidth factors must be positive (inf allowed)".into()));
        }
        Ok(())
    }
}

/// Training configuration for the MLP baseline regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub val_fraction: f64,
    pub eval_every: usize,
    pub patience: usize,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig {
            hidden: vec![128, 128, 128],
            epochs: 1000,
            batch_size: 128,
            lr: 1e-2,
            weight_decay: 1e-2,
            lr_decay_factor: 0.7,
            lr_decay_every: 500,
            val_fraction: 0.15,
            eval_every: 50,
            patience: 5,
        }
    }
}

/// MLP point regressor with outcome standardization, used by the `mlp`
/// baseline.
#[derive(Debug, Clone)]
pub struct MlpRegressor {
    pub params: MlpParams,
    pub cov_dim: usize,
    pub out_mean: f64,
    pub out_sd: f64,
}

impl MlpRegressor {
    /// Mean-squared-error training with the shared optimizer stack and early
    /// stopping on a held-out fraction.
    pub fn train(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        config: &MlpTrainConfig,
        seed: Seed,
    ) -> Result<(Self, TrainingReport)> {
        let n = x.nrows();
        if n != y.len() {
            return Err(Error::Shape(format!("{n} rows vs {} outcomes", y.len())));
        }
        if n < 2 {
            return Err(Error::Empty(format!("need at least 2 training samples, got {n}")));
        }
        if config.batch_size == 0 || config.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        let d = x.ncols();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let raw_sd = var.sqrt();
        let sd = if raw_sd <= 1e-12 * mean.abs().max(1.0) { 1.0 } else { raw_sd };
        let y_std: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();

        let mut order: Vec<usize> = (0..n).collect();
        let mut rng_split = seed.child("val-split").rng();
        for i in (1..n).rev() {
            order.swap(i, rng_split.gen_range(0..=i));
        }
        let n_val = ((config.val_fraction * n as f64).floor() as usize).min(n - 1);
        let (val_idx, train_idx) = order.split_at(n_val);
        let early_stopping = n_val > 0 && config.epochs > config.eval_every;

        let mut dims = vec![d];
        dims.extend_from_slice(&config.hidden);
        dims.push(1);
        let mut params = MlpParams::init(&dims, seed.child("init"))?;
        let mut opt = AdamWState::new(
            &params,
            AdamWConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..AdamWConfig::default()
            },
        )?;

        let mut val_inputs = Array2::zeros((n_val, d));
        let mut val_targets = vec![0.0; n_val];
        for (k, &i) in val_idx.iter().enumerate() {
            val_inputs.row_mut(k).assign(&x.row(i));
            val_targets[k] = y_std[i];
        }

        let mut rng_shuffle = seed.child("shuffle").rng();
        let mut shuffled: Vec<usize> = train_idx.to_vec();
        let mut best: Option<(f64, MlpParams, usize)> = None;
        let mut evals_since_best = 0usize;
        let mut history = Vec::new();
        let mut epochs_run = 0;

        'epochs: for epoch in 0..config.epochs {
            epochs_run = epoch + 1;
            opt.config.lr =
                lr_at_epoch(epoch, config.lr, config.lr_decay_factor, config.lr_decay_every);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng_shuffle.gen_range(0..=i));
            }
            let mut sse = 0.0;
            let mut count = 0usize;
            for chunk in shuffled.chunks(config.batch_size) {
                let b = chunk.len();
                let mut inputs = Array2::zeros((b, d));
                for (r, &i) in chunk.iter().enumerate() {
                    inputs.row_mut(r).assign(&x.row(i));
                }
                let cache = params.forward_batch_cached(&inputs)?;
                let pred = cache.output();
                let mut upstream = Array2::zeros((b, 1));
                for (r, &i) in chunk.iter().enumerate() {
                    let err = pred[[r, 0]] - y_std[i];
                    sse += err * err;
                    upstream[[r, 0]] = 2.0 * err / b as f64;
                }
                count += b;
                let (grads, _) = params.backward_batch(&cache, &upstream);
                opt.step(&mut params, &grads)?;
            }
            let train_mse = sse / count.max(1) as f64;
            let mut val_mse = None;
            if early_stopping && (epoch + 1) % config.eval_every == 0 {
                let pred = params.forward_batch(&val_inputs)?;
                let mut vsse = 0.0;
                for (r, &target) in val_targets.iter().enumerate() {
                    let e = pred[[r, 0]] - target;
                    vsse += e * e;
                }
                let v = vsse / val_targets.len().max(1) as f64;
                val_mse = Some(v);
                match &best {
                    Some((best_v, _, _)) if v >= *best_v => evals_since_best += 1,
                    _ => {
                        best = Some((v, params.clone(), epoch));
                        evals_since_best = 0;
                    }
                }
                if evals_since_best >= config.patience {
                    history.push(crate::diffusion::EpochLoss {
                        epoch,
                        train_mse,
                        val_mse,
                    });
                    break 'epochs;
                }
            }
            history.push(crate::diffusion::EpochLoss {
                epoch,
                train_mse,
                val_mse,
            });
        }
        let (final_params, best_epoch) = match best {
            Some((_, p, e)) => (p, e),
            None => (params, epochs_run.saturating_sub(1)),
        };
        Ok((
            MlpRegressor {
                params: final_params,
                cov_dim: d,
                out_mean: mean,
                out_sd: sd,
            },
            TrainingReport {
                epochs_run,
                best_epoch,
                history,
            },
        ))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.cov_dim {
            return Err(Error::Shape(format!(
                "input dimension {} != model dimension {}",
                x.len(),
                self.cov_dim
            )));
        }
        let out = self.params.forward(x)?;
        Ok(out[0] * self.out_sd + self.out_mean)
    }
}

/// Type-7 (interpolated) empirical quantile of unsorted values.
fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
    }
}

/// The generative baseline without conformal calibration: the single
/// interval between the `α/2` and `1−α/2` empirical quantiles of the
/// samples. Never the entire line.
pub fn naive_interval(samples: &[f64], alpha: f64) -> Result<PredictionSet> {
    if samples.is_empty() {
        return Err(Error::Empty("naive interval needs samples".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let lo = empirical_quantile(samples, alpha / 2.0);
    let hi = empirical_quantile(samples, 1.0 - alpha / 2.0);
    Ok(PredictionSet {
        intervals: vec![(lo, hi)],
        entire_line: false,
    })
}

/// Median with infinities participating (an infinite median reports +∞).
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// One pseudo-test point prepared for bandwidth selection: generated
/// samples, the held-out truth, a fixed localization offset draw, and the
/// balancing weight at the point.
#[derive(Debug, Clone)]
pub struct SelectionPoint {
    pub x: Vec<f64>,
    pub truth: f64,
    pub samples: Vec<f64>,
    pub z: Vec<f64>,
    pub balance_weight: f64,
}

/// Validation metrics for one bandwidth factor.
#[derive(Debug, Clone, Copy)]
pub struct BandwidthScore {
    pub c: f64,
    pub coverage: f64,
    pub median_length: f64,
    pub infinite_fraction: f64,
}

fn evaluate_bandwidth(
    c: f64,
    records: &[CalibrationRecord],
    cal_x: ArrayView2<'_, f64>,
    points: &[SelectionPoint],
    alpha: f64,
) -> Result<BandwidthScore> {
    let d = cal_x.ncols();
    let mut covered = 0usize;
    let mut infinite = 0usize;
    let mut lengths = Vec::with_capacity(points.len());
    for p in points {
        let local = if c.is_finite() {
            let h = c * (d as f64).sqrt();
            local_weights_at(cal_x, &p.x, h, &p.z)?
        } else {
            vec![1.0; records.len() + 1]
        };
        let set = WeightedScoreSet::assemble(records, &local, p.balance_weight)?;
        let q = set.quantile(alpha)?;
        let pset = build_prediction_set(&p.samples, q)?;
        if pset.contains(p.truth) {
            covered += 1;
        }
        if pset.entire_line {
            infinite += 1;
        }
        lengths.push(pset.total_length());
    }
    Ok(BandwidthScore {
        c,
        coverage: covered as f64 / points.len() as f64,
        median_length: median(&lengths),
        infinite_fraction: infinite as f64 / points.len() as f64,
    })
}

/// Picks the bandwidth factor on held-out pseudo-test points: the smallest
/// `c` whose validation coverage reaches `1−α` (minus one binomial standard
/// error of the validation estimate) while staying informative (at most an
/// `α` share of degenerate entire-line sets); otherwise the finite-median
/// `c` with maximal coverage, ties broken by smaller median length, then
/// smaller `c`. A singleton grid short-circuits without consuming any draws.
pub fn choose_bandwidth(
    grid: &[f64],
    records: &[CalibrationRecord],
    points: &[SelectionPoint],
    alpha: f64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("bandwidth grid must not be empty".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    if records.is_empty() || points.is_empty() {
        // Nothing to validate on: prefer no localization.
        return Ok(*grid
            .iter()
            .max_by(|a, b| a.partial_cmp(b).unwrap())
            .unwrap());
    }
    let d = records[0].x.len();
    let mut cal_x = Array2::zeros((records.len(), d));
    for (i, r) in records.iter().enumerate() {
        for (j, &v) in r.x.iter().enumerate() {
            cal_x[[i, j]] = v;
        }
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scores: Vec<BandwidthScore> = sorted
        .iter()
        .map(|&c| evaluate_bandwidth(c, records, cal_x.view(), points, alpha))
        .collect::<Result<_>>()?;
    // One standard error of the validation coverage estimate keeps the
    // threshold from flipping on a handful of points.
    let se = (alpha * (1.0 - alpha) / points.len() as f64).sqrt();
    let level = 1.0 - alpha - se;
    if let Some(s) = scores
        .iter()
        .find(|s| s.coverage >= level && s.infinite_fraction <= alpha)
    {
        return Ok(s.c);
    }
    let finite: Vec<&BandwidthScore> =
        scores.iter().filter(|s| s.median_length.is_finite()).collect();
    if let Some(best) = finite.iter().max_by(|a, b| {
        a.coverage
            .partial_cmp(&b.coverage)
            .unwrap()
            .then(b.median_length.partial_cmp(&a.median_length).unwrap())
            .then(b.c.partial_cmp(&a.c).unwrap())
    }) {
        return Ok(best.c);
    }
    // Every candidate degenerates to infinite sets: least localization.
    Ok(*sorted.last().unwrap())
}

/// Result of one (method, replicate) cell.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub coverage: f64,
    pub median_length: f64,
    pub infinite_count: usize,
    pub selected_bandwidth: Option<f64>,
    pub wallclock_seconds: f64,
}

/// Engine settings shared by every method in one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EngineConfigs {
    pub diffusion: DiffusionTrainConfig,
    pub propensity: GbmConfig,
    pub mlp: MlpTrainConfig,
}

/// Per-test-point output of the conformal pipeline.
#[derive(Debug, Clone)]
pub struct TestPrediction {
    pub set: PredictionSet,
    pub quantile: f64,
    pub test_mass: f64,
    pub samples: Vec<f64>,
}

/// Scores one treatment arm's calibration rows against the generative model:
/// `V_j = min_m |y_j − ŷ_jm|` with balancing weight `1/π̂(x_j)`.
pub fn calibrate_scores(
    model: &DiffusionModel,
    propensity: &BoostedTreesModel,
    cal_x: ArrayView2<'_, f64>,
    cal_y: &[f64],
    m_samples: usize,
    seed: Seed,
) -> Result<Vec<CalibrationRecord>> {
    let n = cal_x.nrows();
    if n == 0 {
        return Err(Error::Empty("no treated calibration rows".into()));
    }
    let seeds: Vec<Seed> = (0..n).map(|j| seed.child_indexed("cal", j)).collect();
    let samples = model.sample_many(cal_x, m_samples, &seeds)?;
    let mut records = Vec::with_capacity(n);
    for j in 0..n {
        let x = cal_x.row(j).to_vec();
        let score = nonconformity_score(cal_y[j], &samples[j])?;
        let pi = propensity.predict_propensity(&x)?;
        let weight = balance_weight(true, pi)?;
        records.push(CalibrationRecord::new(x, score, weight)?);
    }
    Ok(records)
}

/// Runs the weighted-conformal prediction stage at each target row:
/// localization draw, weight assembly, weighted quantile, and the union
/// prediction set from fresh samples.
pub fn predict_points(
    model: &DiffusionModel,
    propensity: &BoostedTreesModel,
    records: &[CalibrationRecord],
    xs: ArrayView2<'_, f64>,
    bandwidth: Bandwidth,
    alpha: f64,
    m_samples: usize,
    seed: Seed,
) -> Result<Vec<TestPrediction>> {
    let n = xs.nrows();
    let d = xs.ncols();
    let mut cal_x = Array2::zeros((records.len(), d));
    for (i, r) in records.iter().enumerate() {
        if r.x.len() != d {
            return Err(Error::Shape("calibration/test dimension mismatch".into()));
        }
        for (j, &v) in r.x.iter().enumerate() {
            cal_x[[i, j]] = v;
        }
    }
    let sample_seeds: Vec<Seed> = (0..n).map(|k| seed.child_indexed("test", k)).collect();
    let all_samples = model.sample_many(xs, m_samples, &sample_seeds)?;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let x = xs.row(k).to_vec();
            let local = match bandwidth {
                Bandwidth::NoLocalization => vec![1.0; records.len() + 1],
                Bandwidth::Fixed(h) => {
                    let mut rng = seed.child_indexed("test-loc", k).rng();
                    let z = localization_offset(d, &mut rng);
                    local_weights_at(cal_x.view(), &x, h, &z)?
                }
            };
            let pi = propensity.predict_propensity(&x)?;
            let test_weight = balance_weight(true, pi)?;
            let set = WeightedScoreSet::assemble(records, &local, test_weight)?;
            let q = set.quantile(alpha)?;
            let pset = build_prediction_set(&all_samples[k], q)?;
            Ok(TestPrediction {
                set: pset,
                quantile: q,
                test_mass: set.test_mass,
                samples: all_samples[k].clone(),
            })
        })
        .collect()
}

fn subset_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (k, &i) in rows.iter().enumerate() {
        out.row_mut(k).assign(&x.row(i));
    }
    out
}

/// Builds the bandwidth-selection inputs from treated training rows: 15%
/// become pseudo-test points (their observed outcomes are the treated
/// potential outcomes), the rest the pseudo-calibration set. The
/// pseudo-calibration set is capped at the deployed calibration-arm size so
/// the validated finite-mass behavior matches what prediction will see.
#[allow(clippy::too_many_arguments)]
fn bandwidth_selection_inputs(
    model: &DiffusionModel,
    propensity: &BoostedTreesModel,
    x_treated: ArrayView2<'_, f64>,
    y_treated: &[f64],
    m_samples: usize,
    deployed_cal_size: usize,
    seed: Seed,
) -> Result<(Vec<CalibrationRecord>, Vec<SelectionPoint>)> {
    let n = x_treated.nrows();
    let d = x_treated.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng_split = seed.child("select.split").rng();
    for i in (1..n).rev() {
        order.swap(i, rng_split.gen_range(0..=i));
    }
    let n_holdout = ((0.15 * n as f64).floor() as usize).clamp(1, n - 1);
    let (holdout, rest) = order.split_at(n_holdout);
    // `order` is a uniform shuffle, so a prefix of `rest` is already a
    // uniform subsample.
    let cap = deployed_cal_size.max(1).min(rest.len());
    let rest = &rest[..cap];

    let x_cal = subset_rows(x_treated, rest);
    let y_cal: Vec<f64> = rest.iter().map(|&i| y_treated[i]).collect();
    let cal_seeds: Vec<Seed> = (0..rest.len())
        .map(|j| seed.child_indexed("select.cal", j))
        .collect();
    let cal_samples = model.sample_many(x_cal.view(), m_samples, &cal_seeds)?;
    let mut records = Vec::with_capacity(rest.len());
    for j in 0..rest.len() {
        let x = x_cal.row(j).to_vec();
        let score = nonconformity_score(y_cal[j], &cal_samples[j])?;
        let pi = propensity.predict_propensity(&x)?;
        records.push(CalibrationRecord::new(x, score, balance_weight(true, pi)?)?);
    }

    let x_test = subset_rows(x_treated, holdout);
    let test_seeds: Vec<Seed> = (0..holdout.len())
        .map(|k| seed.child_indexed("select.test", k))
        .collect();
    let test_samples = model.sample_many(x_test.view(), m_samples, &test_seeds)?;
    let mut points = Vec::with_capacity(holdout.len());
    for (k, &i) in holdout.iter().enumerate() {
        let x = x_test.row(k).to_vec();
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

struct SplitData {
    x_train: Array2<f64>,
    t_train: Vec<bool>,
    x_train_treated: Array2<f64>,
    y_train_treated: Vec<f64>,
    x_cal_treated: Array2<f64>,
    y_cal_treated: Vec<f64>,
    x_test: Array2<f64>,
    tau_test: Vec<f64>,
}

fn split_dataset(ds: &Dataset) -> Result<SplitData> {
    let train_idx = ds.indices(Split::Train)?;
    let cal_idx = ds.indices(Split::Cal)?;
    let test_idx = ds.indices(Split::Test)?;
    let treated_train: Vec<usize> = train_idx.iter().copied().filter(|&i| ds.t[i]).collect();
    let treated_cal: Vec<usize> = cal_idx.iter().copied().filter(|&i| ds.t[i]).collect();
    if treated_train.len() < 2 {
        return Err(Error::Data("fewer than 2 treated training rows".into()));
    }
    if treated_cal.is_empty() {
        return Err(Error::Data("no treated calibration rows".into()));
    }
    let tau_test: Vec<f64> = test_idx
        .iter()
        .map(|&i| ds.tau_true(i))
        .collect::<Result<_>>()?;
    Ok(SplitData {
        x_train: subset_rows(ds.x.view(), &train_idx),
        t_train: train_idx.iter().map(|&i| ds.t[i]).collect(),
        x_train_treated: subset_rows(ds.x.view(), &treated_train),
        y_train_treated: treated_train.iter().map(|&i| ds.y[i]).collect(),
        x_cal_treated: subset_rows(ds.x.view(), &treated_cal),
        y_cal_treated: treated_cal.iter().map(|&i| ds.y[i]).collect(),
        x_test: subset_rows(ds.x.view(), &test_idx),
        tau_test,
    })
}

fn summarize(sets: &[PredictionSet], tau: &[f64]) -> (f64, f64, usize) {
    let covered = sets
        .iter()
        .zip(tau)
        .filter(|(s, &t)| s.contains(t))
        .count();
    let lengths: Vec<f64> = sets.iter().map(|s| s.total_length()).collect();
    let infinite = lengths.iter().filter(|l| l.is_infinite()).count();
    (
        covered as f64 / tau.len() as f64,
        median(&lengths),
        infinite,
    )
}

/// Runs one (data-generating process, method, seed) cell end to end:
/// generate data with a derived seed, then evaluate the method on it.
pub fn run_replicate(
    dgp: &DgpConfig,
    method: &MethodSpec,
    engines: &EngineConfigs,
    seed: Seed,
) -> Result<ReplicateOutcome> {
    let mut dgp_run = *dgp;
    dgp_run.seed = seed.child("data").as_u64();
    let ds = gen_dataset(&dgp_run)?;
    evaluate_dataset(&ds, method, engines, seed)
}

/// Evaluates one method on a prepared dataset with oracle columns: train the
/// score source on treated training rows, fit the propensity model on all
/// training rows, calibrate on treated calibration rows, and predict every
/// test row. Coverage counts test rows whose unit-level effect lands in the
/// prediction set.
pub fn evaluate_dataset(
    ds: &Dataset,
    method: &MethodSpec,
    engines: &EngineConfigs,
    seed: Seed,
) -> Result<ReplicateOutcome> {
    method.validate()?;
    if method.tag.is_external() {
        return Err(Error::Config(format!(
            "method '{}' is an external-results slot and cannot be computed",
            method.tag
        )));
    }
    let started = std::time::Instant::now();
    let split = split_dataset(ds)?;

    let (coverage, median_length, infinite_count, selected) = match method.tag {
        MethodTag::Naive => {
            let (model, _) = train_denoiser(
                split.x_train_treated.view(),
                &split.y_train_treated,
                &engines.diffusion,
                seed.child("train"),
            )?;
            let n = split.x_test.nrows();
            let seeds: Vec<Seed> = (0..n).map(|k| seed.child_indexed("test", k)).collect();
            let samples = model.sample_many(split.x_test.view(), method.m_samples, &seeds)?;
            let sets: Vec<PredictionSet> = samples
                .iter()
                .map(|s| naive_interval(s, method.alpha))
                .collect::<Result<_>>()?;
            let (c, l, inf) = summarize(&sets, &split.tau_test);
            (c, l, inf, None)
        }
        MethodTag::Mlp => {
            let (model, _) = MlpRegressor::train(
                split.x_train_treated.view(),
                &split.y_train_treated,
                &engines.mlp,
                seed.child("train"),
            )?;
            let propensity = fit_gbm(split.x_train.view(), &split.t_train, &engines.propensity)?;
            let mut records = Vec::with_capacity(split.x_cal_treated.nrows());
            for j in 0..split.x_cal_treated.nrows() {
                let x = split.x_cal_treated.row(j).to_vec();
                let score = (split.y_cal_treated[j] - model.predict(&x)?).abs();
                let pi = propensity.predict_propensity(&x)?;
                records.push(CalibrationRecord::new(x, score, balance_weight(true, pi)?)?);
            }
            let n = split.x_test.nrows();
            let mut sets = Vec::with_capacity(n);
            for k in 0..n {
                let x = split.x_test.row(k).to_vec();
                let local = vec![1.0; records.len() + 1];
                let pi = propensity.predict_propensity(&x)?;
                let wset = WeightedScoreSet::assemble(&records, &local, balance_weight(true, pi)?)?;
                let q = wset.quantile(method.alpha)?;
                sets.push(build_prediction_set(&[model.predict(&x)?], q)?);
            }
            let (c, l, inf) = summarize(&sets, &split.tau_test);
            (c, l, inf, None)
        }
        MethodTag::Cdm | MethodTag::CdmNolocal => {
            let (model, _) = train_denoiser(
                split.x_train_treated.view(),
                &split.y_train_treated,
                &engines.diffusion,
                seed.child("train"),
            )?;
            let propensity = fit_gbm(split.x_train.view(), &split.t_train, &engines.propensity)?;
            let records = calibrate_scores(
                &model,
                &propensity,
                split.x_cal_treated.view(),
                &split.y_cal_treated,
                method.m_samples,
                seed.child("cal"),
            )?;
            let c_factor = match method.tag {
                MethodTag::CdmNolocal => f64::INFINITY,
                _ => {
                    if method.bandwidth_grid.len() == 1 {
                        method.bandwidth_grid[0]
                    } else {
                        let (sel_records, sel_points) = bandwidth_selection_inputs(
                            &model,
                            &propensity,
                            split.x_train_treated.view(),
                            &split.y_train_treated,
                            method.m_samples,
                            records.len(),
                            seed.child("select"),
                        )?;
                        choose_bandwidth(
                            &method.bandwidth_grid,
                            &sel_records,
                            &sel_points,
                            method.alpha,
                        )?
                    }
                }
            };
            let bandwidth = if c_factor.is_finite() {
                Bandwidth::Fixed(c_factor * (ds.dim() as f64).sqrt())
            } else {
                Bandwidth::NoLocalization
            };
            let preds = predict_points(
                &model,
                &propensity,
                &records,
                split.x_test.view(),
                bandwidth,
                method.alpha,
                method.m_samples,
                seed.child("predict"),
            )?;
            let sets: Vec<PredictionSet> = preds.into_iter().map(|p| p.set).collect();
            let (c, l, inf) = summarize(&sets, &split.tau_test);
            (c, l, inf, Some(c_factor))
        }
        MethodTag::Cqr | MethodTag::CausalForest => unreachable!("checked above"),
    };

    Ok(ReplicateOutcome {
        coverage,
        median_length,
        infinite_count,
        selected_bandwidth: selected,
        wallclock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One row of the results document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub experiment_id: String,
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    pub coverage: f64,
    pub median_length: f64,
    pub infinite_count: usize,
    pub config_hash: String,
    pub code_version: String,
}

/// Across-replicate aggregate for one method.
#[derive(Debug, Clone, Serialize)]
pub struct MethodAggregate {
    pub method: String,
    pub n_replicates: usize,
    pub mean_coverage: f64,
    pub sd_coverage: f64,
    pub coverage_ci: (f64, f64),
    /// Mean over replicates whose median length is finite.
    pub mean_length: f64,
    pub sd_length: f64,
    pub length_ci: (f64, f64),
    /// Replicates excluded from the length aggregate for an infinite median.
    pub n_infinite_median: usize,
    pub total_infinite_sets: usize,
    /// Set when a single replicate makes the normal-approximation interval
    /// collapse to a point.
    pub degenerate_ci: bool,
}

fn mean_sd_ci(values: &[f64]) -> (f64, f64, (f64, f64), bool) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, (mean, mean), true);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let half = 1.96 * sd / (n as f64).sqrt();
    (mean, sd, (mean - half, mean + half), false)
}

/// Groups records by method and reports means with 95% normal-approximation
/// intervals across replicates. Infinite median lengths are excluded from
/// the length aggregate and counted.
pub fn aggregate(records: &[ReplicateRecord]) -> Vec<MethodAggregate> {
    let mut methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    methods
        .iter()
        .map(|m| {
            let rows: Vec<&ReplicateRecord> =
                records.iter().filter(|r| &r.method == m).collect();
            let coverages: Vec<f64> = rows.iter().map(|r| r.coverage).collect();
            let finite_lengths: Vec<f64> = rows
                .iter()
                .map(|r| r.median_length)
                .filter(|l| l.is_finite())
                .collect();
            let (mean_coverage, sd_coverage, coverage_ci, degen_cov) = mean_sd_ci(&coverages);
            let (mean_length, sd_length, length_ci, degen_len) = if finite_lengths.is_empty() {
                (
                    f64::INFINITY,
                    0.0,
                    (f64::INFINITY, f64::INFINITY),
                    true,
                )
            } else {
                mean_sd_ci(&finite_lengths)
            };
            MethodAggregate {
                method: m.clone(),
                n_replicates: rows.len(),
                mean_coverage,
                sd_coverage,
                coverage_ci,
                mean_length,
                sd_length,
                length_ci,
                n_infinite_median: rows.len() - finite_lengths.len(),
                total_infinite_sets: rows.iter().map(|r| r.infinite_count).sum(),
                degenerate_ci: degen_cov || degen_len,
            }
        })
        .collect()
}
