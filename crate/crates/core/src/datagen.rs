//! Synthetic data-generating processes for the benchmark studies, plus an
//! adapted semi-synthetic generator over user-supplied CSV tables.
//!
//! Covariates are standard-normal draws pushed through the normal CDF, so
//! each coordinate is marginally uniform on (0,1). The treated-arm outcome is
//! a smooth conditional mean plus standardized noise from one of three
//! families; the control outcome is identically zero, so the unit-level
//! treatment effect equals the treated potential outcome. Treatment assigns
//! with a known propensity driven by the first covariate, which keeps all
//! oracle quantities available to the harness.

use crate::error::{Error, Result};
use crate::propensity::{fit_gbm, fit_gbm_regressor, GbmConfig};
use crate::rng::Seed;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Lowdim,
    Highdim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Gamma,
    /// Bimodal density proportional to `x^10·exp(−x²/2)`, sampled exactly by
    /// a signed square root of a Gamma(11/2, 2) draw.
    Nlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    Homo,
    Hetero,
}

/// Declarative description of one synthetic data draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub scenario: Scenario,
    pub noise: NoiseFamily,
    pub variance: VarianceMode,
    pub d: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            scenario: Scenario::Lowdim,
            noise: NoiseFamily::Gaussian,
            variance: VarianceMode::Homo,
            d: 10,
            n_train: 7500,
            n_cal: 2500,
            n_test: 1000,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("d must be ≥ 2, got {}", self.d)));
        }
        if self.scenario == Scenario::Highdim && (self.d % 4 != 0 || self.d < 8) {
            return Err(Error::Config(format!(
                "high-dimensional scenario needs d divisible by 4 and ≥ 8, got {}",
                self.d
            )));
        }
        if self.n_train == 0 || self.n_cal == 0 || self.n_test == 0 {
            return Err(Error::Config("split sizes must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Cal,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Cal => write!(f, "cal"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Covariates, treatments, observed outcomes, optional oracle columns, and
/// split tags. The observed outcome always satisfies
/// `y = t·y1_true + (1−t)·y0_true` row-wise when the oracles are present.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub t: Vec<bool>,
    pub y: Vec<f64>,
    pub y1_true: Option<Vec<f64>>,
    pub y0_true: Option<Vec<f64>>,
    pub pi_true: Option<Vec<f64>>,
    pub split: Option<Vec<Split>>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Row indices carrying the given split tag.
    pub fn indices(&self, split: Split) -> Result<Vec<usize>> {
        let tags = self
            .split
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no split tags".into()))?;
        Ok((0..self.n_rows()).filter(|&i| tags[i] == split).collect())
    }

    /// Unit-level treatment effect oracle, available on synthetic data.
    pub fn tau_true(&self, row: usize) -> Result<f64> {
        match (&self.y1_true, &self.y0_true) {
            (Some(y1), Some(y0)) => Ok(y1[row] - y0[row]),
            _ => Err(Error::Data("dataset has no potential-outcome oracles".into())),
        }
    }
}

/// Covariate matrix with entries `Φ(z)` for independent standard normal
/// draws `z`; marginally uniform on (0,1).
pub fn gen_covariates(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((n, d), |_| {
        let z: f64 = rng.sample(StandardNormal);
        normal.cdf(z)
    })
}

/// Scaled logistic bump `2 / (1 + exp(−s(x − 0.5)))`.
fn logistic_bump(x: f64, s: f64) -> f64 {
    2.0 / (1.0 + (-s * (x - 0.5)).exp())
}

/// Low-dimensional conditional mean: a product of two logistic bumps of the
/// first two coordinates.
pub fn mean_lowdim(x: &[f64]) -> f64 {
    logistic_bump(x[0], 12.0) * logistic_bump(x[1], 12.0)
}

/// Ramp weights `1 + 9·i/(len−1)` used by the high-dimensional block
/// averages.
fn ramp_weight(i: usize, len: usize) -> f64 {
    1.0 + 9.0 * i as f64 / (len - 1) as f64
}

fn block_average(x: &[f64]) -> f64 {
    let len = x.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let w = ramp_weight(i, len);
        num += w * v;
        den += w;
    }
    num / den
}

/// High-dimensional conditional mean over three weighted block averages:
/// the first quarter, second quarter, and second half of the coordinates.
/// Requires `d` divisible by 4 and at least 8.
pub fn mean_highdim(x: &[f64]) -> f64 {
    let d = x.len();
    assert!(d % 4 == 0 && d >= 8, "mean_highdim needs d % 4 == 0 and d >= 8");
    let q = d / 4;
    let z1 = block_average(&x[..q]);
    let z2 = block_average(&x[q..2 * q]);
    let z3 = block_average(&x[2 * q..]);
    let f1 = logistic_bump(z1, 60.0);
    let f2 = 4.0 / (1.0 + (z2 - 0.5) * (z2 - 0.5)) + 1.0;
    let f3 = ((z3 - 0.5).powi(3) + 1.0).exp() + 1.0;
    f1 * f2 - f3
}

fn conditional_mean(scenario: Scenario, x: &[f64]) -> f64 {
    match scenario {
        Scenario::Lowdim => mean_lowdim(x),
        Scenario::Highdim => mean_highdim(x),
    }
}

/// One draw from the chosen noise family, standardized to mean zero and unit
/// standard deviation.
pub fn sample_noise(family: NoiseFamily, rng: &mut impl Rng) -> f64 {
    match family {
        NoiseFamily::Gaussian => rng.sample(StandardNormal),
        NoiseFamily::Gamma => {
            // Gamma(shape 2, scale 1): mean 2, sd √2.
            let g = Gamma::new(2.0, 1.0).unwrap().sample(rng);
            (g - 2.0) / 2.0f64.sqrt()
        }
        NoiseFamily::Nlm => {
            // |X|² of the target density is Gamma(11/2, 2); attach a fair
            // sign and divide by the raw sd √11 (raw second moment = 11).
            let g: f64 = Gamma::new(5.5, 2.0).unwrap().sample(rng);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * g.sqrt() / 11.0f64.sqrt()
        }
    }
}

/// Conditional noise scale: 1 in the homoscedastic mode; in the
/// heteroscedastic mode 0.5 below the coordinate-mean threshold and a scaled
/// cosine envelope above it.
pub fn sigma_fn(x: &[f64], mode: VarianceMode) -> f64 {
    match mode {
        VarianceMode::Homo => 1.0,
        VarianceMode::Hetero => {
            let d = x.len() as f64;
            let mu = x.iter().sum::<f64>() / d;
            if mu < 0.5 {
                0.5
            } else {
                5.0 * (d / 10.0).sqrt() * (std::f64::consts::PI * mu).cos().abs()
            }
        }
    }
}

/// Beta(2,4) CDF via its closed polynomial form
/// `10u² − 20u³ + 15u⁴ − 4u⁵` (antiderivative of the density `20u(1−u)³`).
pub fn beta24_cdf(u: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u2 * u2;
    let u5 = u4 * u;
    10.0 * u2 - 20.0 * u3 + 15.0 * u4 - 4.0 * u5
}

/// True treatment propensity `0.25·(1 + β₂,₄(x₁))`, always inside
/// [0.25, 0.5].
pub fn propensity_true(x: &[f64]) -> f64 {
    0.25 * (1.0 + beta24_cdf(x[0]))
}

fn norm2(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smallest value whose empirical CDF reaches `q`.
pub(crate) fn empirical_quantile_inf(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    values[rank - 1]
}

/// Generates one full synthetic dataset with oracle columns and split tags.
///
/// In the heteroscedastic mode the test rows come from the shifted subgroup
/// `‖X‖₂ ≥ q̂_0.9`, with the threshold estimated on an independent reference
/// draw of the same size as train + cal.
pub fn gen_dataset(config: &DgpConfig) -> Result<Dataset> {
    config.validate()?;
    let root = Seed::from_u64(config.seed).child("dgp");
    let n_fit = config.n_train + config.n_cal;
    let n = n_fit + config.n_test;
    let d = config.d;

    let mut rng_x = root.child("covariates").rng();
    let mut x = Array2::zeros((n, d));
    x.slice_mut(ndarray::s![..n_fit, ..])
        .assign(&gen_covariates(n_fit, d, &mut rng_x));

    let mut rng_test = root.child("covariates.test").rng();
    match config.variance {
        VarianceMode::Homo => {
            x.slice_mut(ndarray::s![n_fit.., ..])
                .assign(&gen_covariates(config.n_test, d, &mut rng_test));
        }
        VarianceMode::Hetero => {
            let mut rng_ref = root.child("covariates.reference").rng();
            let reference = gen_covariates(n_fit, d, &mut rng_ref);
            let mut norms: Vec<f64> = reference
                .rows()
                .into_iter()
                .map(|r| norm2(r.as_slice().unwrap()))
                .collect();
            let threshold = empirical_quantile_inf(&mut norms, 0.9);
            let mut accepted = 0;
            while accepted < config.n_test {
                let candidates = gen_covariates(config.n_test, d, &mut rng_test);
                for row in candidates.rows() {
                    if accepted >= config.n_test {
                        break;
                    }
                    if norm2(row.as_slice().unwrap()) >= threshold {
                        x.row_mut(n_fit + accepted).assign(&row);
                        accepted += 1;
                    }
                }
            }
        }
    }

    let mut rng_noise = root.child("outcomes").rng();
    let mut rng_treat = root.child("treatment").rng();
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let xs = row.as_slice().unwrap();
        let eps = sample_noise(config.noise, &mut rng_noise);
        let y1i = conditional_mean(config.scenario, xs) + sigma_fn(xs, config.variance) * eps;
        let pii = propensity_true(xs);
        let ti = rng_treat.gen_bool(pii);
        y1.push(y1i);
        pi.push(pii);
        t.push(ti);
        y.push(if ti { y1i } else { 0.0 });
    }
    let mut split = Vec::with_capacity(n);
    split.extend(std::iter::repeat(Split::Train).take(config.n_train));
    split.extend(std::iter::repeat(Split::Cal).take(config.n_cal));
    split.extend(std::iter::repeat(Split::Test).take(config.n_test));

    Ok(Dataset {
        x,
        t,
        y,
        y1_true: Some(y1),
        y0_true: Some(vec![0.0; n]),
        pi_true: Some(pi),
        split: Some(split),
    })
}

/// Type-7 (linearly interpolated) empirical quantile, used for residual IQR
/// estimation.
fn quantile_interpolated(sorted: &[f64], q: f64) -> f64 {
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

/// Settings for the semi-synthetic generator over a user table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiSyntheticConfig {
    /// Fraction of rows used to fit the outcome and propensity models; the
    /// remainder forms the covariate pool for generation.
    pub fit_fraction: f64,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Multiplier converting the residual IQR to a Gaussian sd.
    pub iqr_to_sd: f64,
    /// Truncation bounds applied to the generating propensity.
    pub propensity_clip: (f64, f64),
    pub gbm: GbmConfig,
}

impl Default for SemiSyntheticConfig {
    fn default() -> Self {
        SemiSyntheticConfig {
            fit_fraction: 0.4,
            n_train: 7500,
            n_cal: 2500,
            n_test: 1000,
            seed: 0,
            iqr_to_sd: 0.74,
            propensity_clip: (0.1, 0.9),
            gbm: GbmConfig::default(),
        }
    }
}

/// Fitted quantities behind a semi-synthetic draw, exposed for diagnostics.
#[derive(Debug, Clone)]
pub struct SemiSyntheticInfo {
    /// Constant residual IQR used as the noise scale multiplier.
    pub residual_iqr: f64,
    /// Fitted conditional mean at each generated row.
    pub fitted_mean: Vec<f64>,
    pub n_fit: usize,
    pub n_pool: usize,
}

/// Semi-synthetic generation over observed covariates: fits a treated-arm
/// outcome regressor and a truncated propensity model on one part of the
/// table, then draws synthetic potential outcomes and treatments over
/// covariates resampled from the remainder. The treated potential outcome is
/// `m̂₁(x) + iqr_to_sd·r̂₁·ε` with standard normal `ε` and `r̂₁` the constant
/// empirical IQR of treated fitting residuals; the control outcome is zero.
pub fn semi_synthetic(
    x: ArrayView2<'_, f64>,
    t: &[bool],
    y: &[f64],
    config: &SemiSyntheticConfig,
) -> Result<(Dataset, SemiSyntheticInfo)> {
    let n = x.nrows();
    if n != t.len() || n != y.len() {
        return Err(Error::Shape(format!(
            "{n} covariate rows vs {} treatments vs {} outcomes",
            t.len(),
            y.len()
        )));
    }
    if !(config.fit_fraction > 0.0 && config.fit_fraction < 1.0) {
        return Err(Error::Config(format!(
            "fit_fraction must lie in (0,1), got {}",
            config.fit_fraction
        )));
    }
    let (clip_lo, clip_hi) = config.propensity_clip;
    if !(0.0 < clip_lo && clip_lo < clip_hi && clip_hi < 1.0) {
        return Err(Error::Config("propensity clip bounds must satisfy 0 < lo < hi < 1".into()));
    }
    let root = Seed::from_u64(config.seed).child("semi-synthetic");

    // Seeded shuffle into a fitting part and a generation pool.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng_split = root.child("split").rng();
    for i in (1..n).rev() {
        let j = rng_split.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_fit = ((config.fit_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let (fit_rows, pool_rows) = order.split_at(n_fit);

    let treated_fit: Vec<usize> = fit_rows.iter().copied().filter(|&i| t[i]).collect();
    if treated_fit.is_empty() {
        return Err(Error::Data("no treated rows in the fitting split".into()));
    }
    let take = |rows: &[usize]| -> Array2<f64> {
        let mut m = Array2::zeros((rows.len(), x.ncols()));
        for (k, &i) in rows.iter().enumerate() {
            m.row_mut(k).assign(&x.row(i));
        }
        m
    };

    // Outcome-mean regressor on treated fitting rows.
    let x_treated = take(&treated_fit);
    let y_treated: Vec<f64> = treated_fit.iter().map(|&i| y[i]).collect();
    let mut gbm_cfg = config.gbm;
    gbm_cfg.min_leaf = gbm_cfg.min_leaf.min((treated_fit.len() / 2).max(1));
    let m1 = fit_gbm_regressor(x_treated.view(), &y_treated, &gbm_cfg)?;

    // Constant residual spread: empirical IQR of treated fitting residuals.
    let mut residuals: Vec<f64> = treated_fit
        .iter()
        .map(|&i| Ok(y[i] - m1.predict(x.row(i).as_slice().unwrap())?))
        .collect::<Result<_>>()?;
    residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r1 = quantile_interpolated(&residuals, 0.75) - quantile_interpolated(&residuals, 0.25);

    // Truncated propensity model on all fitting rows.
    let x_fit = take(fit_rows);
    let t_fit: Vec<bool> = fit_rows.iter().map(|&i| t[i]).collect();
    let mut prop_cfg = config.gbm;
    prop_cfg.clip = config.propensity_clip;
    prop_cfg.min_leaf = prop_cfg.min_leaf.min((fit_rows.len() / 2).max(1));
    let prop = fit_gbm(x_fit.view(), &t_fit, &prop_cfg)?;

    // Generate rows over covariates resampled from the pool.
    let n_out = config.n_train + config.n_cal + config.n_test;
    let mut rng_pick = root.child("covariates").rng();
    let mut rng_noise = root.child("outcomes").rng();
    let mut rng_treat = root.child("treatment").rng();
    let mut xs = Array2::zeros((n_out, x.ncols()));
    let mut t_out = Vec::with_capacity(n_out);
    let mut y_out = Vec::with_capacity(n_out);
    let mut y1_out = Vec::with_capacity(n_out);
    let mut pi_out = Vec::with_capacity(n_out);
    let mut fitted_mean = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let src = pool_rows[rng_pick.gen_range(0..pool_rows.len())];
        xs.row_mut(i).assign(&x.row(src));
        let row = xs.row(i);
        let xi = row.as_slice().unwrap();
        let mean = m1.predict(xi)?;
        let eps: f64 = rng_noise.sample(StandardNormal);
        let y1i = mean + config.iqr_to_sd * r1 * eps;
        let pii = prop.predict_propensity(xi)?;
        let ti = rng_treat.gen_bool(pii);
        fitted_mean.push(mean);
        y1_out.push(y1i);
        pi_out.push(pii);
        t_out.push(ti);
        y_out.push(if ti { y1i } else { 0.0 });
    }
    let mut split = Vec::with_capacity(n_out);
    split.extend(std::iter::repeat(Split::Train).take(config.n_train));
    split.extend(std::iter::repeat(Split::Cal).take(config.n_cal));
    split.extend(std::iter::repeat(Split::Test).take(config.n_test));

    let dataset = Dataset {
        x: xs,
        t: t_out,
        y: y_out,
        y1_true: Some(y1_out),
        y0_true: Some(vec![0.0; n_out]),
        pi_true: Some(pi_out),
        split: Some(split),
    };
    let info = SemiSyntheticInfo {
        residual_iqr: r1,
        fitted_mean,
        n_fit,
        n_pool: pool_rows.len(),
    };
    Ok((dataset, info))
}

/// Column roles for reading a user CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableColumns {
    pub treatment: String,
    pub outcome: String,
    /// Covariate column names; `None` uses every other column.
    pub covariates: Option<Vec<String>>,
}

/// Reads a (covariates, treatment, outcome) table from CSV. Treatment values
/// must parse to 0/1.
pub fn read_table_csv(path: &Path, columns: &TableColumns) -> Result<(Array2<f64>, Vec<bool>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let t_idx = find(&columns.treatment)?;
    let y_idx = find(&columns.outcome)?;
    let cov_idx: Vec<usize> = match &columns.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != t_idx && i != y_idx).collect(),
    };
    if cov_idx.is_empty() {
        return Err(Error::Data("no covariate columns".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::Data(format!("short row at line {}", rows.len() + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("bad number in column {}: {e}", headers[i])))
        };
        let tv = parse(t_idx)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(Error::Data(format!("treatment must be 0 or 1, got {tv}")));
        }
        t.push(tv == 1.0);
        y.push(parse(y_idx)?);
        rows.push(cov_idx.iter().map(|&i| parse(i)).collect::<Result<_>>()?);
    }
    if rows.is_empty() {
        return Err(Error::Empty("no data rows in table".into()));
    }
    let d = rows[0].len();
    let mut x = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    Ok((x, t, y))
}

/// Writes the dataset as CSV with header
/// `x1,…,xd,t,y[,y1_true,y0_true,pi_true,split]`, preceded by `#`-prefixed
/// metadata lines. Numbers print in shortest round-trip form so a reread is
/// bit-exact.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path, meta: &[(&str, String)]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for (k, v) in meta {
        writeln!(file, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    let d = dataset.dim();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("t".into());
    header.push("y".into());
    if dataset.y1_true.is_some() {
        header.push("y1_true".into());
    }
    if dataset.y0_true.is_some() {
        header.push("y0_true".into());
    }
    if dataset.pi_true.is_some() {
        header.push("pi_true".into());
    }
    if dataset.split.is_some() {
        header.push("split".into());
    }
    w.write_record(&header)?;
    for i in 0..dataset.n_rows() {
        let mut rec: Vec<String> = dataset.x.row(i).iter().map(|v| format!("{v}")).collect();
        rec.push(if dataset.t[i] { "1".into() } else { "0".into() });
        rec.push(format!("{}", dataset.y[i]));
        if let Some(y1) = &dataset.y1_true {
            rec.push(format!("{}", y1[i]));
        }
        if let Some(y0) = &dataset.y0_true {
            rec.push(format!("{}", y0[i]));
        }
        if let Some(pi) = &dataset.pi_true {
            rec.push(format!("{}", pi[i]));
        }
        if let Some(split) = &dataset.split {
            rec.push(split[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV produced by [`write_dataset_csv`] or any table with
/// at least the `x*`, `t`, `y` columns; oracle and split columns are
/// optional.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut cov_idx = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h.starts_with('x') && h[1..].chars().all(|c| c.is_ascii_digit()) && h.len() > 1 {
            cov_idx.push(i);
        }
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_idx = find("t").ok_or_else(|| Error::Data("missing column 't'".into()))?;
    let y_idx = find("y").ok_or_else(|| Error::Data("missing column 'y'".into()))?;
    if cov_idx.is_empty() {
        return Err(Error::Data("missing covariate columns x1..xd".into()));
    }
    let y1_idx = find("y1_true");
    let y0_idx = find("y0_true");
    let pi_idx = find("pi_true");
    let split_idx = find("split");

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut y1 = Vec::new();
    let mut y0 = Vec::new();
    let mut pi = Vec::new();
    let mut split = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::Data("short row".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("bad number in column {}: {e}", headers[i])))
        };
        rows.push(cov_idx.iter().map(|&i| parse(i)).collect::<Result<_>>()?);
        let tv = parse(t_idx)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(Error::Data(format!("treatment must be 0 or 1, got {tv}")));
        }
        t.push(tv == 1.0);
        y.push(parse(y_idx)?);
        if let Some(i) = y1_idx {
            y1.push(parse(i)?);
        }
        if let Some(i) = y0_idx {
            y0.push(parse(i)?);
        }
        if let Some(i) = pi_idx {
            pi.push(parse(i)?);
        }
        if let Some(i) = split_idx {
            let tag = record.get(i).unwrap_or("").trim();
            split.push(match tag {
                "train" => Split::Train,
                "cal" => Split::Cal,
                "test" => Split::Test,
                other => return Err(Error::Data(format!("unknown split tag '{other}'"))),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no data rows".into()));
    }
    let d = rows[0].len();
    let mut x = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    Ok(Dataset {
        x,
        t,
        y,
        y1_true: y1_idx.map(|_| y1),
        y0_true: y0_idx.map(|_| y0),
        pi_true: pi_idx.map(|_| pi),
        split: split_idx.map(|_| split),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariates_are_uniform_marginals() {
        let mut rng = Seed::from_u64(50).rng();
        let x = gen_covariates(20_000, 2, &mut rng);
        assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));
        let mean = x.column(0).sum() / 20_000.0;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        // Φ(0) = 0.5 exactly at the center of the normal CDF.
        let normal = Normal::new(0.0, 1.0).unwrap();
        assert_eq!(normal.cdf(0.0), 0.5);
    }

    #[test]
    fn covariates_reproduce_bitwise() {
        let a = gen_covariates(50, 3, &mut Seed::from_u64(51).rng());
        let b = gen_covariates(50, 3, &mut Seed::from_u64(51).rng());
        assert_eq!(a, b);
    }

    #[test]
    fn lowdim_mean_examples() {
        assert!((mean_lowdim(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
        let x = 0.37;
        let f = logistic_bump(x, 12.0);
        assert!((mean_lowdim(&[x, x]) - f * f).abs() < 1e-15);
        let expected = 2.0 / (1.0 + (-6.0f64).exp());
        assert!((mean_lowdim(&[1.0, 0.5]) - expected).abs() < 1e-12);
        assert!((expected - 1.99505).abs() < 1e-5);
    }

    #[test]
    fn lowdim_mean_range() {
        let mut rng = Seed::from_u64(52).rng();
        for _ in 0..2000 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let m = mean_lowdim(&x);
            assert!(m > 0.0 && m < 4.0);
        }
    }

    #[test]
    fn highdim_mean_at_flat_half_point() {
        let x = vec![0.5; 12];
        let expected = 5.0 - std::f64::consts::E - 1.0;
        assert!((mean_highdim(&x) - expected).abs() < 1e-12);
        assert!((expected - 1.28172).abs() < 1e-5);
    }

    #[test]
    fn highdim_ramp_endpoints() {
        let len = 75; // d = 300 block
        assert_eq!(ramp_weight(0, len), 1.0);
        assert_eq!(ramp_weight(len - 1, len), 10.0);
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_fn(&[0.9, 0.9], VarianceMode::Homo), 1.0);
        let x03 = vec![0.3; 10];
        assert_eq!(sigma_fn(&x03, VarianceMode::Hetero), 0.5);
        let x1 = vec![1.0; 10];
        assert!((sigma_fn(&x1, VarianceMode::Hetero) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn propensity_polynomial_is_exact() {
        assert_eq!(beta24_cdf(0.0), 0.0);
        assert_eq!(beta24_cdf(1.0), 1.0);
        assert_eq!(beta24_cdf(0.5), 0.8125);
        assert_eq!(propensity_true(&[0.5, 0.0]), 0.25 * 1.8125);
        assert_eq!(propensity_true(&[0.0]), 0.25);
        assert_eq!(propensity_true(&[1.0]), 0.5);
        let mut rng = Seed::from_u64(53).rng();
        for _ in 0..1000 {
            let p = propensity_true(&[rng.gen_range(0.0..1.0)]);
            assert!((0.25..=0.5).contains(&p));
        }
    }

    #[test]
    fn noise_families_standardized_smoke() {
        // Full-scale moment checks live in the acceptance suite; this is a
        // quick sanity pass at n = 1e5.
        let n = 100_000;
        for family in [NoiseFamily::Gaussian, NoiseFamily::Gamma, NoiseFamily::Nlm] {
            let mut rng = Seed::from_u64(54).rng();
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..n {
                let e = sample_noise(family, &mut rng);
                sum += e;
                sum2 += e * e;
            }
            let mean = sum / n as f64;
            let sd = (sum2 / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 0.02, "{family:?} mean {mean}");
            assert!((sd - 1.0).abs() < 0.03, "{family:?} sd {sd}");
        }
    }

    #[test]
    fn dataset_consistency_identity_exact() {
        let cfg = DgpConfig {
            n_train: 200,
            n_cal: 100,
            n_test: 50,
            seed: 7,
            ..DgpConfig::default()
        };
        let ds = gen_dataset(&cfg).unwrap();
        let y1 = ds.y1_true.as_ref().unwrap();
        let y0 = ds.y0_true.as_ref().unwrap();
        for i in 0..ds.n_rows() {
            let expected = if ds.t[i] { y1[i] } else { y0[i] };
            assert_eq!(ds.y[i].to_bits(), expected.to_bits());
            assert_eq!(y0[i], 0.0);
        }
        let pi = ds.pi_true.as_ref().unwrap();
        assert!(pi.iter().all(|&p| (0.25..=0.5).contains(&p)));
    }

    #[test]
    fn dataset_reproduces_bitwise() {
        let cfg = DgpConfig {
            n_train: 80,
            n_cal: 40,
            n_test: 20,
            seed: 9,
            variance: VarianceMode::Hetero,
            ..DgpConfig::default()
        };
        let a = gen_dataset(&cfg).unwrap();
        let b = gen_dataset(&cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.t, b.t);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn hetero_test_rows_satisfy_shift_predicate() {
        let cfg = DgpConfig {
            n_train: 400,
            n_cal: 200,
            n_test: 100,
            seed: 11,
            variance: VarianceMode::Hetero,
            ..DgpConfig::default()
        };
        let ds = gen_dataset(&cfg).unwrap();
        // Recompute the threshold exactly as the generator does.
        let root = Seed::from_u64(cfg.seed).child("dgp");
        let mut rng_ref = root.child("covariates.reference").rng();
        let reference = gen_covariates(cfg.n_train + cfg.n_cal, cfg.d, &mut rng_ref);
        let mut norms: Vec<f64> = reference
            .rows()
            .into_iter()
            .map(|r| norm2(r.as_slice().unwrap()))
            .collect();
        let threshold = empirical_quantile_inf(&mut norms, 0.9);
        for &i in &ds.indices(Split::Test).unwrap() {
            assert!(norm2(ds.x.row(i).as_slice().unwrap()) >= threshold);
        }
    }

    #[test]
    fn homo_test_rows_pass_ks_sanity_check() {
        let cfg = DgpConfig {
            n_train: 1000,
            n_cal: 1000,
            n_test: 2000,
            seed: 13,
            ..DgpConfig::default()
        };
        let ds = gen_dataset(&cfg).unwrap();
        let test_idx = ds.indices(Split::Test).unwrap();
        let mut a: Vec<f64> = test_idx
            .iter()
            .map(|&i| norm2(ds.x.row(i).as_slice().unwrap()))
            .collect();
        let fresh = gen_covariates(2000, cfg.d, &mut Seed::from_u64(999).rng());
        let mut b: Vec<f64> = fresh
            .rows()
            .into_iter()
            .map(|r| norm2(r.as_slice().unwrap()))
            .collect();
        a.sort_by(|u, v| u.partial_cmp(v).unwrap());
        b.sort_by(|u, v| u.partial_cmp(v).unwrap());
        // Two-sample KS statistic against the 0.1% critical value.
        let (n, m) = (a.len() as f64, b.len() as f64);
        let mut ks: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            ks = ks.max((i as f64 / n - j as f64 / m).abs());
        }
        let critical = ((-0.5 * (0.0005f64).ln()) * (n + m) / (n * m)).sqrt();
        assert!(ks < critical, "ks {ks} vs critical {critical}");
    }

    #[test]
    fn highdim_config_validation() {
        let bad = DgpConfig {
            scenario: Scenario::Highdim,
            d: 10,
            ..DgpConfig::default()
        };
        assert!(bad.validate().is_err());
        let good = DgpConfig {
            scenario: Scenario::Highdim,
            d: 12,
            n_train: 50,
            n_cal: 20,
            n_test: 10,
            ..DgpConfig::default()
        };
        assert!(good.validate().is_ok());
        gen_dataset(&good).unwrap();
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let cfg = DgpConfig {
            n_train: 30,
            n_cal: 20,
            n_test: 10,
            seed: 21,
            ..DgpConfig::default()
        };
        let ds = gen_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset_csv(&ds, &path, &[("config_hash", "abc".into())]).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(ds.x, back.x);
        assert_eq!(ds.t, back.t);
        for (a, b) in ds.y.iter().zip(&back.y) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(ds.split, back.split);
        assert_eq!(
            ds.pi_true.as_ref().unwrap(),
            back.pi_true.as_ref().unwrap()
        );
    }

    #[test]
    fn csv_accepts_minimal_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("min.csv");
        std::fs::write(&path, "x1,x2,t,y\n0.1,0.2,1,3.5\n0.3,0.4,0,0\n").unwrap();
        let ds = read_dataset_csv(&path).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.dim(), 2);
        assert!(ds.split.is_none());
        assert!(ds.y1_true.is_none());
        assert!(ds.indices(Split::Train).is_err());
    }

    #[test]
    fn semi_synthetic_constant_outcome_is_degenerate() {
        let mut rng = Seed::from_u64(61).rng();
        let n = 400;
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(0.0..1.0f64));
        let t: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let y = vec![3.25; n];
        let cfg = SemiSyntheticConfig {
            n_train: 100,
            n_cal: 50,
            n_test: 25,
            seed: 3,
            ..SemiSyntheticConfig::default()
        };
        let (ds, info) = semi_synthetic(x.view(), &t, &y, &cfg).unwrap();
        assert!(info.residual_iqr.abs() < 1e-9);
        let y1 = ds.y1_true.as_ref().unwrap();
        for &v in y1 {
            assert!((v - 3.25).abs() < 1e-9, "constant outcome drifted: {v}");
        }
    }

    #[test]
    fn semi_synthetic_noise_scale_matches_construction() {
        let mut rng = Seed::from_u64(62).rng();
        let n = 2000;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.0..1.0f64));
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]] + rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let cfg = SemiSyntheticConfig {
            n_train: 4000,
            n_cal: 1000,
            n_test: 500,
            seed: 5,
            ..SemiSyntheticConfig::default()
        };
        let (ds, info) = semi_synthetic(x.view(), &t, &y, &cfg).unwrap();
        let pi = ds.pi_true.as_ref().unwrap();
        assert!(pi.iter().all(|&p| (0.1..=0.9).contains(&p)));
        // sd(Y1 − m̂₁(X)) / (0.74·r̂₁) ≈ 1 by construction.
        let y1 = ds.y1_true.as_ref().unwrap();
        let resid: Vec<f64> = y1
            .iter()
            .zip(&info.fitted_mean)
            .map(|(a, b)| a - b)
            .collect();
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let sd = (resid.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / resid.len() as f64).sqrt();
        let ratio = sd / (cfg.iqr_to_sd * info.residual_iqr);
        assert!((ratio - 1.0).abs() < 0.05, "noise scale ratio {ratio}");
    }

    #[test]
    fn semi_synthetic_requires_treated_rows() {
        let x = Array2::zeros((50, 2));
        let t = vec![false; 50];
        let y = vec![0.0; 50];
        let cfg = SemiSyntheticConfig {
            n_train: 10,
            n_cal: 5,
            n_test: 5,
            ..SemiSyntheticConfig::default()
        };
        assert!(matches!(semi_synthetic(x.view(), &t, &y, &cfg), Err(_)));
    }

    #[test]
    fn table_csv_missing_column_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let cols = TableColumns {
            treatment: "t".into(),
            outcome: "y".into(),
            covariates: None,
        };
        assert!(matches!(read_table_csv(&path, &cols), Err(Error::Data(_))));
    }
}
