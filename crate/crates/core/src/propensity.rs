//! Propensity estimation: gradient-boosted regression trees on logistic
//! loss, with a damped-Newton logistic regression as fallback. The same tree
//! machinery also runs in squared-error mode for the semi-synthetic data
//! generator's outcome regressor.
//!
//! Split search is exact over sorted distinct feature values with ties broken
//! by lowest feature index, then lowest threshold, so fits are reproducible.

use crate::error::{Error, Result};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Boosting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    pub seed: u64,
    /// Probability clip bounds applied to emitted propensities.
    pub clip: (f64, f64),
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_trees: 100,
            max_depth: 3,
            shrinkage: 0.1,
            min_leaf: 10,
            seed: 0,
            clip: (0.05, 0.95),
        }
    }
}

impl GbmConfig {
    fn validate(&self) -> Result<()> {
        if self.shrinkage <= 0.0 || self.shrinkage > 1.0 {
            return Err(Error::Config(format!("shrinkage must lie in (0,1], got {}", self.shrinkage)));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be ≥ 1".into()));
        }
        let (lo, hi) = self.clip;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!("clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Axis-aligned regression tree stored as a node arena.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_with(|f| x[f])
    }

    pub fn predict_row(&self, row: ndarray::ArrayView1<'_, f64>) -> f64 {
        self.predict_with(|f| row[f])
    }

    fn predict_with(&self, x: impl Fn(usize) -> f64) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Gradient-boosted trees fit on logistic loss; predictions are clipped
/// probabilities.
#[derive(Debug, Clone)]
pub struct BoostedTreesModel {
    pub trees: Vec<Tree>,
    pub shrinkage: f64,
    pub init_log_odds: f64,
    pub clip: (f64, f64),
    pub n_features: usize,
    /// Mean logistic deviance on the training set after each boosting round
    /// (index 0 is the intercept-only fit).
    pub train_deviance: Vec<f64>,
}

impl BoostedTreesModel {
    /// Clipped propensity at `x`: sigmoid of the initial log-odds plus the
    /// shrunken sum of leaf values.
    pub fn predict_propensity(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "input dimension {} != training dimension {}",
                x.len(),
                self.n_features
            )));
        }
        let mut f = self.init_log_odds;
        for tree in &self.trees {
            f += self.shrinkage * tree.predict(x);
        }
        let p = sigmoid(f);
        Ok(p.clamp(self.clip.0, self.clip.1))
    }
}

/// Gradient-boosted trees fit on squared error.
#[derive(Debug, Clone)]
pub struct BoostedRegressionModel {
    pub trees: Vec<Tree>,
    pub shrinkage: f64,
    pub init_value: f64,
    pub n_features: usize,
}

impl BoostedRegressionModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "input dimension {} != training dimension {}",
                x.len(),
                self.n_features
            )));
        }
        let mut f = self.init_value;
        for tree in &self.trees {
            f += self.shrinkage * tree.predict(x);
        }
        Ok(f)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable mean logistic deviance `mean(log(1+e^F) − t·F)`.
fn mean_logistic_loss(f: &[f64], t: &[bool]) -> f64 {
    let n = f.len() as f64;
    f.iter()
        .zip(t)
        .map(|(&fi, &ti)| {
            let lse = fi.max(0.0) + (-(fi.abs())).exp().ln_1p();
            lse - if ti { fi } else { 0.0 }
        })
        .sum::<f64>()
        / n
}

/// One candidate split found by the exact search.
struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows a least-squares tree on `grad`; leaf values are Newton steps
/// `Σgrad/Σhess` when hessians are supplied, plain means otherwise.
struct TreeBuilder<'x, 'g> {
    x: ArrayView2<'x, f64>,
    grad: &'g [f64],
    hess: Option<&'g [f64]>,
    max_depth: usize,
    min_leaf: usize,
}

/// Leaf values are clamped so a vanishing hessian cannot produce an
/// arbitrarily large Newton step.
const MAX_LEAF_VALUE: f64 = 10.0;

impl TreeBuilder<'_, '_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let v = match self.hess {
            Some(h) => {
                let hs: f64 = rows.iter().map(|&r| h[r]).sum();
                g / (hs + 1e-12)
            }
            None => g / rows.len() as f64,
        };
        v.clamp(-MAX_LEAF_VALUE, MAX_LEAF_VALUE)
    }

    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let total: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<usize> = Vec::with_capacity(n);
        for feature in 0..self.x.ncols() {
            sorted.clear();
            sorted.extend_from_slice(rows);
            sorted.sort_by(|&a, &b| {
                self.x[[a, feature]]
                    .partial_cmp(&self.x[[b, feature]])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.grad[sorted[i]];
                let n_left = i + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let (xl, xr) = (self.x[[sorted[i], feature]], self.x[[sorted[i + 1], feature]]);
                if xl == xr {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - total * total / n as f64;
                if best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold: 0.5 * (xl + xr),
                    });
                }
            }
        }
        best
    }

    fn build(&self, nodes: &mut Vec<TreeNode>, rows: &[usize], depth: usize) -> usize {
        if depth < self.max_depth {
            if let Some(split) = self.best_split(rows) {
                let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
                for &r in rows {
                    if self.x[[r, split.feature]] <= split.threshold {
                        left_rows.push(r);
                    } else {
                        right_rows.push(r);
                    }
                }
                let idx = nodes.len();
                nodes.push(TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left: 0,
                    right: 0,
                });
                let left = self.build(nodes, &left_rows, depth + 1);
                let right = self.build(nodes, &right_rows, depth + 1);
                if let TreeNode::Split {
                    left: l, right: r, ..
                } = &mut nodes[idx]
                {
                    *l = left;
                    *r = right;
                }
                return idx;
            }
        }
        nodes.push(TreeNode::Leaf {
            value: self.leaf_value(rows),
        });
        nodes.len() - 1
    }

    fn fit(&self) -> Tree {
        let mut nodes = Vec::new();
        let rows: Vec<usize> = (0..self.x.nrows()).collect();
        self.build(&mut nodes, &rows, 0);
        Tree { nodes }
    }
}

/// Stagewise logistic boosting: each round fits a tree to the negative
/// gradient of the logistic loss at the current log-odds, starting from the
/// logit of the treated fraction.
pub fn fit_gbm(x: ArrayView2<'_, f64>, t: &[bool], config: &GbmConfig) -> Result<BoostedTreesModel> {
    config.validate()?;
    let n = x.nrows();
    if n != t.len() {
        return Err(Error::Shape(format!("{n} rows vs {} treatment labels", t.len())));
    }
    if n < 2 * config.min_leaf {
        return Err(Error::Config(format!(
            "need at least {} rows for min_leaf {}, got {n}",
            2 * config.min_leaf,
            config.min_leaf
        )));
    }
    let n_treated = t.iter().filter(|&&ti| ti).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::SingleClass(format!(
            "{n_treated} of {n} rows treated"
        )));
    }
    let p_bar = n_treated as f64 / n as f64;
    let init = (p_bar / (1.0 - p_bar)).ln();
    let mut f = vec![init; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut train_deviance = Vec::with_capacity(config.n_trees + 1);
    train_deviance.push(mean_logistic_loss(&f, t));
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..config.n_trees {
        for i in 0..n {
            let p = sigmoid(f[i]);
            grad[i] = if t[i] { 1.0 - p } else { -p };
            hess[i] = p * (1.0 - p);
        }
        let tree = TreeBuilder {
            x,
            grad: &grad,
            hess: Some(&hess),
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
        }
        .fit();
        for i in 0..n {
            f[i] += config.shrinkage * tree.predict_row(x.row(i));
        }
        train_deviance.push(mean_logistic_loss(&f, t));
        trees.push(tree);
    }
    Ok(BoostedTreesModel {
        trees,
        shrinkage: config.shrinkage,
        init_log_odds: init,
        clip: config.clip,
        n_features: x.ncols(),
        train_deviance,
    })
}

/// Stagewise least-squares boosting for a conditional-mean regressor.
pub fn fit_gbm_regressor(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: &GbmConfig,
) -> Result<BoostedRegressionModel> {
    config.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::Shape(format!("{n} rows vs {} outcomes", y.len())));
    }
    if n < 2 * config.min_leaf {
        return Err(Error::Config(format!(
            "need at least {} rows for min_leaf {}, got {n}",
            2 * config.min_leaf,
            config.min_leaf
        )));
    }
    let init = y.iter().sum::<f64>() / n as f64;
    let mut f = vec![init; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut grad = vec![0.0; n];
    for _ in 0..config.n_trees {
        for i in 0..n {
            grad[i] = y[i] - f[i];
        }
        let tree = TreeBuilder {
            x,
            grad: &grad,
            hess: None,
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
        }
        .fit();
        for i in 0..n {
            f[i] += config.shrinkage * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(BoostedRegressionModel {
        trees,
        shrinkage: config.shrinkage,
        init_value: init,
        n_features: x.ncols(),
    })
}

/// Newton-solver settings for the logistic fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Maximum-likelihood logistic regression. Zero-variance features are
/// excluded from the solve and reported with zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Indices of zero-variance features whose coefficients were forced to 0.
    pub excluded: Vec<usize>,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_propensity(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::Shape(format!(
                "input dimension {} != training dimension {}",
                x.len(),
                self.coefficients.len()
            )));
        }
        let z = self.intercept
            + x.iter()
                .zip(&self.coefficients)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Ok(sigmoid(z))
    }
}

/// Cholesky solve of a symmetric positive-definite system, in place.
fn cholesky_solve(a: &mut Vec<Vec<f64>>, b: &mut [f64]) -> Result<()> {
    let n = b.len();
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Config("singular normal equations".into()));
                }
                a[i][j] = s.sqrt();
            } else {
                a[i][j] = s / a[j][j];
            }
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    Ok(())
}

/// Damped-Newton logistic regression to gradient-norm tolerance.
pub fn fit_logistic(
    x: ArrayView2<'_, f64>,
    t: &[bool],
    config: &LogisticConfig,
) -> Result<LogisticModel> {
    let n = x.nrows();
    let d = x.ncols();
    if n != t.len() {
        return Err(Error::Shape(format!("{n} rows vs {} labels", t.len())));
    }
    if n == 0 {
        return Err(Error::Empty("no rows".into()));
    }
    let n_treated = t.iter().filter(|&&ti| ti).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::SingleClass(format!("{n_treated} of {n} rows treated")));
    }
    // Zero-variance columns cannot be identified; drop them from the solve.
    let mut excluded = Vec::new();
    let mut active = Vec::new();
    for j in 0..d {
        let col = x.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            excluded.push(j);
        } else {
            active.push(j);
        }
    }
    let k = active.len() + 1; // active features + intercept
    let mut beta = vec![0.0; k];
    let feat = |i: usize, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            x[[i, active[j - 1]]]
        }
    };
    let loss = |beta: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let z: f64 = (0..k).map(|j| beta[j] * feat(i, j)).sum();
            total += z.max(0.0) + (-(z.abs())).exp().ln_1p() - if t[i] { z } else { 0.0 };
        }
        total / n as f64
    };
    let mut iterations = 0;
    loop {
        // Gradient and Hessian of the mean logistic loss.
        let mut grad = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        for i in 0..n {
            let z: f64 = (0..k).map(|j| beta[j] * feat(i, j)).sum();
            let p = sigmoid(z);
            let r = p - if t[i] { 1.0 } else { 0.0 };
            let w = (p * (1.0 - p)).max(1e-12);
            for a in 0..k {
                let fa = feat(i, a);
                grad[a] += r * fa;
                for b in 0..=a {
                    hess[a][b] += w * fa * feat(i, b);
                }
            }
        }
        for g in grad.iter_mut() {
            *g /= n as f64;
        }
        for a in 0..k {
            for b in 0..=a {
                hess[a][b] /= n as f64;
                hess[b][a] = hess[a][b];
            }
            hess[a][a] += 1e-12;
        }
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < config.tol {
            break;
        }
        if iterations >= config.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm,
                tol: config.tol,
            });
        }
        let mut step = grad.clone();
        cholesky_solve(&mut hess, &mut step)?;
        // Damping: halve the Newton step until the loss decreases.
        let l0 = loss(&beta);
        let mut scale = 1.0;
        let mut candidate;
        loop {
            candidate = beta
                .iter()
                .zip(&step)
                .map(|(b, s)| b - scale * s)
                .collect::<Vec<_>>();
            if loss(&candidate) <= l0 || scale < 1e-8 {
                break;
            }
            scale *= 0.5;
        }
        beta = candidate;
        iterations += 1;
    }
    let mut coefficients = vec![0.0; d];
    for (slot, &j) in active.iter().enumerate() {
        coefficients[j] = beta[slot + 1];
    }
    Ok(LogisticModel {
        coefficients,
        intercept: beta[0],
        excluded,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn intercept_only_gbm_predicts_treated_fraction() {
        let x = Array2::zeros((40, 2));
        let t: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect(); // 25% treated
        let cfg = GbmConfig {
            n_trees: 0,
            ..GbmConfig::default()
        };
        let m = fit_gbm(x.view(), &t, &cfg).unwrap();
        let p = m.predict_propensity(&[0.0, 0.0]).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_even_split_is_half() {
        let x = Array2::zeros((20, 1));
        let t: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let cfg = GbmConfig {
            n_trees: 0,
            ..GbmConfig::default()
        };
        let m = fit_gbm(x.view(), &t, &cfg).unwrap();
        assert!((m.predict_propensity(&[0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy() {
        let mut rng = Seed::from_u64(31).rng();
        let n = 200;
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0f64));
        let t: Vec<bool> = (0..n).map(|i| x[[i, 0]] > 0.0).collect();
        let cfg = GbmConfig {
            n_trees: 60,
            max_depth: 1,
            min_leaf: 5,
            ..GbmConfig::default()
        };
        let m = fit_gbm(x.view(), &t, &cfg).unwrap();
        let correct = (0..n)
            .filter(|&i| {
                let p = m.predict_propensity(x.row(i).as_slice().unwrap()).unwrap();
                (p > 0.5) == t[i]
            })
            .count();
        assert_eq!(correct, n);
    }

    #[test]
    fn gbm_rejects_single_class() {
        let x = Array2::zeros((30, 1));
        let t = vec![true; 30];
        assert!(matches!(
            fit_gbm(x.view(), &t, &GbmConfig::default()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn gbm_training_deviance_non_increasing() {
        let mut rng = Seed::from_u64(33).rng();
        let n = 300;
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(0.0..1.0f64));
        let t: Vec<bool> = (0..n)
            .map(|i| rng.gen_bool((0.2 + 0.6 * x[[i, 0]]).clamp(0.05, 0.95)))
            .collect();
        let m = fit_gbm(x.view(), &t, &GbmConfig::default()).unwrap();
        for w in m.train_deviance.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "deviance rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn gbm_is_deterministic() {
        let mut rng = Seed::from_u64(34).rng();
        let n = 120;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.0..1.0f64));
        let t: Vec<bool> = (0..n).map(|i| x[[i, 1]] + x[[i, 0]] > 1.0).collect();
        let cfg = GbmConfig {
            n_trees: 25,
            ..GbmConfig::default()
        };
        let a = fit_gbm(x.view(), &t, &cfg).unwrap();
        let b = fit_gbm(x.view(), &t, &cfg).unwrap();
        assert_eq!(a.trees, b.trees);
    }

    #[test]
    fn propensity_predictions_respect_clip_bounds() {
        let mut rng = Seed::from_u64(35).rng();
        let n = 100;
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-2.0..2.0f64));
        let t: Vec<bool> = (0..n).map(|i| x[[i, 0]] > 0.0).collect();
        let cfg = GbmConfig {
            n_trees: 80,
            max_depth: 2,
            min_leaf: 2,
            clip: (0.05, 0.95),
            ..GbmConfig::default()
        };
        let m = fit_gbm(x.view(), &t, &cfg).unwrap();
        for v in [-5.0, -1.0, 0.0, 1.0, 5.0] {
            let p = m.predict_propensity(&[v]).unwrap();
            assert!((0.05..=0.95).contains(&p));
        }
        // A saturated raw score clips to the upper bound.
        let p = m.predict_propensity(&[100.0]).unwrap();
        assert_eq!(p, 0.95);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let x = Array2::zeros((40, 2));
        let t: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let cfg = GbmConfig {
            n_trees: 0,
            ..GbmConfig::default()
        };
        let m = fit_gbm(x.view(), &t, &cfg).unwrap();
        assert!(m.predict_propensity(&[0.0]).is_err());
    }

    #[test]
    fn gbm_regressor_fits_smooth_function() {
        let mut rng = Seed::from_u64(36).rng();
        let n = 600;
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(0.0..1.0f64));
        let y: Vec<f64> = (0..n).map(|i| (2.0 * x[[i, 0]]).sin()).collect();
        let m = fit_gbm_regressor(x.view(), &y, &GbmConfig::default()).unwrap();
        let mut mae = 0.0;
        for i in 0..n {
            mae += (m.predict(x.row(i).as_slice().unwrap()).unwrap() - y[i]).abs();
        }
        mae /= n as f64;
        assert!(mae < 0.05, "regressor MAE {mae}");
    }

    #[test]
    fn logistic_null_model_has_vanishing_coefficients() {
        let mut rng = Seed::from_u64(37).rng();
        let n = 4000;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0f64));
        let t: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let m = fit_logistic(x.view(), &t, &LogisticConfig::default()).unwrap();
        assert!(m.intercept.abs() < 0.05);
        assert!(m.coefficients.iter().all(|c| c.abs() < 0.1));
    }

    #[test]
    fn logistic_intercept_only_is_logit_of_rate() {
        // 75% treated with only a zero-variance feature: the intercept is
        // logit(0.75) = ln 3 and the dead column is excluded.
        let x = Array2::from_elem((200, 1), 0.7);
        let t: Vec<bool> = (0..200).map(|i| i % 4 != 0).collect();
        let m = fit_logistic(x.view(), &t, &LogisticConfig::default()).unwrap();
        assert_eq!(m.excluded, vec![0]);
        assert_eq!(m.coefficients, vec![0.0]);
        assert!((m.intercept - 3.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn logistic_recovers_known_slope() {
        let mut rng = Seed::from_u64(38).rng();
        let n = 8000;
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-2.0..2.0f64));
        let t: Vec<bool> = (0..n)
            .map(|i| rng.gen_bool(sigmoid(0.5 + 1.5 * x[[i, 0]])))
            .collect();
        let m = fit_logistic(x.view(), &t, &LogisticConfig::default()).unwrap();
        assert!((m.intercept - 0.5).abs() < 0.15);
        assert!((m.coefficients[0] - 1.5).abs() < 0.15);
    }
}
