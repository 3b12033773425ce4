//! Weighted split-conformal machinery: non-conformity scores against
//! generated samples, localization and treatment-balancing weights, the
//! weighted quantile with a point mass at infinity, and union-of-intervals
//! prediction sets.
//!
//! Prediction-set endpoints are computed so that interval membership agrees
//! *exactly*, in floating point, with the score test `min_m |y − ŷ_m| ≤ q`.
//! Each endpoint is the outermost `f64` whose rounded distance to the
//! generating sample still passes the score test, so the two membership
//! routes can never disagree, boundary ties included.

use crate::error::{Error, Result};
use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Localization bandwidth: a fixed `h > 0`, or the explicit sentinel that
/// disables localization (all local weights equal 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    NoLocalization,
}

/// One calibration unit: covariates, non-conformity score, and the
/// target-independent part of its unnormalized weight (the
/// treatment-balancing factor; the localization factor multiplies in per
/// target point).
#[derive(Debug, Clone)]
pub struct CalibrationRecord {
    pub x: Vec<f64>,
    pub score: f64,
    pub weight: f64,
}

impl CalibrationRecord {
    pub fn new(x: Vec<f64>, score: f64, weight: f64) -> Result<Self> {
        if !(score.is_finite() && score >= 0.0) {
            return Err(Error::Config(format!("score must be finite and ≥ 0, got {score}")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Config(format!("weight must be finite and ≥ 0, got {weight}")));
        }
        Ok(CalibrationRecord { x, score, weight })
    }
}

/// Calibration scores with normalized masses plus the target point's mass.
#[derive(Debug, Clone)]
pub struct WeightedScoreSet {
    pub scores: Vec<f64>,
    pub masses: Vec<f64>,
    pub test_mass: f64,
}

impl WeightedScoreSet {
    /// Combine per-record balancing weights with localization weights
    /// (`local` has one entry per calibration record plus a final entry for
    /// the target point) and normalize.
    pub fn assemble(
        records: &[CalibrationRecord],
        local: &[f64],
        test_balance_weight: f64,
    ) -> Result<Self> {
        if local.len() != records.len() + 1 {
            return Err(Error::Shape(format!(
                "{} localization weights for {} calibration records",
                local.len(),
                records.len()
            )));
        }
        let mut raw: Vec<f64> = records
            .iter()
            .zip(local)
            .map(|(r, l)| r.weight * l)
            .collect();
        raw.push(test_balance_weight * local[records.len()]);
        let masses = normalize_weights(&raw)?;
        let test_mass = masses[records.len()];
        Ok(WeightedScoreSet {
            scores: records.iter().map(|r| r.score).collect(),
            masses: masses[..records.len()].to_vec(),
            test_mass,
        })
    }

    /// Weighted conformal quantile at coverage level `1 − alpha`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        weighted_quantile(&self.scores, &self.masses, self.test_mass, 1.0 - alpha)
    }
}

/// Minimum absolute distance between `y` and the generated samples.
/// Non-negative, zero exactly when `y` equals a sample.
pub fn nonconformity_score(y: f64, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("non-conformity score needs at least one sample".into()));
    }
    Ok(samples
        .iter()
        .map(|s| (y - s).abs())
        .fold(f64::INFINITY, f64::min))
}

/// Gaussian kernel value `exp(−‖u−v‖² / (2h²))`.
fn gaussian_kernel(u: &[f64], v: &[f64], h: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * h * h)).exp()
}

/// Standard-normal offset used to place the localization surrogate point.
/// Drawn once per target point; the surrogate is `x_test + h·z`.
pub fn localization_offset(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unnormalized localization weights for a fixed offset draw: kernel values
/// `H(X_j, x̃)` with `x̃ = x_test + h·z`, for every calibration row plus the
/// target point itself (last entry).
pub fn local_weights_at(
    cal_x: ArrayView2<'_, f64>,
    x_test: &[f64],
    h: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Config(format!("bandwidth must be finite and > 0, got {h}")));
    }
    let d = x_test.len();
    if cal_x.ncols() != d || z.len() != d {
        return Err(Error::Shape(format!(
            "covariate dimension mismatch: cal {} / test {} / offset {}",
            cal_x.ncols(),
            d,
            z.len()
        )));
    }
    let x_tilde: Vec<f64> = x_test.iter().zip(z).map(|(x, zi)| x + h * zi).collect();
    let mut w: Vec<f64> = cal_x
        .rows()
        .into_iter()
        .map(|row| gaussian_kernel(row.as_slice().unwrap(), &x_tilde, h))
        .collect();
    w.push(gaussian_kernel(x_test, &x_tilde, h));
    Ok(w)
}

/// Unnormalized localization weights over calibration rows plus the target
/// point (last entry). Draws the surrogate point from a Gaussian centered at
/// `x_test` with per-coordinate sd `h`; with [`Bandwidth::NoLocalization`]
/// every weight is 1 and no draw is consumed.
pub fn local_weights(
    cal_x: ArrayView2<'_, f64>,
    x_test: &[f64],
    bandwidth: Bandwidth,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    match bandwidth {
        Bandwidth::NoLocalization => Ok(vec![1.0; cal_x.nrows() + 1]),
        Bandwidth::Fixed(h) => {
            if h <= 0.0 || !h.is_finite() {
                return Err(Error::Config(format!(
                    "bandwidth must be finite and > 0, got {h}"
                )));
            }
            let z = localization_offset(x_test.len(), rng);
            local_weights_at(cal_x, x_test, h, &z)
        }
    }
}

/// Inverse-propensity balancing weight `t/π̂ + (1−t)/(1−π̂)`.
pub fn balance_weight(treated: bool, pi_hat: f64) -> Result<f64> {
    if !(pi_hat > 0.0 && pi_hat < 1.0) {
        return Err(Error::Config(format!(
            "propensity must lie strictly inside (0,1), got {pi_hat}"
        )));
    }
    Ok(if treated { 1.0 / pi_hat } else { 1.0 / (1.0 - pi_hat) })
}

/// Normalize raw non-negative weights to masses summing to 1.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Empty("no weights to normalize".into()));
    }
    let mut sum = 0.0;
    for &w in raw {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Config(format!("weights must be finite and ≥ 0, got {w}")));
        }
        sum += w;
    }
    if sum <= 0.0 {
        return Err(Error::Config("all weights are zero".into()));
    }
    Ok(raw.iter().map(|w| w / sum).collect())
}

/// Left-continuous quantile of the discrete distribution carrying `masses`
/// at the finite `values` plus `tail_mass` at `+∞`: the smallest value whose
/// cumulative mass reaches `beta`, or `+∞` when the finite mass falls short.
/// Ties in value keep input order, so equal atoms accumulate in a fixed
/// sequence.
fn quantile_with_tail_mass(values: &[f64], masses: &[f64], tail_mass: f64, beta: f64) -> f64 {
    debug_assert_eq!(values.len(), masses.len());
    let _ = tail_mass; // mass at +∞ never reaches any finite threshold
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut cum = 0.0;
    for &i in &order {
        cum += masses[i];
        if cum >= beta {
            return values[i];
        }
    }
    f64::INFINITY
}

/// Weighted conformal quantile: smallest calibration score whose cumulative
/// normalized mass reaches `level`; `+∞` when the total finite mass is below
/// `level` (the target point's mass sits at `+∞`).
pub fn weighted_quantile(
    scores: &[f64],
    masses: &[f64],
    test_mass: f64,
    level: f64,
) -> Result<f64> {
    if scores.len() != masses.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} masses",
            scores.len(),
            masses.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level must lie in (0,1), got {level}")));
    }
    if !(test_mass.is_finite() && test_mass >= 0.0) {
        return Err(Error::Config(format!("test mass must be finite and ≥ 0, got {test_mass}")));
    }
    Ok(quantile_with_tail_mass(scores, masses, test_mass, level))
}

/// Checks that moving the last atom's mass to `+∞` does not change whether
/// that atom's value sits at or below the `beta`-quantile. Returns the
/// shared truth value; errors if the two sides disagree.
pub fn quantile_tail_mass_equivalence(values: &[f64], masses: &[f64], beta: f64) -> Result<bool> {
    if values.is_empty() || values.len() != masses.len() {
        return Err(Error::Shape("need equally many values and masses, at least one".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0,1], got {beta}")));
    }
    let n = values.len() - 1;
    let v_last = values[n];
    let q_full = quantile_with_tail_mass(values, masses, 0.0, beta);
    let q_tail = quantile_with_tail_mass(&values[..n], &masses[..n], masses[n], beta);
    let lhs = v_last <= q_full;
    let rhs = v_last <= q_tail;
    if lhs != rhs {
        return Err(Error::Invariant(format!(
            "tail-mass quantile equivalence violated: v={v_last}, full quantile {q_full} ({lhs}), tail quantile {q_tail} ({rhs})"
        )));
    }
    Ok(lhs)
}

/// A union of disjoint closed intervals, possibly the entire real line (the
/// degenerate case of an infinite conformal quantile).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub intervals: Vec<(f64, f64)>,
    pub entire_line: bool,
}

impl PredictionSet {
    pub fn entire_line() -> Self {
        PredictionSet {
            intervals: Vec::new(),
            entire_line: true,
        }
    }

    /// Membership with closed endpoints, by binary search over the sorted
    /// disjoint intervals.
    pub fn contains(&self, value: f64) -> bool {
        if self.entire_line {
            return true;
        }
        let idx = self.intervals.partition_point(|&(_, hi)| hi < value);
        idx < self.intervals.len() && self.intervals[idx].0 <= value
    }

    /// Sum of interval lengths; `+∞` for the entire-line set.
    pub fn total_length(&self) -> f64 {
        if self.entire_line {
            return f64::INFINITY;
        }
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }
}

/// Largest `z ≥ s` whose rounded distance to `s` still satisfies
/// `fl(z − s) ≤ q`. Starts at the rounded sum and walks at most a few ulps.
fn upper_boundary(s: f64, q: f64) -> f64 {
    let mut z = s + q;
    if !z.is_finite() {
        z = f64::MAX;
    }
    while (z.next_up() - s) <= q && z.next_up().is_finite() {
        z = z.next_up();
    }
    while (z - s) > q {
        z = z.next_down();
    }
    z
}

/// Smallest `z ≤ s` with `fl(s − z) ≤ q`; mirror of [`upper_boundary`].
fn lower_boundary(s: f64, q: f64) -> f64 {
    let mut z = s - q;
    if !z.is_finite() {
        z = f64::MIN;
    }
    while (s - z.next_down()) <= q && z.next_down().is_finite() {
        z = z.next_down();
    }
    while (s - z) > q {
        z = z.next_up();
    }
    z
}

/// Union of the closed intervals `[ŷ_m − q, ŷ_m + q]`, sorted and merged
/// (touching intervals merge). An infinite quantile yields the entire line.
/// Endpoints are the exact floating-point boundaries of the score test, so
/// membership and the score comparison agree bit-for-bit.
pub fn build_prediction_set(samples: &[f64], q: f64) -> Result<PredictionSet> {
    if samples.is_empty() {
        return Err(Error::Empty("prediction set needs at least one sample".into()));
    }
    if q.is_nan() || q < 0.0 {
        return Err(Error::Config(format!("quantile must be ≥ 0 or +∞, got {q}")));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("sample values".into()));
    }
    if q == f64::INFINITY {
        return Ok(PredictionSet::entire_line());
    }
    let mut intervals: Vec<(f64, f64)> = samples
        .iter()
        .map(|&s| (lower_boundary(s, q), upper_boundary(s, q)))
        .collect();
    intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for (lo, hi) in intervals {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    Ok(PredictionSet {
        intervals: merged,
        entire_line: false,
    })
}

/// Internal consistency probe: interval membership of `y` must equal the
/// score test `min_m |y − ŷ_m| ≤ q`. Returns the shared truth value; errors
/// on disagreement.
pub fn membership_equivalence_check(y: f64, samples: &[f64], q: f64) -> Result<bool> {
    let set = build_prediction_set(samples, q)?;
    let by_interval = set.contains(y);
    let by_score = nonconformity_score(y, samples)? <= q;
    if by_interval != by_score {
        return Err(Error::Invariant(format!(
            "membership equivalence violated at y={y}: interval {by_interval}, score {by_score}"
        )));
    }
    Ok(by_interval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn score_examples() {
        assert_eq!(nonconformity_score(1.0, &[1.0, 3.0]).unwrap(), 0.0);
        let v = nonconformity_score(1.0, &[0.5, 1.2, 3.0]).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        assert_eq!(nonconformity_score(2.0, &[-1.5]).unwrap(), 3.5);
        assert!(nonconformity_score(1.0, &[]).is_err());
    }

    #[test]
    fn balance_weight_examples() {
        assert_eq!(balance_weight(true, 0.25).unwrap(), 4.0);
        assert!((balance_weight(false, 0.25).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(balance_weight(true, 0.5).unwrap(), 2.0);
        assert_eq!(balance_weight(false, 0.5).unwrap(), 2.0);
        assert!(balance_weight(true, 0.0).is_err());
        assert!(balance_weight(false, 1.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let p = normalize_weights(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = normalize_weights(&[1.0, 3.0]).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
        assert!(normalize_weights(&[0.0, 0.0]).is_err());
        assert!(normalize_weights(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn normalize_sums_to_one() {
        let mut rng = Seed::from_u64(1).rng();
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0) + 1e-12).collect();
            let p = normalize_weights(&raw).unwrap();
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn weighted_quantile_examples() {
        // Cumulative mass 0.3, 0.6 ≥ 0.6 at the second score.
        let q = weighted_quantile(&[1.0, 2.0, 3.0], &[0.3, 0.3, 0.3], 0.1, 0.6).unwrap();
        assert_eq!(q, 2.0);
        // Finite mass 0.9 < 0.95 → infinite quantile.
        let q = weighted_quantile(&[1.0, 2.0, 3.0], &[0.3, 0.3, 0.3], 0.1, 0.95).unwrap();
        assert_eq!(q, f64::INFINITY);
    }

    #[test]
    fn weighted_quantile_uniform_matches_order_statistic() {
        let mut rng = Seed::from_u64(2).rng();
        for _ in 0..100 {
            let n = rng.gen_range(5..120);
            let alpha = rng.gen_range(0.02..0.5);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0)).collect();
            let raw = vec![1.0; n + 1];
            let p = normalize_weights(&raw).unwrap();
            let q = weighted_quantile(&scores, &p[..n], p[n], 1.0 - alpha).unwrap();
            let rank = ((1.0 - alpha) * (n as f64 + 1.0)).ceil() as usize;
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected = if rank > n {
                f64::INFINITY
            } else {
                sorted[rank - 1]
            };
            assert_eq!(q, expected);
        }
    }

    #[test]
    fn weighted_quantile_monotone_in_level() {
        let mut rng = Seed::from_u64(3).rng();
        for _ in 0..50 {
            let n = rng.gen_range(3..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let raw: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.0..1.0) + 1e-9).collect();
            let p = normalize_weights(&raw).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for lev in [0.05, 0.2, 0.4, 0.6, 0.8, 0.95, 0.999] {
                let q = weighted_quantile(&scores, &p[..n], p[n], lev).unwrap();
                assert!(q >= prev);
                prev = q;
            }
        }
    }

    #[test]
    fn scaling_raw_weights_by_power_of_two_is_exact() {
        let mut rng = Seed::from_u64(4).rng();
        for &c in &[0.25f64, 2.0, 1024.0] {
            for _ in 0..50 {
                let n = rng.gen_range(3..30);
                let raw: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.0..3.0) + 1e-9).collect();
                let scaled: Vec<f64> = raw.iter().map(|w| w * c).collect();
                let p1 = normalize_weights(&raw).unwrap();
                let p2 = normalize_weights(&scaled).unwrap();
                for (a, b) in p1.iter().zip(&p2) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn scaling_raw_weights_leaves_quantile_unchanged() {
        let mut rng = Seed::from_u64(5).rng();
        for _ in 0..100 {
            let n = rng.gen_range(3..50);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let raw: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.0..3.0) + 1e-9).collect();
            let c = rng.gen_range(0.1..25.0);
            let scaled: Vec<f64> = raw.iter().map(|w| w * c).collect();
            let p1 = normalize_weights(&raw).unwrap();
            let p2 = normalize_weights(&scaled).unwrap();
            let lev = rng.gen_range(0.5..0.99);
            let q1 = weighted_quantile(&scores, &p1[..n], p1[n], lev).unwrap();
            let q2 = weighted_quantile(&scores, &p2[..n], p2[n], lev).unwrap();
            assert_eq!(q1, q2);
        }
    }

    #[test]
    fn build_set_merges_and_measures() {
        let set = build_prediction_set(&[0.0, 0.5, 3.0], 0.3).unwrap();
        assert_eq!(set.intervals.len(), 2);
        let (a, b) = set.intervals[0];
        let (c, d) = set.intervals[1];
        assert!((a + 0.3).abs() < 1e-12 && (b - 0.8).abs() < 1e-12);
        assert!((c - 2.7).abs() < 1e-12 && (d - 3.3).abs() < 1e-12);
        assert!((set.total_length() - 1.7).abs() < 1e-12);
    }

    #[test]
    fn build_set_zero_radius_dedups() {
        let set = build_prediction_set(&[1.0, 1.0, 2.0], 0.0).unwrap();
        assert_eq!(set.intervals, vec![(1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(set.total_length(), 0.0);
        assert!(set.contains(1.0) && set.contains(2.0) && !set.contains(1.5));
    }

    #[test]
    fn build_set_infinite_quantile() {
        let set = build_prediction_set(&[1.0], f64::INFINITY).unwrap();
        assert!(set.entire_line);
        assert!(set.contains(-1e300) && set.contains(0.0) && set.contains(f64::MAX));
        assert_eq!(set.total_length(), f64::INFINITY);
    }

    #[test]
    fn build_set_rejects_negative_quantile() {
        assert!(build_prediction_set(&[1.0], -0.5).is_err());
        assert!(build_prediction_set(&[], 1.0).is_err());
    }

    #[test]
    fn contains_examples() {
        let set = build_prediction_set(&[0.0, 0.5, 3.0], 0.3).unwrap();
        assert!(!set.contains(1.5));
        assert!(set.contains(set.intervals[0].1)); // closed endpoint
        assert!(set.contains(set.intervals[1].0));
        assert!(set.contains(0.75) && set.contains(3.0) && !set.contains(2.0));
    }

    #[test]
    fn merge_is_idempotent_and_order_insensitive() {
        let mut rng = Seed::from_u64(6).rng();
        for _ in 0..200 {
            let m = rng.gen_range(1..12);
            let mut samples: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let q = rng.gen_range(0.0..1.5);
            let a = build_prediction_set(&samples, q).unwrap();
            // Permuted input gives the identical merged set.
            samples.reverse();
            let b = build_prediction_set(&samples, q).unwrap();
            assert_eq!(a, b);
            // Intervals are sorted and pairwise disjoint.
            for w in a.intervals.windows(2) {
                assert!(w[0].1 < w[1].0);
            }
            for &(lo, hi) in &a.intervals {
                assert!(lo <= hi);
            }
        }
    }

    #[test]
    fn membership_equivalence_random_instances() {
        let mut rng = Seed::from_u64(7).rng();
        for i in 0..1000 {
            let m = rng.gen_range(1..10);
            let samples: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let q = if i % 17 == 0 {
                f64::INFINITY
            } else {
                rng.gen_range(0.0..2.0)
            };
            let y = if i % 5 == 0 {
                // Boundary ties: y constructed from a sample and the radius.
                let s = samples[rng.gen_range(0..m)];
                if rng.gen_bool(0.5) {
                    s + q
                } else {
                    s - q
                }
            } else {
                rng.gen_range(-7.0..7.0)
            };
            membership_equivalence_check(y, &samples, q).unwrap();
        }
    }

    #[test]
    fn membership_boundary_tie_is_inside() {
        // y exactly at distance q from its nearest sample: both routes true.
        let samples = [1.0, 4.0];
        let q = 0.125; // dyadic, so 1.0 + 0.125 is exact
        let y = 1.125;
        assert!(membership_equivalence_check(y, &samples, q).unwrap());
        // Adversarial non-dyadic tie through the score route.
        let y2 = 3.7f64;
        let q2 = (y2 - 4.0f64).abs();
        assert!(membership_equivalence_check(y2, &samples, q2).unwrap());
    }

    #[test]
    fn membership_infinite_quantile_always_true() {
        assert!(membership_equivalence_check(1e18, &[0.0], f64::INFINITY).unwrap());
    }

    #[test]
    fn tail_mass_equivalence_examples() {
        // Two-point case by hand: both quantiles are 1, so membership of the
        // last value (2) is false on both sides — agreement, value false.
        assert!(!quantile_tail_mass_equivalence(&[1.0, 2.0], &[0.5, 0.5], 0.5).unwrap());
        // Last value below both quantiles: agreement, value true.
        assert!(quantile_tail_mass_equivalence(&[2.0, 1.0], &[0.5, 0.5], 0.5).unwrap());
        // Zero mass on the last atom: trivially equivalent.
        let ok = quantile_tail_mass_equivalence(&[3.0, 1.0, 2.0], &[0.6, 0.4, 0.0], 0.7);
        assert!(ok.is_ok());
    }

    #[test]
    fn tail_mass_equivalence_random_instances() {
        let mut rng = Seed::from_u64(8).rng();
        for i in 0..1000 {
            let n = rng.gen_range(1..=20usize);
            let values: Vec<f64> = (0..=n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut masses: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.0..1.0)).collect();
            if i % 11 == 0 {
                masses[n] = 0.0;
            }
            let masses = normalize_weights(&masses)
                .unwrap_or_else(|_| vec![1.0 / (n as f64 + 1.0); n + 1]);
            let beta = match i % 13 {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..1.0),
            };
            quantile_tail_mass_equivalence(&values, &masses, beta).unwrap();
        }
    }

    #[test]
    fn local_weights_sentinel_is_all_ones() {
        let cal = Array2::zeros((5, 3));
        let mut rng = Seed::from_u64(9).rng();
        let w = local_weights(cal.view(), &[0.0, 0.0, 0.0], Bandwidth::NoLocalization, &mut rng)
            .unwrap();
        assert_eq!(w, vec![1.0; 6]);
        // No draw consumed: the stream matches a fresh one.
        let mut fresh = Seed::from_u64(9).rng();
        assert_eq!(rng.gen::<u64>(), fresh.gen::<u64>());
    }

    #[test]
    fn local_weights_kernel_ratio() {
        // Two calibration points at distances r and 2r from the surrogate:
        // weight ratio must be exp(3r²/2h²).
        let (r, h) = (0.7, 0.9);
        let cal = Array2::from_shape_vec((2, 1), vec![r, 2.0 * r]).unwrap();
        let w = local_weights_at(cal.view(), &[0.0], h, &[0.0]).unwrap();
        let expected = (3.0 * r * r / (2.0 * h * h)).exp();
        assert!(((w[0] / w[1]) - expected).abs() / expected < 1e-12);
        // The point at the surrogate itself attains the kernel mode.
        assert_eq!(w[2], 1.0);
        assert!(w[2] >= w[0] && w[2] >= w[1]);
    }

    #[test]
    fn local_weights_rejects_bad_bandwidth() {
        let cal = Array2::zeros((2, 2));
        let mut rng = Seed::from_u64(10).rng();
        assert!(local_weights(cal.view(), &[0.0, 0.0], Bandwidth::Fixed(0.0), &mut rng).is_err());
        assert!(local_weights(cal.view(), &[0.0, 0.0], Bandwidth::Fixed(-1.0), &mut rng).is_err());
    }

    #[test]
    fn assemble_weighted_set() {
        let records = vec![
            CalibrationRecord::new(vec![0.0], 0.5, 2.0).unwrap(),
            CalibrationRecord::new(vec![1.0], 1.5, 2.0).unwrap(),
        ];
        let set = WeightedScoreSet::assemble(&records, &[1.0, 1.0, 1.0], 4.0).unwrap();
        assert_eq!(set.masses, vec![0.25, 0.25]);
        assert_eq!(set.test_mass, 0.5);
        let s: f64 = set.masses.iter().sum::<f64>() + set.test_mass;
        assert!((s - 1.0).abs() < 1e-12);
    }
}
