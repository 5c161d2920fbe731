//! Monotonicity audits and accuracy metrics.
//!
//! An audit draws random base points, sweeps each constrained coordinate
//! across an ascending grid while holding the others fixed, and counts
//! adjacent prediction pairs that move against the declared direction. For
//! piecewise-constant models the grid should be augmented with points
//! straddling every split threshold ([`forest_threshold_augment`]);
//! otherwise a sweep can step over a violating sliver without sampling it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isotonic::check_finite;
use crate::shape::{Direction, ShapeSpec};
use crate::tree::ForestModel;

/// Tolerance below which an adverse step is attributed to rounding rather
/// than counted as a violation.
pub const VIOLATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub spec: ShapeSpec,
    /// Random base points to sweep from.
    pub probes: usize,
    /// Evenly spaced grid values per swept coordinate, before augmentation.
    pub grid_size: usize,
    pub seed: u64,
    /// Per-feature sampling box, indexed by feature.
    pub feature_ranges: Vec<(f64, f64)>,
    /// Extra grid values merged into the sweep of a constrained feature;
    /// values outside the feature's range are clipped to it.
    pub grid_augment: BTreeMap<usize, Vec<f64>>,
}

impl AuditConfig {
    fn validate(&self) -> Result<()> {
        if self.probes == 0 {
            return Err(Error::invalid_input("probes must be at least 1"));
        }
        if self.grid_size < 2 {
            return Err(Error::invalid_input("grid_size must be at least 2"));
        }
        self.spec.validate_dims(self.feature_ranges.len())?;
        for (f, &(lo, hi)) in self.feature_ranges.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::invalid_input(format!(
                    "range for feature {f} must be a finite interval with lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        for (&f, values) in &self.grid_augment {
            if self.spec.direction(f).is_none() {
                return Err(Error::invalid_input(format!(
                    "grid augmentation given for feature {f}, which is not constrained"
                )));
            }
            check_finite(values, "grid augmentation")?;
        }
        Ok(())
    }
}

/// One recorded violation: sweeping `variable` from `grid_from` to `grid_to`
/// with the other coordinates of `point` fixed moved the prediction by
/// `decrease` against the declared direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub variable: usize,
    pub grid_from: f64,
    pub grid_to: f64,
    pub decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    /// Adjacent pairs moving against their direction beyond
    /// [`VIOLATION_TOLERANCE`].
    pub violations: u64,
    /// Adjacent pairs examined.
    pub total_checks: u64,
    /// Largest adverse step observed, including ones within tolerance;
    /// 0 when every step respected its direction.
    pub worst_violation: f64,
    /// The first violations encountered, at most ten.
    pub witnesses: Vec<Witness>,
}

/// Sweep grid for one constrained feature: evenly spaced values plus
/// clipped augmentation points, ascending and deduplicated.
fn sweep_grid(lo: f64, hi: f64, grid_size: usize, augment: Option<&Vec<f64>>) -> Vec<f64> {
    let mut grid = Vec::with_capacity(grid_size + augment.map_or(0, |a| a.len()));
    for j in 0..grid_size {
        let x = if j == grid_size - 1 {
            hi
        } else {
            lo + (hi - lo) * j as f64 / (grid_size - 1) as f64
        };
        grid.push(x);
    }
    if let Some(values) = augment {
        grid.extend(values.iter().map(|v| v.clamp(lo, hi)));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Audits `predict` for monotonicity in every constrained variable.
///
/// Deterministic given the config. Checks are counted per adjacent grid
/// pair per probe.
///
/// # Errors
/// [`Error::InvalidInput`] for a malformed config; [`Error::InvalidModel`]
/// if a prediction is non-finite, naming the probed point.
pub fn audit_monotonicity<F>(predict: F, config: &AuditConfig) -> Result<AuditResult>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    let grids: Vec<(usize, Direction, Vec<f64>)> = config
        .spec
        .vars()
        .map(|(f, direction)| {
            let (lo, hi) = config.feature_ranges[f];
            let grid = sweep_grid(lo, hi, config.grid_size, config.grid_augment.get(&f));
            (f, direction, grid)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut result = AuditResult {
        violations: 0,
        total_checks: 0,
        worst_violation: 0.0,
        witnesses: Vec::new(),
    };
    for _ in 0..config.probes {
        let base: Vec<f64> = config
            .feature_ranges
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect();
        let mut x = base.clone();
        for (feature, direction, grid) in &grids {
            let mut prev: Option<(f64, f64)> = None;
            for &g in grid {
                x[*feature] = g;
                let y = predict(&x);
                if !y.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "prediction is not finite at {x:?} (feature {feature} swept): {y}"
                    )));
                }
                if let Some((pg, py)) = prev {
                    let adverse = match direction {
                        Direction::Increasing => py - y,
                        Direction::Decreasing => y - py,
                    };
                    result.total_checks += 1;
                    if adverse > result.worst_violation {
                        result.worst_violation = adverse;
                    }
                    if adverse > VIOLATION_TOLERANCE {
                        result.violations += 1;
                        if result.witnesses.len() < 10 {
                            result.witnesses.push(Witness {
                                point: base.clone(),
                                variable: *feature,
                                grid_from: pg,
                                grid_to: g,
                                decrease: adverse,
                            });
                        }
                    }
                }
                prev = Some((g, y));
            }
            x[*feature] = base[*feature];
        }
    }
    Ok(result)
}

/// Grid augmentation that brackets every split threshold of the model's
/// constrained features with a point just below and just above it, so that
/// audit sweeps sample both sides of each decision boundary.
pub fn forest_threshold_augment(
    model: &ForestModel,
    spec: &ShapeSpec,
) -> BTreeMap<usize, Vec<f64>> {
    let mut augment = BTreeMap::new();
    for (feature, _) in spec.vars() {
        let mut values = Vec::new();
        for t in model.thresholds_for(feature) {
            let off = t.abs().max(1.0) * 2f64.powi(-40);
            values.push(t - off);
            values.push(t + off);
        }
        augment.insert(feature, values);
    }
    augment
}

fn paired(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::invalid_input(format!(
            "prediction and truth lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid_input("no values to score"));
    }
    check_finite(pred, "predictions")?;
    check_finite(truth, "truth")
}

/// Mean squared error.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    paired(pred, truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Mean absolute percent error as a fraction: mean of |pred - truth| / truth.
///
/// # Errors
/// [`Error::InvalidInput`] if any truth entry is zero, naming its row.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    paired(pred, truth)?;
    let mut total = 0.0;
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if *t == 0.0 {
            return Err(Error::invalid_input(format!(
                "truth value at row {} is zero; percent error is undefined",
                i + 1
            )));
        }
        total += (p - t).abs() / t;
    }
    Ok(total / pred.len() as f64)
}

/// Fraction of rows where prediction and label land on the same side of
/// `threshold` (at or above versus below).
pub fn accuracy(pred: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    paired(pred, labels)?;
    if !threshold.is_finite() {
        return Err(Error::invalid_input(format!(
            "threshold is not finite: {threshold}"
        )));
    }
    let correct = pred
        .iter()
        .zip(labels)
        .filter(|(p, l)| (**p >= threshold) == (**l >= threshold))
        .count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Splits `0..n` into `k` disjoint folds of sizes differing by at most one,
/// deterministically for a given seed. Fold contents are ascending.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::invalid_input("fold count must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid_input(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Cross-validation aggregate: the per-fold metric values with their mean,
/// sample standard deviation, and standard error (sd divided by the square
/// root of the fold count). Both spreads are reported since conventions for
/// fold aggregation vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold_values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

pub fn fold_summary(fold_values: &[f64]) -> Result<FoldSummary> {
    if fold_values.len() < 2 {
        return Err(Error::invalid_input(
            "fold summary needs at least two folds",
        ));
    }
    check_finite(fold_values, "fold values")?;
    let k = fold_values.len() as f64;
    let mean = fold_values.iter().sum::<f64>() / k;
    let ss: f64 = fold_values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (k - 1.0)).sqrt();
    Ok(FoldSummary {
        fold_values: fold_values.to_vec(),
        mean,
        sd,
        se: sd / k.sqrt(),
    })
}
