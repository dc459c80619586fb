//! Split conditions, candidate enumeration and the weighted-MSE impurity.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::nnls::{fit_rows, LinearFit};
use super::tree::FitParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionKind {
    /// `f[j] <= tau`
    Range,
    /// `f[j] ≡ 0 (mod tau)`
    Multiple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub tau: f64,
    pub kind: ConditionKind,
}

impl Condition {
    pub fn range(feature: usize, tau: f64) -> Self {
        Condition { feature, tau, kind: ConditionKind::Range }
    }

    pub fn multiple(feature: usize, tau: u32) -> Self {
        Condition { feature, tau: f64::from(tau), kind: ConditionKind::Multiple }
    }

    pub fn holds(&self, features: &[f64]) -> bool {
        self.holds_value(features[self.feature])
    }

    pub fn holds_value(&self, v: f64) -> bool {
        match self.kind {
            ConditionKind::Range => v <= self.tau,
            ConditionKind::Multiple => v.fract() == 0.0 && v.rem_euclid(self.tau) == 0.0,
        }
    }

    pub(crate) fn validate(&self, n_features: usize) -> Result<()> {
        if self.feature >= n_features {
            return Err(Error::MalformedModel(format!("condition feature {} out of range", self.feature)));
        }
        if !self.tau.is_finite() {
            return Err(Error::MalformedModel("condition threshold is not finite".into()));
        }
        if self.kind == ConditionKind::Multiple && (self.tau < 2.0 || self.tau.fract() != 0.0) {
            return Err(Error::MalformedModel(format!("multiple condition needs integer tau >= 2, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Splits `dataset` into (records satisfying `cond`, the rest), order preserved.
pub fn partition(dataset: &Dataset, cond: &Condition) -> (Dataset, Dataset) {
    let (left, right) = partition_indices(dataset, (0..dataset.len()).collect(), cond);
    (dataset.subset(&left), dataset.subset(&right))
}

pub(crate) fn partition_indices(dataset: &Dataset, indices: Vec<usize>, cond: &Condition) -> (Vec<usize>, Vec<usize>) {
    indices.into_iter().partition(|&i| cond.holds(&dataset.samples()[i].features.values))
}

/// Candidate split conditions for a node holding `dataset`.
pub fn enumerate_conditions(dataset: &Dataset, params: &FitParams) -> Vec<Condition> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    enumerate_for(dataset, &all, params)
}

pub(crate) fn enumerate_for(dataset: &Dataset, indices: &[usize], params: &FitParams) -> Vec<Condition> {
    let n = indices.len();
    if n < 2 * params.min_leaf || n == 0 {
        return Vec::new();
    }
    let n_features = dataset.kind().feature_names().len();
    let samples = dataset.samples();
    let mut out = Vec::new();

    for j in 0..n_features {
        let mut column: Vec<f64> = indices.iter().map(|&i| samples[i].features.values[j]).collect();
        column.sort_by(f64::total_cmp);
        let (min, max) = (column[0], column[n - 1]);
        if min == max {
            continue;
        }

        let sides_ok = |left: usize| left >= params.min_leaf && n - left >= params.min_leaf;

        let q = params.range_quantiles;
        let mut taus: Vec<f64> = (1..=q)
            .map(|k| {
                let idx = (k * n).div_ceil(q + 1).saturating_sub(1);
                column[idx.min(n - 1)]
            })
            .filter(|&t| t < max)
            .collect();
        taus.dedup();
        for tau in taus {
            let left = column.partition_point(|&v| v <= tau);
            if sides_ok(left) {
                out.push(Condition::range(j, tau));
            }
        }

        if column.iter().all(|v| v.fract() == 0.0) {
            for &tau in &params.multiple_taus {
                if tau < 2 {
                    continue;
                }
                let cond = Condition::multiple(j, tau);
                let left = column.iter().filter(|v| cond.holds_value(**v)).count();
                if left > 0 && left < n && sides_ok(left) {
                    out.push(cond);
                }
            }
        }
    }
    out
}

pub(crate) struct SplitEval {
    pub impurity: f64,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub left_fit: LinearFit,
    pub right_fit: LinearFit,
}

pub(crate) fn evaluate_split(dataset: &Dataset, indices: &[usize], cond: &Condition) -> Result<SplitEval> {
    let (left, right) = partition_indices(dataset, indices.to_vec(), cond);
    if left.is_empty() || right.is_empty() {
        return Err(Error::invalid("condition leaves one side of the partition empty"));
    }
    let fit = |idx: &[usize]| {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| dataset.samples()[i].explanatory.to_vec()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| dataset.samples()[i].time_ms).collect();
        fit_rows(&rows, &y)
    };
    let left_fit = fit(&left)?;
    let right_fit = fit(&right)?;
    let impurity = weighted_impurity(left.len(), left_fit.mse, right.len(), right_fit.mse);
    Ok(SplitEval { impurity, left, right, left_fit, right_fit })
}

/// `|L|/|D|·H(L) + |R|/|D|·H(R)`.
pub fn weighted_impurity(n_left: usize, mse_left: f64, n_right: usize, mse_right: f64) -> f64 {
    let n = (n_left + n_right) as f64;
    n_left as f64 / n * mse_left + n_right as f64 / n * mse_right
}

/// Weighted mean of the two sides' NNLS mean squared errors.
pub fn impurity(dataset: &Dataset, cond: &Condition) -> Result<f64> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    evaluate_split(dataset, &all, cond).map(|e| e.impurity)
}
