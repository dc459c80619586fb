//! Breadth-first growth of the tree-structured linear model.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::nnls::{fit_rows, LinearFit};
use super::split::{enumerate_for, evaluate_split, Condition, ConditionKind, SplitEval};
use crate::error::{Error, Result};
use crate::layer::{derive_features, explanatory_from_features, ConvGeometry, LayerKind, StructureConfig};

/// Relative window within which two candidate impurities count as tied.
const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub mape_stop: f64,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub multiple_taus: Vec<u32>,
    pub range_quantiles: usize,
    pub noise_seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            mape_stop: 0.05,
            min_leaf: 15,
            max_depth: 12,
            multiple_taus: vec![2, 3, 4, 6, 8, 16, 32, 64, 128],
            range_quantiles: 16,
            noise_seed: 0,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<()> {
        if self.mape_stop.is_nan() || self.mape_stop <= 0.0 {
            return Err(Error::invalid("mape_stop must be > 0"));
        }
        if self.min_leaf < 2 {
            return Err(Error::invalid("min_leaf must be >= 2"));
        }
        if self.multiple_taus.iter().any(|&t| t < 2) {
            return Err(Error::invalid("multiple taus must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    /// Split predicate; `None` on leaves. The left child holds the records
    /// for which it is true.
    pub condition: Option<Condition>,
    pub fit: LinearFit,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub depth: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.condition.is_none()
    }
}

/// Snap-up rule of a simplified model: inside `[1, bound]²` (in/out
/// channels) of convolutions with `geometry`, round `feature` up to a
/// multiple of `tau` before routing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapRule {
    pub feature: usize,
    pub tau: u32,
    pub geometry: ConvGeometry,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeModel {
    pub kind: LayerKind,
    pub nodes: Vec<Node>,
    pub fit_params: FitParams,
    pub snap_rules: Vec<SnapRule>,
}

impl TimeModel {
    /// A model with a single leaf law.
    pub fn single_leaf(kind: LayerKind, w: Vec<f64>, b: f64) -> Self {
        TimeModel {
            kind,
            nodes: vec![Node {
                id: 0,
                condition: None,
                fit: LinearFit { w, b, n: 0, mape: 0.0, mse: 0.0 },
                left: None,
                right: None,
                depth: 0,
            }],
            fit_params: FitParams::default(),
            snap_rules: Vec::new(),
        }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Replaces node `id` (a leaf) with a split into two new leaves.
    /// Returns the ids of the new (left, right) children.
    pub fn split_leaf(&mut self, id: usize, condition: Condition, left: LinearFit, right: LinearFit) -> Result<(usize, usize)> {
        condition.validate(self.kind.feature_names().len())?;
        if !self.nodes[id].is_leaf() {
            return Err(Error::invalid(format!("node {id} is already split")));
        }
        if left.w.len() != self.kind.explanatory_len() || right.w.len() != self.kind.explanatory_len() {
            return Err(Error::invalid("leaf law has the wrong number of coefficients"));
        }
        let depth = self.nodes[id].depth + 1;
        let (l, r) = (self.nodes.len(), self.nodes.len() + 1);
        self.nodes.push(Node { id: l, condition: None, fit: left, left: None, right: None, depth });
        self.nodes.push(Node { id: r, condition: None, fit: right, left: None, right: None, depth });
        let node = &mut self.nodes[id];
        node.condition = Some(condition);
        node.left = Some(l);
        node.right = Some(r);
        Ok((l, r))
    }

    /// Leaf reached by a feature vector.
    pub fn leaf_for(&self, features: &[f64]) -> usize {
        self.path_for(features).last().copied().unwrap_or(0)
    }

    /// Node ids from root to leaf.
    pub fn path_for(&self, features: &[f64]) -> Vec<usize> {
        let mut id = 0;
        let mut path = vec![0];
        while let Some(cond) = &self.nodes[id].condition {
            let next = if cond.holds(features) { self.nodes[id].left } else { self.nodes[id].right };
            id = next.expect("internal nodes have two children");
            path.push(id);
        }
        path
    }

    fn check_kind(&self, config: &StructureConfig) -> Result<()> {
        if config.kind() != self.kind {
            return Err(Error::KindMismatch { expected: self.kind, found: config.kind() });
        }
        Ok(())
    }

    /// Prediction by the tree alone, ignoring snap rules.
    pub fn predict_raw(&self, config: &StructureConfig) -> Result<f64> {
        self.check_kind(config)?;
        let f = derive_features(config)?;
        let x = explanatory_from_features(config, &f);
        let leaf = self.leaf_for(&f.values);
        let t = self.nodes[leaf].fit.eval(&x.to_vec());
        if !t.is_finite() {
            return Err(Error::Numeric(format!("prediction overflowed for {config}")));
        }
        Ok(t)
    }

    /// Predicted execution time in milliseconds.
    pub fn predict(&self, config: &StructureConfig) -> Result<f64> {
        let base = self.predict_raw(config)?;
        if let Some(snapped) = self.snap(config) {
            let t = self.predict_raw(&snapped)?;
            if t <= base {
                return Ok(t);
            }
        }
        Ok(base)
    }

    /// Configuration after applying snap rules, if any rule applies.
    pub fn snap(&self, config: &StructureConfig) -> Option<StructureConfig> {
        let geometry = ConvGeometry::of(config)?;
        let mut rules: Vec<&SnapRule> = self.snap_rules.iter().filter(|r| r.geometry == geometry).collect();
        if rules.is_empty() {
            return None;
        }
        let bound = rules.iter().map(|r| r.bound).fold(f64::INFINITY, f64::min);
        if f64::from(config.in_width()) > bound || f64::from(config.out_width()) > bound {
            return None;
        }
        rules.sort_by_key(|r| r.tau);
        let mut out = *config;
        for rule in rules {
            let f = derive_features(&out).ok()?;
            let v = f.values[rule.feature] as u32;
            out = out.with_width_feature(rule.feature, v.div_ceil(rule.tau) * rule.tau)?;
        }
        (out != *config).then_some(out)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::MalformedModel("model has no nodes".into()));
        }
        let n_features = self.kind.feature_names().len();
        let n_x = self.kind.explanatory_len();
        let mut parent_count = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::MalformedModel(format!("node at position {i} has id {}", node.id)));
            }
            if node.fit.w.len() != n_x {
                return Err(Error::MalformedModel(format!("node {i}: expected {n_x} coefficients")));
            }
            if node.fit.w.iter().chain([&node.fit.b]).any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::MalformedModel(format!("node {i}: coefficients must be finite and >= 0")));
            }
            match (&node.condition, node.left, node.right) {
                (None, None, None) => {}
                (Some(c), Some(l), Some(r)) => {
                    c.validate(n_features)?;
                    for child in [l, r] {
                        if child <= i || child >= self.nodes.len() {
                            return Err(Error::MalformedModel(format!("node {i}: bad child {child}")));
                        }
                        parent_count[child] += 1;
                    }
                    if l == r {
                        return Err(Error::MalformedModel(format!("node {i}: children coincide")));
                    }
                }
                _ => return Err(Error::MalformedModel(format!("node {i}: needs a condition and two children, or none"))),
            }
        }
        if parent_count[0] != 0 || parent_count[1..].iter().any(|&c| c != 1) {
            return Err(Error::MalformedModel("nodes do not form a tree rooted at 0".into()));
        }
        Ok(())
    }
}

/// Fits the tree-structured non-negative linear model to `dataset`.
///
/// Nodes are grown breadth first. A node stays a leaf when its own fit has
/// in-sample MAPE below `mape_stop`, it holds fewer than `min_leaf` records,
/// it sits at `max_depth`, or no candidate condition survives enumeration.
/// Otherwise the minimum-impurity condition splits it. Ties prefer integer
/// multiple conditions, then the lower feature index, then the smaller tau.
pub fn fit_tree(dataset: &Dataset, params: &FitParams) -> Result<TimeModel> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let root_fit = fit_rows(&dataset.explanatory_rows(), &dataset.times())?;
    let mut model = TimeModel {
        kind: dataset.kind(),
        nodes: vec![Node { id: 0, condition: None, fit: root_fit, left: None, right: None, depth: 0 }],
        fit_params: params.clone(),
        snap_rules: Vec::new(),
    };

    let mut queue = VecDeque::from([(0usize, all)]);
    while let Some((id, indices)) = queue.pop_front() {
        let node = &model.nodes[id];
        if node.fit.mape < params.mape_stop || indices.len() < params.min_leaf || node.depth >= params.max_depth {
            continue;
        }
        let candidates = enumerate_for(dataset, &indices, params);
        if candidates.is_empty() {
            continue;
        }
        let evals: Vec<(Condition, SplitEval)> = candidates
            .par_iter()
            .map(|c| evaluate_split(dataset, &indices, c).map(|e| (*c, e)))
            .collect::<Result<_>>()?;
        let Some(best) = select_split(evals, node.fit.mse) else {
            continue;
        };
        let (condition, eval) = best;
        let (l, r) = model.split_leaf(id, condition, eval.left_fit, eval.right_fit)?;
        queue.push_back((l, eval.left));
        queue.push_back((r, eval.right));
    }
    Ok(model)
}

fn select_split(evals: Vec<(Condition, SplitEval)>, parent_mse: f64) -> Option<(Condition, SplitEval)> {
    let min = evals.iter().map(|(_, e)| e.impurity).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let window = TIE_REL * min.max(TIE_REL * parent_mse);
    let kind_rank = |c: &Condition| match c.kind {
        ConditionKind::Multiple => 0,
        ConditionKind::Range => 1,
    };
    evals
        .into_iter()
        .filter(|(_, e)| e.impurity <= min + window)
        .min_by(|(a, _), (b, _)| {
            kind_rank(a)
                .cmp(&kind_rank(b))
                .then(a.feature.cmp(&b.feature))
                .then(a.tau.total_cmp(&b.tau))
        })
}

/// Convenience: mean absolute percentage error of `model` on `dataset`.
pub fn dataset_mape(model: &TimeModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in dataset.samples() {
        let pred = model.predict(&s.config)?;
        total += ((pred - s.time_ms) / s.time_ms).abs();
    }
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Padding;

    #[test]
    fn exact_linear_data_gives_single_leaf() {
        let mut ds = Dataset::new(LayerKind::Fc);
        for i in 1..200u32 {
            let c = StructureConfig::fc(i * 7 % 300 + 1, i * 13 % 200 + 1);
            let x = crate::layer::derive_explanatory(&c).unwrap();
            ds.push(c, 3.0 * x.flops + 10.0).unwrap();
        }
        let model = fit_tree(&ds, &FitParams::default()).unwrap();
        assert_eq!(model.nodes.len(), 1);
        assert!(model.root().fit.mape < 1e-9);
    }

    #[test]
    fn fourteen_samples_stay_a_leaf() {
        let mut ds = Dataset::new(LayerKind::Fc);
        for i in 1..=14u32 {
            ds.push(StructureConfig::fc(i, 5), if i % 2 == 0 { 1.0 } else { 50.0 }).unwrap();
        }
        let model = fit_tree(&ds, &FitParams::default()).unwrap();
        assert_eq!(model.nodes.len(), 1);
    }

    #[test]
    fn empty_dataset_errors() {
        assert!(matches!(fit_tree(&Dataset::new(LayerKind::Cnn), &FitParams::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn predict_single_leaf_and_kind_mismatch() {
        let model = TimeModel::single_leaf(LayerKind::Fc, vec![2.0, 0.0, 0.0], 1.0);
        // FC(1,2): flops = 2*1*2 + 2 = 6 -> 13; FC(1,1): flops = 3 -> 7
        assert_eq!(model.predict(&StructureConfig::fc(1, 1)).unwrap(), 7.0);
        let err = model.predict(&StructureConfig::gru(1, 1, 1));
        assert!(matches!(err, Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn routing_on_multiple_condition() {
        let mut model = TimeModel::single_leaf(LayerKind::Cnn, vec![0.0; 3], 5.0);
        let leaf = |b| LinearFit { w: vec![0.0; 3], b, n: 0, mape: 0.0, mse: 0.0 };
        model.split_leaf(0, Condition::multiple(4, 4), leaf(1.0), leaf(2.0)).unwrap();
        let cfg = |ic| StructureConfig::cnn(24, 24, 3, 3, 1, Padding::Same, ic, 16);
        assert_eq!(model.predict(&cfg(8)).unwrap(), 1.0);
        assert_eq!(model.predict(&cfg(9)).unwrap(), 2.0);
        model.validate().unwrap();
    }
}
