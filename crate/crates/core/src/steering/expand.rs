use serde::{Deserialize, Serialize};

use super::network::{model_for, network_time, Link, ModelMap, NetworkSpec};
use crate::error::{Error, Result};
use crate::layer::{derive_explanatory, derive_features, StructureConfig};
use crate::timetree::{Condition, ConditionKind, TimeModel};

/// Upper limit on repeated root-to-leaf walks in [`expand_layer`].
const MAX_WALKS: usize = 32;

/// Comparison used to accept a rounding at a Multiple node: the true-branch
/// law at the rounded configuration must not exceed the false-branch law at
/// the current configuration.
pub const ACCEPT_RULE: &str = "expanded_not_slower";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Rounding up is predicted to be slower.
    Slower,
    /// The rounded configuration would leave the path taken so far.
    LeavesPath,
    /// The rounded value exceeds twice the current value.
    Cap,
    /// The condition constrains a coordinate that cannot be widened.
    NotWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub node_id: usize,
    pub condition: Condition,
    pub feature: String,
    pub from: u32,
    pub to: u32,
    /// True-branch time at the rounded configuration.
    pub time_true: Option<f64>,
    /// False-branch time at the current configuration.
    pub time_false: Option<f64>,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
}

/// What [`expand_layer`] did to one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub original: StructureConfig,
    pub expanded: StructureConfig,
    pub time_before: f64,
    pub time_after: f64,
    pub rule: String,
    /// Every rounding considered at a Multiple node, in walk order.
    pub decisions: Vec<Decision>,
    /// A walk proposed a configuration the full model did not predict to be
    /// faster, so it was discarded.
    pub guard_fired: bool,
}

impl LayerTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &Decision> {
        self.decisions.iter().filter(|d| d.accepted)
    }
}

fn feature_value(config: &StructureConfig, feature: usize) -> Result<f64> {
    Ok(derive_features(config)?.values[feature])
}

/// One root-to-leaf walk, rounding width coordinates up at Multiple nodes
/// when the child laws say the rounded layer is no slower.
fn walk(model: &TimeModel, start: &StructureConfig, decisions: &mut Vec<Decision>) -> Result<StructureConfig> {
    let mut current = *start;
    let mut path: Vec<(Condition, bool)> = Vec::new();
    let mut id = 0;
    loop {
        let node = model.node(id);
        let Some(cond) = node.condition else { break };
        let (left, right) = (node.left.expect("split node"), node.right.expect("split node"));
        let f = derive_features(&current)?;
        let holds = cond.holds(&f.values);
        if holds || cond.kind == ConditionKind::Range {
            path.push((cond, holds));
            id = if holds { left } else { right };
            continue;
        }
        let feature = model.kind.feature_names()[cond.feature].to_string();
        let value = f.values[cond.feature];
        let tau = cond.tau;
        let target = (value / tau).ceil() * tau;
        let mut decision = Decision {
            node_id: id,
            condition: cond,
            feature,
            from: value as u32,
            to: target as u32,
            time_true: None,
            time_false: None,
            accepted: false,
            reason: None,
        };
        let candidate = if !model.kind.is_width_feature(cond.feature) {
            decision.reason = Some(RejectReason::NotWidth);
            None
        } else if target > 2.0 * value {
            decision.reason = Some(RejectReason::Cap);
            None
        } else {
            current.with_width_feature(cond.feature, target as u32)
        };
        if let Some(cand) = candidate {
            let x_hat = derive_explanatory(&cand)?.to_vec();
            let x = derive_explanatory(&current)?.to_vec();
            let time_true = model.node(left).fit.eval(&x_hat);
            let time_false = model.node(right).fit.eval(&x);
            decision.time_true = Some(time_true);
            decision.time_false = Some(time_false);
            let f_hat = derive_features(&cand)?;
            if time_true > time_false {
                decision.reason = Some(RejectReason::Slower);
            } else if path.iter().any(|(c, side)| c.holds(&f_hat.values) != *side) {
                decision.reason = Some(RejectReason::LeavesPath);
            } else {
                decision.accepted = true;
                current = cand;
            }
        }
        let accepted = decision.accepted;
        decisions.push(decision);
        path.push((cond, accepted));
        id = if accepted { left } else { right };
    }
    Ok(current)
}

/// Rounds a layer's widths up to nearby execution-time local minima.
///
/// Walks are repeated from the result of the previous walk until nothing
/// changes; a walk is kept only if the full model predicts it strictly
/// faster, so the result is never slower, never narrower, and a fixed point.
pub fn expand_layer(model: &TimeModel, config: &StructureConfig) -> Result<(StructureConfig, LayerTrace)> {
    if config.kind() != model.kind {
        return Err(Error::KindMismatch { expected: model.kind, found: config.kind() });
    }
    let time_before = model.predict(config)?;
    let mut trace = LayerTrace {
        original: *config,
        expanded: *config,
        time_before,
        time_after: time_before,
        rule: ACCEPT_RULE.to_string(),
        decisions: Vec::new(),
        guard_fired: false,
    };
    for _ in 0..MAX_WALKS {
        let mut decisions = Vec::new();
        let proposal = walk(model, &trace.expanded, &mut decisions)?;
        trace.decisions.extend(decisions);
        if proposal == trace.expanded {
            break;
        }
        let t = model.predict(&proposal)?;
        if t < trace.time_after {
            trace.expanded = proposal;
            trace.time_after = t;
        } else {
            trace.guard_fired = true;
            break;
        }
    }
    Ok((trace.expanded, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictResolution {
    pub link: Link,
    /// Candidate shared widths with the pair's combined predicted time.
    pub candidates: Vec<(u32, f64)>,
    pub chosen: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTrace {
    pub layers: Vec<LayerTrace>,
    pub conflicts: Vec<ConflictResolution>,
    pub time_before: f64,
    pub time_after: f64,
    /// The resolved network was predicted slower than the input, which was
    /// returned instead.
    pub guard_fired: bool,
}

/// Expands every layer, then settles disagreements on shared widths link by
/// link, keeping whichever candidate width gives the pair the lower total
/// predicted time.
pub fn expand_network(models: &ModelMap, net: &NetworkSpec) -> Result<(NetworkSpec, NetworkTrace)> {
    net.validate()?;
    let time_before = network_time(models, net)?;
    let mut layers = Vec::with_capacity(net.len());
    let mut traces = Vec::with_capacity(net.len());
    for layer in &net.layers {
        let (expanded, trace) = expand_layer(model_for(models, layer.kind())?, layer)?;
        layers.push(expanded);
        traces.push(trace);
    }
    let mut conflicts = Vec::new();
    let mut links = net.links.clone();
    links.sort();
    for link in links {
        let (a, b) = (layers[link.from], layers[link.to]);
        if a.out_width() == b.in_width() {
            continue;
        }
        let mut widths = vec![a.out_width(), b.in_width(), net.layers[link.from].out_width()];
        widths.sort_unstable();
        widths.dedup();
        let (ma, mb) = (model_for(models, a.kind())?, model_for(models, b.kind())?);
        let mut candidates = Vec::with_capacity(widths.len());
        for w in widths {
            let t = ma.predict(&a.with_out_width(w))? + mb.predict(&b.with_in_width(w))?;
            candidates.push((w, t));
        }
        // ascending widths, so the first minimum is the narrowest
        let &(chosen, _) = candidates
            .iter()
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("at least one candidate");
        layers[link.from] = a.with_out_width(chosen);
        layers[link.to] = b.with_in_width(chosen);
        conflicts.push(ConflictResolution { link, candidates, chosen });
    }
    let resolved = NetworkSpec { layers, links: net.links.clone() };
    resolved.validate()?;
    let time_after = network_time(models, &resolved)?;
    let mut trace = NetworkTrace { layers: traces, conflicts, time_before, time_after, guard_fired: false };
    if time_after > time_before {
        trace.guard_fired = true;
        trace.time_after = time_before;
        return Ok((net.clone(), trace));
    }
    Ok((resolved, trace))
}

/// Irreducible per-step cost of the recurrent layers in `net` that match the
/// model's kind: `step × step coefficient`, with the coefficient taken from
/// the leaf a one-unit layer of the same step count reaches.
pub fn rnn_time_floor(model: &TimeModel, net: &NetworkSpec) -> Result<f64> {
    if !model.kind.is_recurrent() {
        return Err(Error::invalid(format!("time floor needs a GRU or LSTM model, got {}", model.kind)));
    }
    let step_index = model.kind.explanatory_len() - 1;
    let mut total = 0.0;
    for layer in net.layers.iter().filter(|l| l.kind() == model.kind) {
        let minimal = layer.with_in_width(1).with_out_width(1);
        let features = derive_features(&minimal)?;
        let leaf = model.node(model.leaf_for(&features.values));
        let step = feature_value(&minimal, model.kind.feature_index("step").expect("recurrent kinds have step"))?;
        total += step * leaf.fit.w[step_index];
    }
    Ok(total)
}
