//! Versioned JSON encoding of [`TimeModel`].
//!
//! ```text
//! { "format_version": "1.1", "layer_kind": "CNN", "fit_params": {...},
//!   "nodes": [ { "id": 0, "cond": {"feature": 4, "tau": 4.0, "kind": "Multiple"},
//!                "w": [...], "b": 8.11, "n": 1000, "mape": 0.12, "mse": 3.4,
//!                "left": 1, "right": 2 }, ... ],
//!   "snap_rules": [] }
//! ```
//!
//! `snap_rules` arrived in 1.1; 1.0 documents load with none.

use serde::{Deserialize, Serialize};

use super::nnls::LinearFit;
use super::split::Condition;
use super::tree::{FitParams, Node, SnapRule, TimeModel};
use crate::error::{Error, Result};
use crate::layer::LayerKind;

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: usize,
    pub cond: Option<Condition>,
    pub w: Vec<f64>,
    pub b: f64,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub mape: f64,
    #[serde(default)]
    pub mse: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: String,
    pub layer_kind: LayerKind,
    #[serde(default)]
    pub fit_params: FitParams,
    pub nodes: Vec<NodeDocument>,
    #[serde(default)]
    pub snap_rules: Vec<SnapRule>,
}

pub fn format_version() -> String {
    format!("{FORMAT_MAJOR}.{FORMAT_MINOR}")
}

pub(crate) fn check_version(found: &str) -> Result<()> {
    let unsupported = || Error::Version { found: found.to_string(), supported: format!("{FORMAT_MAJOR}.x") };
    let (major, minor) = found.split_once('.').ok_or_else(unsupported)?;
    let major: u32 = major.parse().map_err(|_| unsupported())?;
    let _minor: u32 = minor.parse().map_err(|_| unsupported())?;
    if major != FORMAT_MAJOR {
        return Err(unsupported());
    }
    Ok(())
}

impl From<&TimeModel> for ModelDocument {
    fn from(model: &TimeModel) -> Self {
        ModelDocument {
            format_version: format_version(),
            layer_kind: model.kind,
            fit_params: model.fit_params.clone(),
            nodes: model
                .nodes
                .iter()
                .map(|n| NodeDocument {
                    id: n.id,
                    cond: n.condition,
                    w: n.fit.w.clone(),
                    b: n.fit.b,
                    n: n.fit.n,
                    mape: n.fit.mape,
                    mse: n.fit.mse,
                    left: n.left,
                    right: n.right,
                })
                .collect(),
            snap_rules: model.snap_rules.clone(),
        }
    }
}

impl TryFrom<ModelDocument> for TimeModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        check_version(&doc.format_version)?;
        let mut nodes: Vec<Node> = doc
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                condition: n.cond,
                fit: LinearFit { w: n.w, b: n.b, n: n.n, mape: n.mape, mse: n.mse },
                left: n.left,
                right: n.right,
                depth: 0,
            })
            .collect();
        let model_kind = doc.layer_kind;
        // children always follow their parent, so one forward pass sets depths
        for i in 0..nodes.len() {
            let depth = nodes[i].depth;
            for child in [nodes[i].left, nodes[i].right].into_iter().flatten() {
                if let Some(c) = nodes.get_mut(child) {
                    c.depth = depth + 1;
                }
            }
        }
        let model = TimeModel { kind: model_kind, nodes, fit_params: doc.fit_params, snap_rules: doc.snap_rules };
        model.validate()?;
        for node in &model.nodes {
            if let (Some(l), Some(r)) = (node.left, node.right) {
                let (nl, nr) = (model.nodes[l].fit.n, model.nodes[r].fit.n);
                if node.fit.n != nl + nr {
                    return Err(Error::MalformedModel(format!(
                        "node {}: {} samples but children hold {nl} + {nr}",
                        node.id, node.fit.n
                    )));
                }
            }
        }
        for rule in &model.snap_rules {
            if model.kind != LayerKind::Cnn || !model.kind.is_width_feature(rule.feature) || rule.tau < 2 {
                return Err(Error::MalformedModel(format!("invalid snap rule on feature {}", rule.feature)));
            }
        }
        Ok(model)
    }
}

pub fn save_model(model: &TimeModel) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&ModelDocument::from(model)).expect("model documents always serialize");
    bytes.push(b'\n');
    bytes
}

pub fn load_model(bytes: &[u8]) -> Result<TimeModel> {
    let value: serde_json::Value = serde_json::from_slice(bytes)?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(v) => check_version(v)?,
        None => return Err(Error::MalformedModel("missing format_version".into())),
    }
    let doc: ModelDocument = serde_json::from_value(value)?;
    TimeModel::try_from(doc)
}
