use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{LayerKind, StructureConfig};
use crate::timetree::TimeModel;

/// One time model per layer kind.
pub type ModelMap = BTreeMap<LayerKind, TimeModel>;

pub fn model_for(models: &ModelMap, kind: LayerKind) -> Result<&TimeModel> {
    models.get(&kind).ok_or(Error::MissingModel(kind))
}

/// Layer `to` consumes the width produced by layer `from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: usize,
    pub to: usize,
}

/// An ordered stack of layers plus the width-sharing links between
/// consecutive layers.
///
/// On disk: `{"layers": [config, ...], "links": [{"from": 0, "to": 1}, ...]}`.
/// When `links` is omitted, consecutive CNN→CNN pairs and consecutive
/// pairs of dense/recurrent layers are linked.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct NetworkSpec {
    pub layers: Vec<StructureConfig>,
    pub links: Vec<Link>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    layers: Vec<StructureConfig>,
    links: Option<Vec<Link>>,
}

impl<'de> Deserialize<'de> for NetworkSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = NetworkFile::deserialize(d)?;
        Ok(match file.links {
            Some(links) => NetworkSpec { layers: file.layers, links },
            None => NetworkSpec::chained(file.layers),
        })
    }
}

fn linkable(a: &StructureConfig, b: &StructureConfig) -> bool {
    (a.kind() == LayerKind::Cnn) == (b.kind() == LayerKind::Cnn)
}

impl NetworkSpec {
    pub fn empty() -> Self {
        NetworkSpec { layers: Vec::new(), links: Vec::new() }
    }

    /// Links every consecutive pair that can share a width.
    pub fn chained(layers: Vec<StructureConfig>) -> Self {
        let links = (1..layers.len())
            .filter(|&i| linkable(&layers[i - 1], &layers[i]))
            .map(|i| Link { from: i - 1, to: i })
            .collect();
        NetworkSpec { layers, links }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|e| Error::InvalidConfig(format!("layer {i}: {e}")))?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for link in &self.links {
            if link.to != link.from + 1 || link.to >= self.layers.len() {
                return Err(Error::InvalidConfig(format!(
                    "link {}→{} must join consecutive layers",
                    link.from, link.to
                )));
            }
            if !seen.insert(*link) {
                return Err(Error::InvalidConfig(format!("duplicate link {}→{}", link.from, link.to)));
            }
            let (a, b) = (&self.layers[link.from], &self.layers[link.to]);
            if !linkable(a, b) {
                return Err(Error::InvalidConfig(format!(
                    "link {}→{} joins {} and {}",
                    link.from,
                    link.to,
                    a.kind(),
                    b.kind()
                )));
            }
            if a.out_width() != b.in_width() {
                return Err(Error::InvalidConfig(format!(
                    "layer {} produces width {} but layer {} consumes {}",
                    link.from,
                    a.out_width(),
                    link.to,
                    b.in_width()
                )));
            }
        }
        Ok(())
    }

    /// Output widths of every layer.
    pub fn out_widths(&self) -> Vec<u32> {
        self.layers.iter().map(StructureConfig::out_width).collect()
    }

    /// Sets every layer's output width and propagates it along the links.
    pub fn with_out_widths(&self, widths: &[u32]) -> Result<Self> {
        if widths.len() != self.layers.len() {
            return Err(Error::invalid(format!("expected {} widths, got {}", self.layers.len(), widths.len())));
        }
        let mut layers: Vec<StructureConfig> =
            self.layers.iter().zip(widths).map(|(l, &w)| l.with_out_width(w)).collect();
        for link in &self.links {
            layers[link.to] = layers[link.to].with_in_width(widths[link.from]);
        }
        let net = NetworkSpec { layers, links: self.links.clone() };
        net.validate()?;
        Ok(net)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let net: NetworkSpec = serde_json::from_slice(bytes)?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("networks serialize");
        bytes.push(b'\n');
        bytes
    }
}

/// Sum of predicted layer times in milliseconds.
pub fn network_time(models: &ModelMap, net: &NetworkSpec) -> Result<f64> {
    net.layers.iter().map(|l| model_for(models, l.kind())?.predict(l)).sum()
}
