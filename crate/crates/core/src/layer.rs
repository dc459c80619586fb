//! Layer structure configurations and the quantities derived from them.
//!
//! Every layer is described by a [`StructureConfig`]. Two vectors are derived
//! from it: the [`FeatureVector`], whose coordinates are the candidates for
//! tree split conditions, and the [`ExplanatoryVector`], which the per-node
//! linear laws regress time on. Memory quantities are element counts, not
//! bytes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "FC")]
    Fc,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "LSTM")]
    Lstm,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [LayerKind::Fc, LayerKind::Cnn, LayerKind::Gru, LayerKind::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Fc => "FC",
            LayerKind::Cnn => "CNN",
            LayerKind::Gru => "GRU",
            LayerKind::Lstm => "LSTM",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, LayerKind::Gru | LayerKind::Lstm)
    }

    /// Canonical condition-search feature order: structural fields first,
    /// then `mem_in`, `mem_out`, `mem_inter`, `param_size`.
    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            LayerKind::Fc => &["in_dim", "out_dim", "mem_in", "mem_out", "mem_inter", "param_size"],
            LayerKind::Cnn => &[
                "in_height",
                "in_width",
                "kernel_height",
                "kernel_width",
                "in_channel",
                "out_channel",
                "padding",
                "stride",
                "mem_in",
                "mem_out",
                "mem_inter",
                "param_size",
            ],
            LayerKind::Gru | LayerKind::Lstm => &[
                "in_dim",
                "out_dim",
                "step",
                "mem_in",
                "mem_out",
                "mem_inter",
                "param_size",
            ],
        }
    }

    pub fn feature_index(self, name: &str) -> Option<usize> {
        self.feature_names().iter().position(|n| *n == name)
    }

    pub fn explanatory_names(self) -> &'static [&'static str] {
        if self.is_recurrent() {
            &["flops", "mem", "param_size", "step"]
        } else {
            &["flops", "mem", "param_size"]
        }
    }

    pub fn explanatory_len(self) -> usize {
        self.explanatory_names().len()
    }

    /// Number of leading structural entries in the feature vector.
    pub fn structural_len(self) -> usize {
        self.feature_names().len() - 4
    }

    /// Features that name a layer width (channels or hidden units). Only these
    /// can be grown by zero padding without changing what the layer computes.
    pub fn is_width_feature(self, index: usize) -> bool {
        matches!(
            self.feature_names().get(index),
            Some(&"in_dim") | Some(&"out_dim") | Some(&"in_channel") | Some(&"out_channel")
        )
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FC" => Ok(LayerKind::Fc),
            "CNN" => Ok(LayerKind::Cnn),
            "GRU" => Ok(LayerKind::Gru),
            "LSTM" => Ok(LayerKind::Lstm),
            other => Err(Error::invalid(format!("unknown layer kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    /// Split-feature encoding: valid = 0, same = 1.
    pub fn code(self) -> f64 {
        match self {
            Padding::Valid => 0.0,
            Padding::Same => 1.0,
        }
    }
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Padding::Valid),
            "same" => Ok(Padding::Same),
            other => Err(Error::invalid(format!("unknown padding `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseConfig {
    pub in_dim: u32,
    pub out_dim: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub in_height: u32,
    pub in_width: u32,
    pub kernel_height: u32,
    pub kernel_width: u32,
    pub in_channel: u32,
    pub out_channel: u32,
    pub stride: u32,
    pub padding: Padding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrentConfig {
    pub in_dim: u32,
    pub out_dim: u32,
    pub step: u32,
}

/// One layer's structural hyperparameters.
///
/// The canonical text encoding is a flat JSON object holding `kind` plus only
/// the fields legal for that kind; anything else is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StructureConfig {
    #[serde(rename = "FC")]
    Fc(DenseConfig),
    #[serde(rename = "CNN")]
    Cnn(ConvConfig),
    #[serde(rename = "GRU")]
    Gru(RecurrentConfig),
    #[serde(rename = "LSTM")]
    Lstm(RecurrentConfig),
}

/// Output spatial extent of a 2-D convolution.
///
/// `same` gives `ceil(in / stride)`; `valid` gives `floor((in - k) / stride) + 1`.
pub fn conv_output_dims(
    in_h: u32,
    in_w: u32,
    k_h: u32,
    k_w: u32,
    stride: u32,
    padding: Padding,
) -> Result<(u32, u32)> {
    if in_h == 0 || in_w == 0 || k_h == 0 || k_w == 0 || stride == 0 {
        return Err(Error::InvalidConfig("convolution extents must be >= 1".into()));
    }
    match padding {
        Padding::Same => Ok((in_h.div_ceil(stride), in_w.div_ceil(stride))),
        Padding::Valid => {
            if k_h > in_h || k_w > in_w {
                return Err(Error::InvalidConfig(format!(
                    "valid padding needs kernel {k_h}x{k_w} <= input {in_h}x{in_w}"
                )));
            }
            Ok(((in_h - k_h) / stride + 1, (in_w - k_w) / stride + 1))
        }
    }
}

impl StructureConfig {
    pub fn fc(in_dim: u32, out_dim: u32) -> Self {
        StructureConfig::Fc(DenseConfig { in_dim, out_dim })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn cnn(
        in_height: u32,
        in_width: u32,
        kernel_height: u32,
        kernel_width: u32,
        stride: u32,
        padding: Padding,
        in_channel: u32,
        out_channel: u32,
    ) -> Self {
        StructureConfig::Cnn(ConvConfig {
            in_height,
            in_width,
            kernel_height,
            kernel_width,
            in_channel,
            out_channel,
            stride,
            padding,
        })
    }

    pub fn gru(in_dim: u32, out_dim: u32, step: u32) -> Self {
        StructureConfig::Gru(RecurrentConfig { in_dim, out_dim, step })
    }

    pub fn lstm(in_dim: u32, out_dim: u32, step: u32) -> Self {
        StructureConfig::Lstm(RecurrentConfig { in_dim, out_dim, step })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            StructureConfig::Fc(_) => LayerKind::Fc,
            StructureConfig::Cnn(_) => LayerKind::Cnn,
            StructureConfig::Gru(_) => LayerKind::Gru,
            StructureConfig::Lstm(_) => LayerKind::Lstm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: u32| {
            if v == 0 {
                Err(Error::InvalidConfig(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        match self {
            StructureConfig::Fc(c) => {
                positive("in_dim", c.in_dim)?;
                positive("out_dim", c.out_dim)
            }
            StructureConfig::Cnn(c) => {
                positive("in_channel", c.in_channel)?;
                positive("out_channel", c.out_channel)?;
                if c.stride != 1 && c.stride != 2 {
                    return Err(Error::InvalidConfig(format!("stride must be 1 or 2, got {}", c.stride)));
                }
                conv_output_dims(
                    c.in_height,
                    c.in_width,
                    c.kernel_height,
                    c.kernel_width,
                    c.stride,
                    c.padding,
                )
                .map(|_| ())
            }
            StructureConfig::Gru(c) | StructureConfig::Lstm(c) => {
                positive("in_dim", c.in_dim)?;
                positive("out_dim", c.out_dim)?;
                positive("step", c.step)
            }
        }
    }

    /// Parses the per-kind field object used inside profile records.
    pub fn from_fields(kind: LayerKind, fields: serde_json::Value) -> Result<Self> {
        let config = match kind {
            LayerKind::Fc => StructureConfig::Fc(serde_json::from_value(fields)?),
            LayerKind::Cnn => StructureConfig::Cnn(serde_json::from_value(fields)?),
            LayerKind::Gru => StructureConfig::Gru(serde_json::from_value(fields)?),
            LayerKind::Lstm => StructureConfig::Lstm(serde_json::from_value(fields)?),
        };
        config.validate()?;
        Ok(config)
    }

    /// Field object without the `kind` tag.
    pub fn fields(&self) -> serde_json::Value {
        let value = match self {
            StructureConfig::Fc(c) => serde_json::to_value(c),
            StructureConfig::Cnn(c) => serde_json::to_value(c),
            StructureConfig::Gru(c) | StructureConfig::Lstm(c) => serde_json::to_value(c),
        };
        value.expect("plain structs always serialize")
    }

    /// Width consumed from the previous layer (input channels or input dim).
    pub fn in_width(&self) -> u32 {
        match self {
            StructureConfig::Fc(c) => c.in_dim,
            StructureConfig::Cnn(c) => c.in_channel,
            StructureConfig::Gru(c) | StructureConfig::Lstm(c) => c.in_dim,
        }
    }

    /// Width produced for the next layer (output channels or hidden units).
    pub fn out_width(&self) -> u32 {
        match self {
            StructureConfig::Fc(c) => c.out_dim,
            StructureConfig::Cnn(c) => c.out_channel,
            StructureConfig::Gru(c) | StructureConfig::Lstm(c) => c.out_dim,
        }
    }

    pub fn with_in_width(mut self, width: u32) -> Self {
        match &mut self {
            StructureConfig::Fc(c) => c.in_dim = width,
            StructureConfig::Cnn(c) => c.in_channel = width,
            StructureConfig::Gru(c) | StructureConfig::Lstm(c) => c.in_dim = width,
        }
        self
    }

    pub fn with_out_width(mut self, width: u32) -> Self {
        match &mut self {
            StructureConfig::Fc(c) => c.out_dim = width,
            StructureConfig::Cnn(c) => c.out_channel = width,
            StructureConfig::Gru(c) | StructureConfig::Lstm(c) => c.out_dim = width,
        }
        self
    }

    /// Returns a copy with one width feature replaced, or `None` when `index`
    /// is not a width feature of this kind.
    pub fn with_width_feature(&self, index: usize, value: u32) -> Option<Self> {
        let name = *self.kind().feature_names().get(index)?;
        match name {
            "in_dim" | "in_channel" => Some(self.with_in_width(value)),
            "out_dim" | "out_channel" => Some(self.with_out_width(value)),
            _ => None,
        }
    }

    /// CNN output extent, `None` for other kinds.
    pub fn conv_output(&self) -> Option<(u32, u32)> {
        match self {
            StructureConfig::Cnn(c) => conv_output_dims(
                c.in_height,
                c.in_width,
                c.kernel_height,
                c.kernel_width,
                c.stride,
                c.padding,
            )
            .ok(),
            _ => None,
        }
    }
}

/// Fixed convolution geometry: everything except the channel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvGeometry {
    pub in_height: u32,
    pub in_width: u32,
    pub kernel_height: u32,
    pub kernel_width: u32,
    pub stride: u32,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn config(&self, in_channel: u32, out_channel: u32) -> StructureConfig {
        StructureConfig::cnn(
            self.in_height,
            self.in_width,
            self.kernel_height,
            self.kernel_width,
            self.stride,
            self.padding,
            in_channel,
            out_channel,
        )
    }

    pub fn of(config: &StructureConfig) -> Option<Self> {
        match config {
            StructureConfig::Cnn(c) => Some(ConvGeometry {
                in_height: c.in_height,
                in_width: c.in_width,
                kernel_height: c.kernel_height,
                kernel_width: c.kernel_width,
                stride: c.stride,
                padding: c.padding,
            }),
            _ => None,
        }
    }

    pub fn output_dims(&self) -> Result<(u32, u32)> {
        conv_output_dims(self.in_height, self.in_width, self.kernel_height, self.kernel_width, self.stride, self.padding)
    }
}

impl FromStr for ConvGeometry {
    type Err = Error;

    /// Parses `HxW,KHxKW,STRIDE,PADDING`, e.g. `24x24,3x3,1,same`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad geometry `{s}`, expected e.g. 24x24,3x3,1,same"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let pair = |p: &str| -> Result<(u32, u32)> {
            let (a, b) = p.split_once('x').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        let (in_height, in_width) = pair(parts[0])?;
        let (kernel_height, kernel_width) = pair(parts[1])?;
        let stride = parts[2].parse().map_err(|_| bad())?;
        let padding = parts[3].parse()?;
        let geometry = ConvGeometry { in_height, in_width, kernel_height, kernel_width, stride, padding };
        geometry.config(1, 1).validate()?;
        Ok(geometry)
    }
}

impl fmt::Display for StructureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureConfig::Fc(c) => write!(f, "FC({}->{})", c.in_dim, c.out_dim),
            StructureConfig::Cnn(c) => write!(
                f,
                "CNN({}x{}, k{}x{}, s{}, {:?}, {}->{})",
                c.in_height,
                c.in_width,
                c.kernel_height,
                c.kernel_width,
                c.stride,
                c.padding,
                c.in_channel,
                c.out_channel
            ),
            StructureConfig::Gru(c) => write!(f, "GRU({}->{}, step {})", c.in_dim, c.out_dim, c.step),
            StructureConfig::Lstm(c) => write!(f, "LSTM({}->{}, step {})", c.in_dim, c.out_dim, c.step),
        }
    }
}

/// Condition-search features, in the kind's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kind: LayerKind,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn names(&self) -> &'static [&'static str] {
        self.kind.feature_names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.kind.feature_index(name).map(|i| self.values[i])
    }

    pub fn mem_in(&self) -> f64 {
        self.values[self.kind.structural_len()]
    }

    pub fn mem_out(&self) -> f64 {
        self.values[self.kind.structural_len() + 1]
    }

    pub fn mem_inter(&self) -> f64 {
        self.values[self.kind.structural_len() + 2]
    }

    pub fn param_size(&self) -> f64 {
        self.values[self.kind.structural_len() + 3]
    }
}

/// Regression inputs of the per-node linear laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplanatoryVector {
    pub flops: f64,
    pub mem: f64,
    pub param_size: f64,
    /// Recurrent kinds only.
    pub step: Option<f64>,
}

impl ExplanatoryVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.flops, self.mem, self.param_size];
        if let Some(step) = self.step {
            v.push(step);
        }
        v
    }

    pub fn len(&self) -> usize {
        3 + usize::from(self.step.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn derive_features(config: &StructureConfig) -> Result<FeatureVector> {
    config.validate()?;
    let values = match config {
        StructureConfig::Fc(c) => {
            let (i, o) = (f64::from(c.in_dim), f64::from(c.out_dim));
            vec![i, o, i, o, 0.0, i * o + o]
        }
        StructureConfig::Cnn(c) => {
            let (oh, ow) = conv_output_dims(
                c.in_height,
                c.in_width,
                c.kernel_height,
                c.kernel_width,
                c.stride,
                c.padding,
            )?;
            let (ih, iw) = (f64::from(c.in_height), f64::from(c.in_width));
            let (kh, kw) = (f64::from(c.kernel_height), f64::from(c.kernel_width));
            let (ic, oc) = (f64::from(c.in_channel), f64::from(c.out_channel));
            let (oh, ow) = (f64::from(oh), f64::from(ow));
            vec![
                ih,
                iw,
                kh,
                kw,
                ic,
                oc,
                c.padding.code(),
                f64::from(c.stride),
                ih * iw * ic,
                oh * ow * oc,
                oh * ow * kh * kw * ic,
                kh * kw * ic * oc + 1.0,
            ]
        }
        StructureConfig::Gru(c) => {
            let (i, o, s) = (f64::from(c.in_dim), f64::from(c.out_dim), f64::from(c.step));
            vec![i, o, s, s * i, s * o, 3.0 * s * o, 3.0 * o * (i + o + 1.0)]
        }
        StructureConfig::Lstm(c) => {
            let (i, o, s) = (f64::from(c.in_dim), f64::from(c.out_dim), f64::from(c.step));
            vec![i, o, s, 2.0 * s * i, 2.0 * s * o, 4.0 * s * o, 4.0 * o * (i + o + 1.0)]
        }
    };
    Ok(FeatureVector { kind: config.kind(), values })
}

/// FLOPs use the multiply-add count: `2·oh·ow·kh·kw·ic·oc` for convolutions,
/// `2·in·out + out` for dense layers, `2·step·param_size` for recurrent layers.
pub fn derive_explanatory(config: &StructureConfig) -> Result<ExplanatoryVector> {
    let features = derive_features(config)?;
    Ok(explanatory_from_features(config, &features))
}

pub(crate) fn explanatory_from_features(config: &StructureConfig, f: &FeatureVector) -> ExplanatoryVector {
    let mem = f.mem_in() + f.mem_out() + f.mem_inter();
    let param_size = f.param_size();
    match config {
        StructureConfig::Fc(c) => {
            let (i, o) = (f64::from(c.in_dim), f64::from(c.out_dim));
            ExplanatoryVector { flops: 2.0 * i * o + o, mem, param_size, step: None }
        }
        StructureConfig::Cnn(c) => {
            let (oh, ow) = config.conv_output().expect("validated config");
            let flops = 2.0
                * f64::from(oh)
                * f64::from(ow)
                * f64::from(c.kernel_height)
                * f64::from(c.kernel_width)
                * f64::from(c.in_channel)
                * f64::from(c.out_channel);
            ExplanatoryVector { flops, mem, param_size, step: None }
        }
        StructureConfig::Gru(c) | StructureConfig::Lstm(c) => {
            let step = f64::from(c.step);
            ExplanatoryVector { flops: 2.0 * step * param_size, mem, param_size, step: Some(step) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cnn_example() -> StructureConfig {
        StructureConfig::cnn(24, 24, 3, 3, 1, Padding::Same, 8, 16)
    }

    #[test]
    fn conv_dims_examples() {
        assert_eq!(conv_output_dims(24, 24, 3, 3, 1, Padding::Same).unwrap(), (24, 24));
        assert_eq!(conv_output_dims(24, 24, 3, 3, 1, Padding::Valid).unwrap(), (22, 22));
        assert_eq!(conv_output_dims(25, 25, 3, 3, 2, Padding::Same).unwrap(), (13, 13));
        assert!(conv_output_dims(4, 24, 5, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn feature_table_rows() {
        let fc = derive_features(&StructureConfig::fc(3, 5)).unwrap();
        assert_eq!(fc.param_size(), 20.0);
        assert_eq!((fc.mem_in(), fc.mem_out(), fc.mem_inter()), (3.0, 5.0, 0.0));

        let cnn = derive_features(&cnn_example()).unwrap();
        assert_eq!(cnn.mem_in(), 4608.0);
        assert_eq!(cnn.mem_out(), 9216.0);
        assert_eq!(cnn.mem_inter(), 41472.0);
        assert_eq!(cnn.param_size(), 1153.0);

        let gru = derive_features(&StructureConfig::gru(4, 8, 10)).unwrap();
        assert_eq!(gru.param_size(), 312.0);
        assert_eq!((gru.mem_in(), gru.mem_out(), gru.mem_inter()), (40.0, 80.0, 240.0));
    }

    #[test]
    fn explanatory_examples() {
        let fc = derive_explanatory(&StructureConfig::fc(3, 5)).unwrap();
        assert_eq!((fc.flops, fc.mem, fc.param_size, fc.step), (35.0, 8.0, 20.0, None));

        let cnn = derive_explanatory(&cnn_example()).unwrap();
        assert_eq!((cnn.flops, cnn.mem, cnn.param_size), (1_327_104.0, 55_296.0, 1153.0));

        let gru = derive_explanatory(&StructureConfig::gru(4, 8, 10)).unwrap();
        assert_eq!((gru.flops, gru.mem, gru.param_size, gru.step), (6240.0, 360.0, 312.0, Some(10.0)));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(derive_features(&StructureConfig::fc(0, 5)).is_err());
        assert!(derive_features(&StructureConfig::cnn(24, 24, 3, 3, 3, Padding::Same, 1, 1)).is_err());
        assert!(derive_explanatory(&StructureConfig::cnn(2, 24, 3, 3, 1, Padding::Valid, 1, 1)).is_err());
        assert!(derive_features(&StructureConfig::lstm(4, 4, 0)).is_err());
    }

    #[test]
    fn canonical_encoding_rejects_foreign_fields() {
        let ok: StructureConfig = serde_json::from_str(r#"{"kind":"FC","in_dim":3,"out_dim":5}"#).unwrap();
        assert_eq!(ok, StructureConfig::fc(3, 5));
        let err = serde_json::from_str::<StructureConfig>(r#"{"kind":"FC","in_dim":3,"out_dim":5,"step":2}"#);
        assert!(err.is_err());
        let encoded = serde_json::to_string(&cnn_example()).unwrap();
        assert!(encoded.starts_with(r#"{"kind":"CNN""#));
        assert!(!encoded.contains("step"));
    }

    #[test]
    fn width_features() {
        assert!(LayerKind::Cnn.is_width_feature(4));
        assert!(LayerKind::Cnn.is_width_feature(5));
        assert!(!LayerKind::Cnn.is_width_feature(8));
        assert!(!LayerKind::Gru.is_width_feature(2));
        let c = cnn_example().with_width_feature(4, 12).unwrap();
        assert_eq!(c.in_width(), 12);
        assert!(cnn_example().with_width_feature(0, 12).is_none());
    }
}
