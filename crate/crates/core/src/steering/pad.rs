use serde::{Deserialize, Serialize};

use super::network::NetworkSpec;
use crate::error::{Error, Result};
use crate::layer::{ConvGeometry, StructureConfig};

/// A contiguous run of old indices placed at `new_start` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub old_start: u32,
    pub new_start: u32,
    pub len: u32,
}

/// How one weight tensor grows: along each axis, old indices are copied
/// into the listed segments and every other new index is zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorPad {
    pub name: String,
    pub old_shape: Vec<u32>,
    pub new_shape: Vec<u32>,
    pub axes: Vec<Vec<Segment>>,
}

impl TensorPad {
    /// Indices along `axis` that receive zeros.
    pub fn zero_indices(&self, axis: usize) -> Vec<u32> {
        (0..self.new_shape[axis])
            .filter(|i| !self.axes[axis].iter().any(|s| (s.new_start..s.new_start + s.len).contains(i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPad {
    pub layer: usize,
    pub tensors: Vec<TensorPad>,
}

/// Per-layer index embeddings that widen weights with zeros; layers whose
/// shape did not change are omitted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PadPlan {
    pub layers: Vec<LayerPad>,
}

impl PadPlan {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

fn prefix(old: u32, new: u32) -> Vec<Segment> {
    vec![Segment { old_start: 0, new_start: 0, len: old.min(new) }]
}

/// `blocks` equal-sized blocks of `old` entries, each placed at the start of
/// a block of `new` entries.
fn blocked(blocks: u32, old: u32, new: u32) -> Vec<Segment> {
    (0..blocks).map(|g| Segment { old_start: g * old, new_start: g * new, len: old }).collect()
}

fn tensor(name: &str, old_shape: Vec<u32>, new_shape: Vec<u32>, axes: Vec<Vec<Segment>>) -> TensorPad {
    TensorPad { name: name.to_string(), old_shape, new_shape, axes }
}

fn layer_pad(old: &StructureConfig, new: &StructureConfig) -> Result<Vec<TensorPad>> {
    let (oi, oo, ni, no) = (old.in_width(), old.out_width(), new.in_width(), new.out_width());
    Ok(match (old, new) {
        (StructureConfig::Fc(_), StructureConfig::Fc(_)) => vec![
            tensor("kernel", vec![oi, oo], vec![ni, no], vec![prefix(oi, ni), prefix(oo, no)]),
            tensor("bias", vec![oo], vec![no], vec![prefix(oo, no)]),
        ],
        (StructureConfig::Cnn(a), StructureConfig::Cnn(b)) => {
            if ConvGeometry::of(old) != ConvGeometry::of(new) {
                return Err(Error::invalid("zero padding cannot change convolution geometry"));
            }
            let (kh, kw) = (a.kernel_height, a.kernel_width);
            debug_assert_eq!((kh, kw), (b.kernel_height, b.kernel_width));
            vec![
                tensor(
                    "kernel",
                    vec![kh, kw, oi, oo],
                    vec![kh, kw, ni, no],
                    vec![prefix(kh, kh), prefix(kw, kw), prefix(oi, ni), prefix(oo, no)],
                ),
                tensor("bias", vec![oo], vec![no], vec![prefix(oo, no)]),
            ]
        }
        (StructureConfig::Gru(a), StructureConfig::Gru(b)) | (StructureConfig::Lstm(a), StructureConfig::Lstm(b)) => {
            if a.step != b.step {
                return Err(Error::invalid("zero padding cannot change the step count"));
            }
            let gates = if matches!(old, StructureConfig::Gru(_)) { 3 } else { 4 };
            vec![
                tensor(
                    "kernel",
                    vec![oi, gates * oo],
                    vec![ni, gates * no],
                    vec![prefix(oi, ni), blocked(gates, oo, no)],
                ),
                tensor(
                    "recurrent_kernel",
                    vec![oo, gates * oo],
                    vec![no, gates * no],
                    vec![prefix(oo, no), blocked(gates, oo, no)],
                ),
                tensor("bias", vec![gates * oo], vec![gates * no], vec![blocked(gates, oo, no)]),
            ]
        }
        _ => return Err(Error::invalid(format!("layer kind changed from {} to {}", old.kind(), new.kind()))),
    })
}

/// Index plan embedding each layer's old weights into the widened shapes of
/// `new`, with zeros elsewhere, so the widened network computes the same
/// function.
pub fn zero_pad_plan(old: &NetworkSpec, new: &NetworkSpec) -> Result<PadPlan> {
    if old.len() != new.len() {
        return Err(Error::invalid(format!("layer count changed from {} to {}", old.len(), new.len())));
    }
    let mut plan = PadPlan::default();
    for (i, (a, b)) in old.layers.iter().zip(&new.layers).enumerate() {
        if b.in_width() < a.in_width() || b.out_width() < a.out_width() {
            return Err(Error::invalid(format!("layer {i} shrinks; zero padding only widens")));
        }
        let tensors = layer_pad(a, b).map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
        if a != b {
            plan.layers.push(LayerPad { layer: i, tensors });
        }
    }
    Ok(plan)
}
