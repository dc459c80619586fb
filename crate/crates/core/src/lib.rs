//! Interpretable per-layer latency models and latency-aware structure
//! compression for neural networks.
//!
//! * [`layer`] — structure configurations and derived feature vectors.
//! * [`timetree`] — tree-structured non-negative linear time models.
//! * [`analysis`] — coefficient significance, safe-expansion regions,
//!   simplified models.
//! * [`steering`] — local-minimum expansion, network expansion and
//!   time-aware compression.
//! * [`harness`] — profiling plans, synthetic ground truth and profile I/O.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod layer;
pub mod steering;
pub mod timetree;

pub use error::{Error, ErrorClass, Result};
pub use layer::{
    conv_output_dims, derive_explanatory, derive_features, ConvGeometry, ExplanatoryVector, FeatureVector, LayerKind,
    Padding, StructureConfig,
};
pub use timetree::{fit_tree, load_model, save_model, Dataset, FitParams, TimeModel};
