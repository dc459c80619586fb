//! Post-processing of fitted time models: coefficient significance,
//! safe-expansion regions and simplified models.

mod region;
mod significance;

pub use region::{
    cnn_time_polynomial, condition_region, expansion_benefit, model_regions, safe_region, simplify_model,
    verify_region, Axis, BenefitPoly, BilinearPoly, ExpansionRegion, RegionBound, UNBOUNDED_EXTENT, VERIFY_GRID,
};
pub use significance::{coefficient_pvalues, ols_significance, SignificanceReport, VariableSignificance};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layer::{ConvGeometry, LayerKind};
use crate::timetree::{Dataset, TimeModel};

/// Everything `analyze` reports for one layer kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kind: LayerKind,
    pub nodes: usize,
    pub leaves: usize,
    pub significance: Option<SignificanceReport>,
    pub regions: Vec<ExpansionRegion>,
}

/// Significance (when a dataset is given) plus expansion regions for each
/// geometry (CNN models only).
pub fn analyze(model: &TimeModel, dataset: Option<&Dataset>, geometries: &[ConvGeometry]) -> Result<AnalysisReport> {
    let significance = dataset.map(coefficient_pvalues).transpose()?;
    let mut regions = Vec::new();
    if model.kind == LayerKind::Cnn {
        for g in geometries {
            regions.extend(model_regions(model, g)?);
        }
    }
    Ok(AnalysisReport {
        kind: model.kind,
        nodes: model.nodes.len(),
        leaves: model.leaf_count(),
        significance,
        regions,
    })
}
