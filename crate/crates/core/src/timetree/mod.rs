//! Tree-structured linear regression of layer execution time.

mod dataset;
mod io;
pub mod nnls;
mod split;
mod tree;

pub use dataset::{Dataset, Sample, Source};
pub use io::{format_version, load_model, save_model, ModelDocument, NodeDocument};
pub use nnls::LinearFit;
pub use split::{enumerate_conditions, impurity, partition, weighted_impurity, Condition, ConditionKind};
pub use tree::{dataset_mape, fit_tree, FitParams, Node, SnapRule, TimeModel};

pub(crate) use io::check_version;

use crate::error::Result;

/// Non-negative least-squares fit of a whole dataset.
pub fn nnls_fit(dataset: &Dataset) -> Result<LinearFit> {
    nnls::fit_rows(&dataset.explanatory_rows(), &dataset.times())
}
