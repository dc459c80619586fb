//! Profiling plans, synthetic ground truth and profile files.

mod oracle;
mod plan;
mod profile;

pub use oracle::{SyntheticOracle, SYNTH_REPS};
pub use plan::{generate_plan, read_plan, write_plan, PlanEntry, Scope};
pub use profile::{
    ingest_profile, read_profile, write_dataset, write_profile, ProfileSample, ProfileSet, SCHEMA_VERSION,
};
