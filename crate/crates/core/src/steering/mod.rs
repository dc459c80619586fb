//! Steering network structure with time models: rounding layers up to
//! execution-time local minima, resolving width conflicts between layers,
//! and compressing under a time-aware objective.

mod compress;
mod expand;
mod network;
mod pad;

pub use compress::{
    brute_force_compress, greedy_compress, time_aware_objective, Candidate, CommandEvaluator, CompressOutcome,
    FnEvaluator, LossEvaluator, WidthDeficitLoss, ZeroLoss, BRUTE_FORCE_LIMIT,
};
pub use expand::{
    expand_layer, expand_network, rnn_time_floor, ConflictResolution, Decision, LayerTrace, NetworkTrace,
    RejectReason, ACCEPT_RULE,
};
pub use network::{model_for, network_time, Link, ModelMap, NetworkSpec};
pub use pad::{zero_pad_plan, LayerPad, PadPlan, Segment, TensorPad};
