//! Mean-field fixed point: the deterministic flow reproduced by the trees
//! simulated against it.

mod flow;
mod picard;

pub use flow::{FlowProvenance, MeasureFlow, MomentSe};
pub use picard::{
    flow_distance, flow_property_check, initial_guess, residual_indices, residual_noise_floor, solve_flow_picard,
    FlowPropertyReport, PicardDiagnostics, PicardOptions, MIN_TREES,
};
