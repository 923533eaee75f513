//! One-dimensional finite-volume solver for the linear forward equation
//! `∂_t ρ = -∂_x(b ρ) + ½ ∂²_x(σ² ρ) + π ρ` of a branching diffusion frozen
//! at a given measure flow.

mod density;
mod norm;
mod solver;
mod stress;

pub use density::{Boundary, DensityFlow, SpaceGrid};
pub use norm::{eta_norm, WeightedNormSpec};
pub use solver::{fp_solve, weak_form_residual, FpOptions, FpScheme, TestFunction};
pub use stress::{
    ellipticity_check, uniqueness_stress, EllipticityReport, PairDistance, UniquenessReport, UniquenessSpec,
};
