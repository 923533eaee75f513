//! Certification checks tying simulations to the theory: population bound,
//! Itô formula, dynamic programming, verification and initial-law
//! invariance, each producing a [`CheckReport`].

mod checks;
mod cylindrical;
mod lq_checks;
mod report;

pub use checks::{
    check_flow_property, check_initial_law_invariance, check_mass_law, check_population_bound, ito_formula_check, ito_integrand, ito_residual,
    ItoQuadrature, Lifting, MIN_BOUND_TREES,
};
pub use cylindrical::{CylindricalDerivatives, CylindricalFunction, InnerFunction};
pub use lq_checks::{
    check_dpp, check_hjb_residual, check_riccati_order, check_verification, dpp_sides, hjb_sample_points,
    mc_optimal_cost, perturbation_grid, riccati_self_convergence, shifted_panel, DppSides, McBudget, RiccatiOrder,
};
pub use report::{CheckReport, CheckSuite, SuiteSummary};
