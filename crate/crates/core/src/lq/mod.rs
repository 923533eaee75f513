//! The one-dimensional linear-quadratic case: Riccati system, value
//! function, optimal feedback, closed-loop moment dynamics and HJB residual.

mod hjb;
mod model;
mod policy;
mod riccati;

pub use hjb::{control_hamiltonian, hjb_residual};
pub use model::{LQConfig, LQModel, LQModelParts, Moments};
pub use policy::{
    lq_cost_ode, lq_moment_flow, lq_policy_path, moment_rhs, optimal_affine_control, AffineControl, PolicyPath,
};
pub use riccati::{
    lq_optimal_control, lq_value, optimal_affine_at, riccati_rhs, solve_riccati, RiccatiConvention, RiccatiSolution,
    RiccatiState, BLOW_UP,
};
