//! Simulation of controlled branching diffusion trees against a frozen
//! measure flow.

mod forest;
mod init;
mod model;
mod rng;
mod tree;

pub use forest::{run_forest, simulate_flow, simulate_moments, simulate_terminal, AtomCollector, ForestObserver, ForestSpec, MomentCollector};
pub use init::{init_population, InitScheme, InitialLaw};
pub use model::{
    net_offspring, sample_offspring, ClosedLoopControl, ControlKind, Feedback, ModelCoefficients, ProgenyLaw,
    ScalarCoefficient, VectorCoefficient, DEFAULT_MAX_OFFSPRING,
};
pub use rng::{derive_seed, tree_rng};
pub use tree::{empirical_measure, simulate_tree, BranchEvent, Particle, Simulator, TrajectoryRecorder, TreeObserver, TreeTrajectory};
