//! Optimization engines shared by the transfer modules.

pub mod ascent;
pub mod cycle;
pub mod envelope;
pub mod kelley;
pub mod local;
pub mod lp;
pub mod minplus;
pub mod transport;

pub use ascent::{
    max_over_potentials, max_over_simplex, maximize_concave_over_potentials, maximize_concave_over_simplex, AscentConfig,
    AscentResult, StepRule,
};
pub use cycle::{min_mean_cycle, solve_stationary_lp, CycleResult, StationarySolution};
pub use envelope::{concave_envelope_1d, EnvelopeResult};
pub use local::{pattern_minimize, simplex_grid, simplex_pattern_minimize, LocalMin, PatternConfig};
pub use minplus::{minplus_compose, minplus_power};
pub use transport::{solve_transport_lp, transport_raw, LpSolution};
