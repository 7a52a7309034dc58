//! Least-energy nonnegative solutions of coupled cubic Schrödinger systems
//!
//! ```text
//! −Δu_i + λ_i u_i = Σ_j β_ij u_j² u_i,   i = 1, …, d
//! ```
//!
//! minimized over the group Nehari set induced by a decomposition of the
//! components into `m` consecutive groups. The crate provides the
//! discretization ([`grid`]), coupling data and admissibility constants
//! ([`coupling`]), the energy and its group aggregates ([`energy`]), group
//! scaling and projection ([`nehari`]), the constrained descent solver
//! ([`solver`]), polarization-based symmetry diagnostics ([`symmetry`]) and
//! whole-space radial experiments ([`radial`]).

pub mod coupling;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod nehari;
pub mod radial;
pub mod solver;
pub mod symmetry;

pub use coupling::{
    classify_pairs, constants_report, sobolev_constant, upper_bound_cbar, validate_regime, ConstantsReport,
    CouplingSpec, Decomposition, PairClass, RegimeVerdict, Theorem,
};
pub use energy::{Field, GroupStats, Membership, System};
pub use error::{Error, Result};
pub use grid::{Grid, GridKind, ScalarField};
pub use nehari::{natural_constraint_residual, project_to_n, scaling_energy, solve_scaling, ScalingResult};
pub use radial::{decay_audit, splitting_experiment, subsystem_level, SplittingConfig, SubsystemLevel};
pub use solver::{minimize, positivity_audit, sweep, Init, SolveResult, SolverConfig, Step};
pub use symmetry::{antipodal_audit, foliated_schwarz_test, polarize, HalfSpace, SymmetryReport};
