//! Extensions of boundary fluxes into a cube: a p'-harmonic divergence-free field on good
//! cubes and the explicit radial field with a point singularity on bad cubes.

mod banded;
mod neumann;
mod radial;

pub use neumann::{extend_good, ExtensionDiagnostics, ExtensionResult, NeumannProblem, SolverSettings};
pub use radial::{
    bad_cube_constant, bad_cube_lp, bad_cube_pairing, check_integrable, extend_bad, integrability_limit, SHELL_NODES,
};
