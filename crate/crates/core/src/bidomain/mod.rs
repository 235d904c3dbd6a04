//! Homogenized bidomain system on the fascicle scale.
//!
//! `c_m dv/dt + I(v, g) = a_i d2u_i/dx1^2 = -div(a_e grad u_e)`,
//! `dg/dt = theta v + a - b g`, `v = u_i - u_e`, with both potentials zero on
//! the bases `x1 = 0, L` and `a_e grad u_e . nu = boundary_scale J` on the
//! lateral boundary. Space is discretized with Q1 finite elements and a
//! lumped mass; the intracellular conductivity acts along `x1` only.

mod energy;
mod mesh;
mod run;
mod solver;
mod stimulus;

pub use energy::{certificate_holds, fit_gronwall, EnergyRecord, GronwallFit};
pub use mesh::{MacroMesh, MeshMode};
pub use run::{run, run_observed, InitialCondition, RunFailure, RunResult, Scenario, Scheme};
pub use solver::{MacroSolver, MacroState, StepInfo, ELLIPTIC_TOL, NEWTON_TOL};
pub use stimulus::{SpaceProfile, Stimulus, TimeProfile};
