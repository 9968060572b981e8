//! Numerical weak KAM theory for time-periodic Lagrangians on the torus.
//!
//! The continuous objects (action potential, Peierls barrier, Aubry set,
//! weak KAM solutions) are realized on a layered space-time lattice whose
//! edges carry one-step actions; every quantity is then a min-plus path cost.
//!
//! * [`model`]: Lagrangian families and their Hamiltonians.
//! * [`lattice`]: the layered graph and its action kernel.
//! * [`minplus`]: relaxation, path costs, mean cycles.
//! * [`critical`]: critical value, Mather's alpha function, subsolution test.
//! * [`barrier`]: potentials, Peierls barrier, Aubry set, static classes.
//! * [`weakkam`]: Lax-Oleinik operators and weak KAM solutions.
//! * [`oracle`]: brute-force enumerators used to cross-check the engine.

pub mod barrier;
pub mod critical;
pub mod error;
pub mod lattice;
pub mod minplus;
pub mod model;
pub mod oracle;
pub mod weakkam;

pub use error::{Error, Result};
pub use lattice::{Lattice, LatticeSpec, NodeId, StepKernel};
pub use model::{Covector, Family, LagrangianSpec, PhasePoint};
