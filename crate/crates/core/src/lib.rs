//! Random walks among time-dependent random conductances on the discrete
//! torus: environments, exact walk simulation, correctors, Moser-chain
//! inequality checks and invariance-principle statistics.

pub mod corrector;
pub mod environment;
pub mod error;
pub mod io;
pub mod corpus;
pub mod lattice;
pub mod linalg;
pub mod moser;
pub mod qfclt;
pub mod rng;
pub mod spacetime;
pub mod stats;
pub mod walker;

pub use environment::{ConductanceField, EnvironmentModel, Law, MomentExponents};
pub use error::{Error, Result};
pub use lattice::{SpaceTimeCylinder, TorusLattice};
pub use spacetime::{NormSpec, SpaceTimeField};
