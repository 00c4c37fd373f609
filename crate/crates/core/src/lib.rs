//! Variational solvers for stationary first-order mean-field games with
//! congestion on the periodic torus.

pub mod error;
pub mod experiment;
pub mod grid;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod par;
pub mod second_order;
pub mod transform;
pub mod variational;

pub use error::{MfgError, Result};
pub use grid::{GridFunction, GridVectorField, TorusGrid};
pub use model::{CouplingG, PotentialFamily, PowerTerm, ProblemSpec};
pub use optimizer::{minimize, Init, SolveOptions, SolveResult};
pub use variational::{DiscreteObjective, FeasiblePoint};
