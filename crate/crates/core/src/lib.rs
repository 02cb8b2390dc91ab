//! Time-domain input design for system identification under input and output amplitude bounds.
//!
//! The designer grows an experiment one sample at a time. At each sample a
//! cyclic solver plans the next `N_u + 1` inputs so that the accumulated
//! Fisher information dominates the scaled application-cost Hessian; the
//! first planned input is applied and the loop stops once the planned
//! experiment meets the bound.

pub mod appset;
pub mod cyclic;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod linalg;
pub mod lti;
pub mod qp;

pub use appset::{ApplicationScenario, EllipsoidPair, ExperimentSpec, LmiCheck, MpcScenario};
pub use cyclic::{receding_horizon_design, CyclicIterate, DesignOutcome, DesignStatus};
pub use error::{Error, Result};
pub use fisher::{InformationState, StackedInput};
pub use harness::{identify, monte_carlo, MonteCarloReport};
pub use lti::{Coef, ModelStructure, NoiseModel, ParametricLtiModel, SensitivityBank};
