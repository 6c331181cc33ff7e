//! ControlSynth neural ODEs: models, solvers, reference simulators, training,
//! evaluation metrics and LMI-based stability certificates.

pub mod certify;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod simulators;
pub mod solvers;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
