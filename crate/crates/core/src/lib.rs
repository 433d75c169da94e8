//! Two-stage atomic-norm channel estimation for hybrid-RIS mmWave MIMO links.
//!
//! The MS→RIS channel is recovered first from the signals captured by the few
//! active RIS elements, then the RIS→BS channel from the BS observations of the
//! passive reflection. The estimated angles and gains drive the RIS phase
//! design, and Cramér-Rao bounds for both stages are available for comparison.

pub mod anm;
pub mod channel;
pub mod control;
pub mod crlb;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod sounding;

pub use anm::{AnmProblem, AnmSolution, SolverOptions};
pub use channel::{PathLossModel, PathSet, Topology};
pub use control::PhaseDesign;
pub use crlb::{FimReport, LinearModel, ParamClass};
pub use error::{Error, Result, Stage};
pub use estimation::{two_stage_estimate, EstimationResult, EstimatorOptions, Truth, Warning};
pub use harness::{ExperimentConfig, RunOutput, SetupChoice, Status};
pub use metrics::TrialRecord;
pub use numerics::{ComplexMatrix, ComplexVector, HermitianToeplitz};
pub use sounding::{ActivePlacement, Setup, SoundingConfig, SoundingRecord};
