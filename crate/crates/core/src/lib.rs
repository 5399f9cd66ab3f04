//! Covariate-adjusted inference for the area under the mean cumulative
//! function of recurrent events in the presence of a terminal event.
//!
//! The pipeline is: ingest a [`Cohort`](data::Cohort), build per-arm
//! [`estimators`], compute per-subject [`influence`] values, and combine them
//! into unadjusted and covariate-adjusted Wald [`inference`]. The
//! [`randomization`] and [`simulation`] modules reproduce the Monte Carlo
//! study under simple and stratified permuted-block designs.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod influence;
pub mod randomization;
pub mod simulation;
pub mod step;

pub use data::{AnalysisConfig, Arm, Cohort, Endpoint, Estimand, EstimandChoice, SubjectRecord};
pub use error::{Error, ErrorClass, Result};
pub use step::{StepFunction, StepKind};
