//! Split-treatment causal ranking.
//!
//! Estimate the individual effect of an observed proxy treatment with
//! inverse-propensity-weighted outcome models, rank units by it, stress the
//! ranking with placebo and synthetic-confounder runs, and check it against
//! simulated ground truth and instrumental-variable campaigns.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix it to `f64`; `F32*` aliases are provided for
//! the single-precision variant.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod outcome;
pub mod propensity;
pub mod ranking;
pub mod report;
pub mod rng;
pub mod run;
pub mod scalar;
pub mod sensitivity;
pub mod simulate;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = dataset::Dataset<f64>;
pub type GroundTruth = dataset::GroundTruth<f64>;
pub type SimOutput = simulate::SimOutput<f64>;
pub type PropensityFit = propensity::PropensityFit<f64>;
pub type BalanceReport = propensity::BalanceReport<f64>;

pub type F32Dataset = dataset::Dataset<f32>;
pub type F32SimOutput = simulate::SimOutput<f32>;
pub type F32PropensityFit = propensity::PropensityFit<f32>;
pub type OutcomeModel = outcome::OutcomeModel<f64>;
pub type IteTable = outcome::IteTable<f64>;
pub type RankedCohort = ranking::RankedCohort<f64>;
pub type Analysis = analysis::Analysis<f64>;
pub type IvExperiment = validation::IvExperiment<f64>;
pub type RunConfig = config::RunConfig;
pub type RunReport = run::RunReport;
