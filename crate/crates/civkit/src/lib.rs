//! civkit: exact conditional-means instrumental variables for categorical
//! instruments.
//!
//! The crate provides:
//! - loading and validation of (Y, D, Z, X) datasets ([`data`]);
//! - an exact dynamic-programming solver for the K-conditional-means
//!   clustering of category means ([`kcmeans`]);
//! - the CIV estimator and comparators — TSLS, JIVE, IJIVE, UJIVE, LIML, and
//!   an infeasible oracle — with heteroskedasticity-robust covariances
//!   ([`estimators`], [`jive`], [`liml`]);
//! - a deterministic, parallel Monte Carlo laboratory ([`montecarlo`]) and
//!   report serialization ([`report`]).

pub mod data;
pub mod error;
pub mod estimators;
pub mod jive;
pub mod kcmeans;
pub mod liml;
pub mod montecarlo;
pub mod report;

#[cfg(test)]
pub(crate) mod testutil;

pub use data::{load_csv, category_stats, CategoryStats, ColumnSchema, Dataset};
pub use error::{Error, Result};
pub use estimators::{
    civ_fit, estimate_pi_within, leverage, oracle_fit, sandwich_cov, tsls_fit,
    CivFirstStage, EstimatorTag, FirstStage, IvFit,
};
pub use jive::{ijive_fit, jive1_fit, jive1_instrument, ujive_fit};
pub use kcmeans::{brute_force_kcmeans, fit_kcmeans, KCMeansModel};
pub use liml::liml_fit;
pub use montecarlo::{
    parse_estimator_list, power_curve, quantile_type7, run_replications, simulate_dgp,
    EstimatorSpec, SimConfig, SimSummary, SimTruth, CRITICAL_VALUE,
};
pub use report::{sim_summary_csv, power_curve_csv, RunReport};
