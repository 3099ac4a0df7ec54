//! Partially pooled propensity-score weighting for clustered observational
//! data.
//!
//! Clusters are grouped by treatment prevalence, a propensity model is fit
//! at the full, group or cluster level, and the average treatment effect is
//! estimated by inverse-probability weighting combined at the full, group
//! or cluster level. A simulation harness reproduces bias, standard error
//! and coverage for every combination.

pub mod data;
pub mod diagnostics;
pub mod estimators;
pub mod grouping;
pub mod io;
pub mod model;
pub mod propensity;
pub mod rng;
pub mod simulation;
