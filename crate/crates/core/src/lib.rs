//! Simulation laboratory for the winner's curse in model-based policy evaluation.
//!
//! The crate builds a synthetic refugee-matching environment in which no
//! capacity-respecting assignment can change expected employment, learns
//! assignment policies by estimate-then-optimize, and compares how
//! model-based, bootstrap, inverse-propensity and oracle evaluators score
//! those policies. A separate [`theory`] module checks the closed-form
//! stylized constructions (piecewise-linear OLS and the ridge example)
//! numerically.
//!
//! Module map:
//!
//! * [`tabular`]: covariate schema, records, datasets and feature encodings.
//! * [`envgen`]: the null-effect environment and historical samples.
//! * [`learners`]: OLS, ridge, LASSO-logit, honest forests and boosted trees.
//! * [`assign`]: exact capacity-constrained assignment via min-cost flow.
//! * [`evaluate`]: policy-value estimators plus ROC and calibration diagnostics.
//! * [`theory`]: numerical verification of the stylized constructions.
//! * [`expt`]: configuration, seed derivation and the end-to-end protocol.

pub mod assign;
pub mod envgen;
pub mod evaluate;
pub mod expt;
pub mod learners;
pub mod seeds;
pub mod tabular;
pub mod theory;

pub use assign::{AssignmentInstance, Matching};
pub use envgen::{CausalModel, EnvironmentConfig};
pub use learners::{Family, OutcomeModel, OutcomePredictor, TrainConfig};
pub use tabular::{CovariateSchema, Dataset, FeatureMap, FeatureMode, RefugeeRecord};
