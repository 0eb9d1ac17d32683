//! Refugee records, datasets and the feature encodings shared by all learners.

mod dataset;
mod features;
mod schema;

pub use dataset::{split, Dataset};
pub use features::{FeatureMap, FeatureMode, Standardizer};
#[cfg(test)]
pub(crate) use dataset::tests as dataset_tests;
pub use schema::{CovariateDescriptor, CovariateKind, CovariateSchema, CovariateValue, RefugeeRecord};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TabularError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("covariate `{name}`: {reason}")]
    Encoding { name: String, reason: String },

    #[error("record has {got} values but the schema has {expected} covariates")]
    RecordLength { expected: usize, got: usize },

    #[error("location {location} out of range for {n_locations} locations")]
    LocationOutOfRange { location: usize, n_locations: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("split fraction {fraction} of {n} rows leaves an empty part")]
    DegenerateSplit { fraction: f64, n: usize },

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for TabularError {
    fn from(err: csv::Error) -> Self {
        TabularError::Csv(err.to_string())
    }
}
