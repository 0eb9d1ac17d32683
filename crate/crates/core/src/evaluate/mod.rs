//! Policy-value estimators and prediction diagnostics.
//!
//! All estimators report an employment count over a test set of N
//! refugees, its rate count/N, and the percent change of that rate against
//! the test set's realized employment rate.

mod diagnostics;
mod report;

pub use diagnostics::{
    calibration_curve, logged_predictions, roc_auc, CalibrationBin, RocCurve, RocPoint,
};
pub use report::{histogram, EstimateRow, EvalReport, HistogramRow, MethodSummary};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::assign::Matching;
use crate::envgen::{true_value, CausalModel, EnvError};
use crate::learners::{fit, LearnError, OutcomePredictor, TrainConfig};
use crate::seeds::SeedTree;
use crate::tabular::{Dataset, RefugeeRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("matching covers {matching} refugees but the test set has {records}")]
    LengthMismatch { matching: usize, records: usize },

    #[error("matching sends refugee {refugee} to location {location}, but there are only {n_locations}")]
    LocationOutOfRange {
        refugee: usize,
        location: usize,
        n_locations: usize,
    },

    #[error("row {row}: propensity {value} of the logged location is not positive")]
    NonPositivePropensity { row: usize, value: f64 },

    #[error("bootstrap replicate {index}: {source}")]
    Bootstrap { index: usize, source: LearnError },

    #[error("{0}")]
    Diagnostics(String),

    #[error(transparent)]
    Learn(#[from] LearnError),

    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ModelBased,
    BootstrapModelBased,
    Ipw,
    /// IPW over regenerated assignments of the same test refugees.
    IpwResampled,
    /// Self-normalized IPW; exploratory, not one of the reference estimators.
    SelfNormalizedIpw,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ModelBased,
        Method::BootstrapModelBased,
        Method::Ipw,
        Method::IpwResampled,
        Method::SelfNormalizedIpw,
        Method::Oracle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::ModelBased => "model-based",
            Method::BootstrapModelBased => "bootstrap-model-based",
            Method::Ipw => "ipw",
            Method::IpwResampled => "ipw-resampled",
            Method::SelfNormalizedIpw => "self-normalized-ipw",
            Method::Oracle => "oracle",
        }
    }

    pub fn from_label(label: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == label)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEstimate {
    pub method: Method,
    pub employment_count: f64,
    pub employment_rate: f64,
    /// 100·(rate − observed)/observed; NaN when the observed rate is 0.
    pub pct_change_vs_observed: f64,
    pub n: usize,
    pub observed_rate: f64,
    pub model_digest: Option<String>,
    pub bootstrap_index: Option<usize>,
}

pub fn pct_change(rate: f64, observed_rate: f64) -> f64 {
    if observed_rate == 0.0 {
        f64::NAN
    } else {
        100.0 * (rate - observed_rate) / observed_rate
    }
}

impl PolicyEstimate {
    pub fn new(method: Method, count: f64, n: usize, observed_rate: f64) -> Self {
        let rate = if n == 0 { f64::NAN } else { count / n as f64 };
        Self {
            method,
            employment_count: count,
            employment_rate: rate,
            pct_change_vs_observed: pct_change(rate, observed_rate),
            n,
            observed_rate,
            model_digest: None,
            bootstrap_index: None,
        }
    }

    pub fn with_digest(mut self, digest: String) -> Self {
        self.model_digest = Some(digest);
        self
    }

    pub fn with_bootstrap_index(mut self, index: usize) -> Self {
        self.bootstrap_index = Some(index);
        self
    }
}

fn check_matching(matching: &Matching, records: &[RefugeeRecord], n_locations: usize) -> Result<(), EvalError> {
    if matching.len() != records.len() {
        return Err(EvalError::LengthMismatch {
            matching: matching.len(),
            records: records.len(),
        });
    }
    if let Some((refugee, &location)) = matching.assignment().iter().enumerate().find(|(_, &t)| t >= n_locations) {
        return Err(EvalError::LocationOutOfRange {
            refugee,
            location,
            n_locations,
        });
    }
    Ok(())
}

/// Σ_i β̂_{π(i)}(X_i): the fitted model's own forecast for the matching.
pub fn model_based(model: &dyn OutcomePredictor, matching: &Matching, test: &Dataset) -> Result<PolicyEstimate, EvalError> {
    check_matching(matching, test.records(), model.n_locations())?;
    let predictions = test
        .records()
        .par_iter()
        .zip(matching.assignment().par_iter())
        .map(|(r, &t)| model.predict(r, t))
        .collect::<Result<Vec<f64>, _>>()?;
    let count: f64 = predictions.iter().sum();
    Ok(PolicyEstimate::new(Method::ModelBased, count, test.len(), test.observed_rate()))
}

/// Seed used to refit bootstrap replicate `index`.
pub fn bootstrap_fit_seed(seed: u64, index: usize) -> u64 {
    SeedTree::new(seed).child("bootstrap", index as u64).derive("fit", 0)
}

/// Score the fixed `matching` with B models refitted on bootstrap resamples
/// of `train`. With `resample = false` every replicate refits on the
/// unmodified training set. Results are ordered by replicate index.
pub fn bootstrap_model_based(
    train: &Dataset,
    matching: &Matching,
    test: &Dataset,
    config: &TrainConfig,
    replicates: usize,
    seed: u64,
    resample: bool,
) -> Result<Vec<PolicyEstimate>, EvalError> {
    let n = train.len();
    (0..replicates)
        .into_par_iter()
        .map(|b| {
            let sample = if resample {
                let mut rng = SeedTree::new(seed).child("bootstrap", b as u64).rng("rows", 0);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                train.subset(&idx)
            } else {
                train.clone()
            };
            let cfg = config.clone().with_seed(bootstrap_fit_seed(seed, b));
            let model = fit(&sample, &cfg).map_err(|source| EvalError::Bootstrap { index: b, source })?;
            let est = model_based(&model, matching, test)?;
            Ok(PolicyEstimate {
                method: Method::BootstrapModelBased,
                ..est
            }
            .with_digest(model.digest())
            .with_bootstrap_index(b))
        })
        .collect()
}

/// Σ over refugees whose proposed location equals the logged one of
/// Y_i / p_{i,T_i}.
pub fn ipw(matching: &Matching, test: &Dataset) -> Result<PolicyEstimate, EvalError> {
    let (sum, _) = ipw_sums(matching, test)?;
    Ok(PolicyEstimate::new(Method::Ipw, sum, test.len(), test.observed_rate()))
}

/// N · Σ Y_i/p_i / Σ 1/p_i over agreeing refugees. Not one of the reference
/// estimators; offered for exploration. Zero agreements give count 0.
pub fn self_normalized_ipw(matching: &Matching, test: &Dataset) -> Result<PolicyEstimate, EvalError> {
    let (sum, weight) = ipw_sums(matching, test)?;
    let count = if weight > 0.0 { test.len() as f64 * sum / weight } else { 0.0 };
    Ok(PolicyEstimate::new(Method::SelfNormalizedIpw, count, test.len(), test.observed_rate()))
}

fn ipw_sums(matching: &Matching, test: &Dataset) -> Result<(f64, f64), EvalError> {
    check_matching(matching, test.records(), test.n_locations())?;
    let mut sum = 0.0;
    let mut weight = 0.0;
    for (row, (&proposed, &logged)) in matching.assignment().iter().zip(test.locations()).enumerate() {
        let p = test.propensities()[row][logged];
        if !(p > 0.0) {
            return Err(EvalError::NonPositivePropensity { row, value: p });
        }
        if proposed == logged {
            sum += test.outcomes()[row] as f64 / p;
            weight += 1.0 / p;
        }
    }
    Ok((sum, weight))
}

/// Ground-truth expected employment of the matching.
pub fn oracle(model: &CausalModel, matching: &Matching, test: &Dataset) -> Result<PolicyEstimate, EvalError> {
    check_matching(matching, test.records(), model.n_locations())?;
    let count = true_value(model, test.records(), matching)?;
    Ok(PolicyEstimate::new(Method::Oracle, count, test.len(), test.observed_rate()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::dataset_tests::toy_dataset;
    use std::sync::Arc;

    #[test]
    fn pct_change_arithmetic() {
        let e = PolicyEstimate::new(Method::Ipw, 30.0, 100, 0.25);
        assert_eq!(e.employment_rate, 0.3);
        assert!((e.pct_change_vs_observed - 20.0).abs() < 1e-12);
        assert!(PolicyEstimate::new(Method::Ipw, 1.0, 10, 0.0).pct_change_vs_observed.is_nan());
    }

    #[test]
    fn ipw_counts_only_agreements() {
        let data = toy_dataset(2);
        let p: Arc<[f64]> = Arc::from(vec![0.5, 0.5]);
        let test = data.with_assignments(vec![0, 1], vec![1, 0], vec![p.clone(), p]).unwrap();
        assert_eq!(ipw(&Matching::new(vec![0, 1]), &test).unwrap().employment_count, 2.0);
        assert_eq!(ipw(&Matching::new(vec![1, 0]), &test).unwrap().employment_count, 0.0);
        let sn = self_normalized_ipw(&Matching::new(vec![0, 1]), &test).unwrap();
        assert_eq!(sn.employment_count, 1.0);
    }

    #[test]
    fn ipw_is_exact_with_certain_assignment() {
        // A single location logged with probability 1: IPW returns the
        // observed count exactly.
        let data = toy_dataset(6);
        let p: Arc<[f64]> = Arc::from(vec![1.0]);
        let test = Dataset::new(
            data.schema().clone(),
            1,
            data.records().to_vec(),
            vec![0; 6],
            data.outcomes().to_vec(),
            vec![p; 6],
        )
        .unwrap();
        let est = ipw(&Matching::new(vec![0; 6]), &test).unwrap();
        assert_eq!(est.employment_count, test.observed_count());
    }

    #[test]
    fn bootstrap_without_resampling_reproduces_the_direct_fit() {
        // Ridge is deterministic, so any spread with resample = false would
        // come from the harness rather than the data.
        let data = toy_dataset(40);
        let config = TrainConfig::new(crate::learners::Family::Ridge);
        let matching = Matching::new((0..40).map(|i| i % 2).collect());
        let direct = model_based(&fit(&data, &config).unwrap(), &matching, &data).unwrap();
        let fixed = bootstrap_model_based(&data, &matching, &data, &config, 4, 7, false).unwrap();
        assert!(fixed.iter().all(|e| e.employment_count == direct.employment_count));
        let resampled = bootstrap_model_based(&data, &matching, &data, &config, 4, 7, true).unwrap();
        assert!(resampled.iter().any(|e| e.employment_count != direct.employment_count));
        assert_eq!(resampled.iter().map(|e| e.bootstrap_index).collect::<Vec<_>>(), (0..4).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn matching_length_is_checked() {
        let data = toy_dataset(3);
        assert!(matches!(ipw(&Matching::new(vec![0]), &data), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(
            ipw(&Matching::new(vec![0, 0, 7]), &data),
            Err(EvalError::LocationOutOfRange { .. })
        ));
    }
}
